//! Ranking metrics, per-class thresholds, the three-class decision rule,
//! confusion matrices and Monte-Carlo significance of the Gini index.

use std::io::Write;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::ClassLabel;
use crate::error::{Error, Result};
use crate::learners::ClassScores;
use crate::seed;

/// Empirical ROC curve, thresholds descending from `+inf`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// `(false positive rate, true positive rate)`.
    pub points: Vec<(f64, f64)>,
    /// Score at or above which an instance counts as positive at each point.
    pub thresholds: Vec<f64>,
    /// Cumulative `(tp, fp)` counts at each point.
    counts: Vec<(u64, u64)>,
    n_pos: u64,
    n_neg: u64,
}

fn class_counts(positives: &[bool]) -> Result<(u64, u64)> {
    let p = positives.iter().filter(|&&b| b).count() as u64;
    let n = positives.len() as u64 - p;
    if p == 0 || n == 0 {
        return Err(Error::UndefinedMetric(format!(
            "ranking metric needs both classes, got {p} positive and {n} negative"
        )));
    }
    Ok((p, n))
}

pub fn roc_curve(scores: &[f64], positives: &[bool]) -> Result<RocCurve> {
    if scores.len() != positives.len() {
        return Err(Error::Validation(format!(
            "{} scores but {} labels",
            scores.len(),
            positives.len()
        )));
    }
    let (n_pos, n_neg) = class_counts(positives)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![(0.0, 0.0)];
    let mut thresholds = vec![f64::INFINITY];
    let mut counts = vec![(0, 0)];
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if positives[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / n_neg as f64, tp as f64 / n_pos as f64));
        thresholds.push(s);
        counts.push((tp, fp));
    }
    Ok(RocCurve {
        points,
        thresholds,
        counts,
        n_pos,
        n_neg,
    })
}

impl RocCurve {
    /// Trapezoidal area under the curve.
    pub fn auc(&self) -> f64 {
        // twice the area in count units, exact for realistic sample sizes
        let twice: u128 = self
            .counts
            .windows(2)
            .map(|w| (w[1].1 - w[0].1) as u128 * (w[1].0 + w[0].0) as u128)
            .sum();
        twice as f64 / (2.0 * self.n_pos as f64 * self.n_neg as f64)
    }

    pub fn gini(&self) -> f64 {
        2.0 * self.auc() - 1.0
    }
}

/// `2 * AUC - 1`, ties counted as half.
pub fn gini_index(scores: &[f64], positives: &[bool]) -> Result<f64> {
    Ok(roc_curve(scores, positives)?.gini())
}

/// One-vs-all Ginis in (F, G, W) order and their unweighted mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GiniSummary {
    pub per_class: [f64; 3],
    pub mean: f64,
}

impl GiniSummary {
    pub fn from_per_class(per_class: [f64; 3]) -> Self {
        GiniSummary {
            per_class,
            mean: per_class.iter().sum::<f64>() / 3.0,
        }
    }
}

fn one_vs_all(labels: &[ClassLabel], class: ClassLabel) -> Vec<bool> {
    labels.iter().map(|&l| l == class).collect()
}

fn require_all_classes(labels: &[ClassLabel]) -> Result<()> {
    let hist = crate::dataset::label_histogram(labels);
    for c in ClassLabel::ALL {
        if hist[c.index()] == 0 {
            return Err(Error::UndefinedMetric(format!("class {c} is absent from the labels")));
        }
    }
    if hist.iter().filter(|&&h| h > 0).count() < 2 {
        return Err(Error::UndefinedMetric("labels contain a single class".into()));
    }
    Ok(())
}

pub fn averaged_gini(scores: &ClassScores, labels: &[ClassLabel]) -> Result<GiniSummary> {
    if scores.len() != labels.len() {
        return Err(Error::Validation(format!(
            "{} score rows but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    require_all_classes(labels)?;
    let mut per_class = [0.0; 3];
    for c in ClassLabel::ALL {
        per_class[c.index()] = gini_index(&scores.column(c), &one_vs_all(labels, c))?;
    }
    Ok(GiniSummary::from_per_class(per_class))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThresholdMethod {
    #[default]
    Youden,
    ClosestTopLeft,
}

impl std::str::FromStr for ThresholdMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "youden" => Ok(ThresholdMethod::Youden),
            "closest-top-left" => Ok(ThresholdMethod::ClosestTopLeft),
            other => Err(Error::Validation(format!("unknown threshold method {other:?}"))),
        }
    }
}

/// Best attained score to use as a `score >= tau` cut-off. Ties go to the
/// higher threshold.
pub fn optimal_threshold(scores: &[f64], positives: &[bool], method: ThresholdMethod) -> Result<f64> {
    let roc = roc_curve(scores, positives)?;
    let (p, n) = (roc.n_pos as i128, roc.n_neg as i128);
    let mut best: Option<(i128, f64)> = None;
    for (&(tp, fp), &tau) in roc.counts.iter().zip(&roc.thresholds).skip(1) {
        let (tp, fp) = (tp as i128, fp as i128);
        // larger is better; both criteria scaled to integers
        let key = match method {
            ThresholdMethod::Youden => tp * n - fp * p,
            ThresholdMethod::ClosestTopLeft => -(fp * fp * p * p + (p - tp) * (p - tp) * n * n),
        };
        if best.is_none_or(|(k, _)| key > k) {
            best = Some((key, tau));
        }
    }
    Ok(best.expect("at least one attained score").1)
}

/// Min-max map to [0, 1]; a constant vector maps to 0.5.
pub fn normalize_scores(scores: &[f64]) -> Vec<f64> {
    let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi.partial_cmp(&lo) != Some(std::cmp::Ordering::Greater) {
        return vec![0.5; scores.len()];
    }
    scores.iter().map(|s| (s - lo) / (hi - lo)).collect()
}

/// Normalizes every class column independently.
pub fn normalize_class_scores(scores: &ClassScores) -> ClassScores {
    let cols = scores.columns().map(|c| normalize_scores(&c));
    ClassScores::from_columns(&cols, true)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSet {
    #[serde(rename = "F")]
    pub tau_f: f64,
    #[serde(rename = "G")]
    pub tau_g: f64,
    #[serde(rename = "W")]
    pub tau_w: f64,
}

impl ThresholdSet {
    pub fn new(tau_f: f64, tau_g: f64, tau_w: f64) -> Self {
        ThresholdSet { tau_f, tau_g, tau_w }
    }

    pub fn get(&self, class: ClassLabel) -> f64 {
        match class {
            ClassLabel::F => self.tau_f,
            ClassLabel::G => self.tau_g,
            ClassLabel::W => self.tau_w,
        }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.tau_f, self.tau_g, self.tau_w]
    }
}

/// Fits one threshold per class on its one-vs-all ROC.
pub fn fit_thresholds(scores: &ClassScores, labels: &[ClassLabel], method: ThresholdMethod) -> Result<ThresholdSet> {
    require_all_classes(labels)?;
    let mut tau = [0.0; 3];
    for c in ClassLabel::ALL {
        tau[c.index()] = optimal_threshold(&scores.column(c), &one_vs_all(labels, c), method)?;
    }
    Ok(ThresholdSet::new(tau[0], tau[1], tau[2]))
}

/// Order in which equal maxima are resolved.
const TIE_ORDER: [ClassLabel; 3] = [ClassLabel::W, ClassLabel::F, ClassLabel::G];

/// A class is flagged when its score reaches its threshold. A single flag
/// decides; otherwise the highest score wins, ties resolved W, then F, then G.
pub fn predict_one(scores: &[f64; 3], taus: &ThresholdSet) -> ClassLabel {
    let flagged: Vec<ClassLabel> = ClassLabel::ALL
        .into_iter()
        .filter(|&c| scores[c.index()] >= taus.get(c))
        .collect();
    if let [only] = flagged[..] {
        return only;
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    TIE_ORDER
        .into_iter()
        .find(|c| scores[c.index()] == max)
        .unwrap_or(ClassLabel::W)
}

pub fn predict_classes(scores: &ClassScores, taus: &ThresholdSet) -> Vec<ClassLabel> {
    scores.rows.iter().map(|r| predict_one(r, taus)).collect()
}

/// Counts with rows = actual class, columns = predicted class, (F, G, W).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 3]; 3],
}

pub fn confusion_matrix(actual: &[ClassLabel], predicted: &[ClassLabel]) -> Result<ConfusionMatrix> {
    if actual.len() != predicted.len() {
        return Err(Error::Validation(format!(
            "{} actual labels but {} predictions",
            actual.len(),
            predicted.len()
        )));
    }
    let mut m = ConfusionMatrix::default();
    for (a, p) in actual.iter().zip(predicted) {
        m.counts[a.index()][p.index()] += 1;
    }
    Ok(m)
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..3).map(|i| self.counts[i][i]).sum()
    }

    pub fn transposed(&self) -> ConfusionMatrix {
        let mut t = ConfusionMatrix::default();
        for (i, row) in self.counts.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                t.counts[j][i] = v;
            }
        }
        t
    }

    fn row_sum(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    fn col_sum(&self, j: usize) -> u64 {
        self.counts.iter().map(|r| r[j]).sum()
    }
}

/// Per-class rates; `None` where a denominator is zero.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f_measure: Option<f64>,
    pub false_positive_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    #[serde(rename = "F")]
    pub f: ClassMetrics,
    #[serde(rename = "G")]
    pub g: ClassMetrics,
    #[serde(rename = "W")]
    pub w: ClassMetrics,
    /// Mean over the classes where each rate is defined.
    #[serde(rename = "macro")]
    pub macro_avg: ClassMetrics,
    pub accuracy: Option<f64>,
}

impl ClassReport {
    pub fn class(&self, c: ClassLabel) -> &ClassMetrics {
        match c {
            ClassLabel::F => &self.f,
            ClassLabel::G => &self.g,
            ClassLabel::W => &self.w,
        }
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

fn mean_defined(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let defined: Vec<f64> = values.flatten().collect();
    (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
}

/// Rates under the rows = actual, columns = predicted reading of `m`.
pub fn classification_report(m: &ConfusionMatrix) -> ClassReport {
    let total = m.total();
    let per: Vec<ClassMetrics> = (0..3)
        .map(|c| {
            let hit = m.counts[c][c];
            let precision = ratio(hit, m.col_sum(c));
            let recall = ratio(hit, m.row_sum(c));
            let f_measure = match (precision, recall) {
                (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
                _ => None,
            };
            ClassMetrics {
                precision,
                recall,
                f_measure,
                false_positive_rate: ratio(m.col_sum(c) - hit, total - m.row_sum(c)),
            }
        })
        .collect();
    let macro_avg = ClassMetrics {
        precision: mean_defined(per.iter().map(|p| p.precision)),
        recall: mean_defined(per.iter().map(|p| p.recall)),
        f_measure: mean_defined(per.iter().map(|p| p.f_measure)),
        false_positive_rate: mean_defined(per.iter().map(|p| p.false_positive_rate)),
    };
    ClassReport {
        f: per[0],
        g: per[1],
        w: per[2],
        macro_avg,
        accuracy: ratio(m.trace(), total),
    }
}

/// Rates under both orientations of the same matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualReport {
    pub rows_actual: ClassReport,
    pub rows_predicted: ClassReport,
}

pub fn dual_report(m: &ConfusionMatrix) -> DualReport {
    DualReport {
        rows_actual: classification_report(m),
        rows_predicted: classification_report(&m.transposed()),
    }
}

const SIM_CHUNK: usize = 256;

/// Null distribution of Gini indices for a fixed label vector under
/// independent standard-normal scores.
#[derive(Debug, Clone, PartialEq)]
pub struct NullDistribution {
    /// Sorted simulated one-vs-all Ginis per class.
    pub per_class: [Vec<f64>; 3],
    /// Sorted simulated averaged Ginis.
    pub averaged: Vec<f64>,
}

impl NullDistribution {
    /// Simulations run in fixed chunks seeded by `mix(seed, chunk)`, so the
    /// result does not depend on the number of worker threads.
    pub fn simulate(labels: &[ClassLabel], n_sim: usize, seed: u64) -> Result<Self> {
        if n_sim < 100 {
            return Err(Error::Validation(format!("n_sim must be at least 100, got {n_sim}")));
        }
        require_all_classes(labels)?;
        let masks = ClassLabel::ALL.map(|c| one_vs_all(labels, c));
        let n_chunks = n_sim.div_ceil(SIM_CHUNK);
        let chunks: Vec<Vec<[f64; 3]>> = (0..n_chunks)
            .into_par_iter()
            .map(|chunk| {
                let mut rng = seed::rng(seed::mix(seed, chunk as u64));
                let len = SIM_CHUNK.min(n_sim - chunk * SIM_CHUNK);
                let mut col = vec![0.0; labels.len()];
                (0..len)
                    .map(|_| {
                        let mut g = [0.0; 3];
                        for (c, mask) in masks.iter().enumerate() {
                            for v in col.iter_mut() {
                                *v = StandardNormal.sample(&mut rng);
                            }
                            g[c] = gini_index(&col, mask).expect("labels checked");
                        }
                        g
                    })
                    .collect()
            })
            .collect();
        let sims: Vec<[f64; 3]> = chunks.into_iter().flatten().collect();
        let mut per_class: [Vec<f64>; 3] = [0, 1, 2].map(|c| sims.iter().map(|g| g[c]).collect());
        let mut averaged: Vec<f64> = sims.iter().map(|g| (g[0] + g[1] + g[2]) / 3.0).collect();
        for v in per_class.iter_mut() {
            v.sort_by(f64::total_cmp);
        }
        averaged.sort_by(f64::total_cmp);
        Ok(NullDistribution { per_class, averaged })
    }

    pub fn n_sim(&self) -> usize {
        self.averaged.len()
    }

    /// `(1 + #{sim >= observed}) / (1 + n_sim)`.
    fn upper_tail(sorted: &[f64], observed: f64) -> f64 {
        let below = sorted.partition_point(|&s| s < observed);
        (1 + sorted.len() - below) as f64 / (1 + sorted.len()) as f64
    }

    pub fn p_value(&self, observed_mean: f64) -> f64 {
        Self::upper_tail(&self.averaged, observed_mean)
    }

    pub fn class_p_value(&self, class: ClassLabel, observed: f64) -> f64 {
        Self::upper_tail(&self.per_class[class.index()], observed)
    }

    pub fn class_p_values(&self, observed: &[f64; 3]) -> [f64; 3] {
        ClassLabel::ALL.map(|c| self.class_p_value(c, observed[c.index()]))
    }
}

/// Monte-Carlo p-value of an observed averaged Gini.
pub fn gini_pvalue(observed: f64, labels: &[ClassLabel], n_sim: usize, seed: u64) -> Result<f64> {
    Ok(NullDistribution::simulate(labels, n_sim, seed)?.p_value(observed))
}

/// ROC points of the three one-vs-all curves as `class,threshold,fpr,tpr`.
pub fn write_roc_csv<W: Write>(out: W, scores: &ClassScores, labels: &[ClassLabel]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["class", "threshold", "fpr", "tpr"])?;
    for c in ClassLabel::ALL {
        let roc = roc_curve(&scores.column(c), &one_vs_all(labels, c))?;
        for (&(fpr, tpr), &tau) in roc.points.iter().zip(&roc.thresholds) {
            w.write_record([c.as_str().to_string(), tau.to_string(), fpr.to_string(), tpr.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Machine-readable evaluation summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_class: ClassReport,
    pub transposed: ClassReport,
    pub accuracy: Option<f64>,
    pub thresholds: ThresholdSet,
    pub confusion_matrix: ConfusionMatrix,
    pub gini: GiniSummary,
    pub p_values: Option<PValues>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PValues {
    pub per_class: [f64; 3],
    pub averaged: f64,
}

impl MetricsReport {
    pub fn new(
        confusion_matrix: ConfusionMatrix,
        thresholds: ThresholdSet,
        gini: GiniSummary,
        p_values: Option<PValues>,
    ) -> Self {
        let dual = dual_report(&confusion_matrix);
        MetricsReport {
            accuracy: dual.rows_actual.accuracy,
            per_class: dual.rows_actual,
            transposed: dual.rows_predicted,
            thresholds,
            confusion_matrix,
            gini,
            p_values,
        }
    }
}
