//! End-to-end driver: outer splits, tuning, baggings, ensemble evaluation,
//! selection and the winner's thresholded report.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::bagging::{bagging_score, build_bagging, BaggedModel, BaggingConfig};
use crate::dataset::{split_labels, ClassLabel, FeatureMatrix, Samples, Split, SplitPlan, Stage};
use crate::ensemble::{
    enumerate_ensembles, evaluate_all, null_distributions, select_best, EnsembleId, SelectionMode, SplitEvaluation,
    SplitScores,
};
use crate::error::{Error, Result};
use crate::learners::{model_seed, ClassScores, HyperParams, LearnerKind};
use crate::metrics::{
    confusion_matrix, fit_thresholds, normalize_class_scores, predict_classes, ConfusionMatrix, MetricsReport, PValues,
    ThresholdMethod, ThresholdSet,
};
use crate::seed;
use crate::tuning::{grid_search, GridProfile, GridResult, ParamGrid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub train_fraction: f64,
    pub n_outer_splits: usize,
    pub n_subsplits: usize,
    pub sub_train_fraction: f64,
    pub gini_admission_threshold: f64,
    pub alpha: f64,
    pub n_sim: usize,
    pub selection_mode: SelectionMode,
    pub threshold_method: ThresholdMethod,
    pub stage: Stage,
    pub learners: Vec<LearnerKind>,
    pub tune: bool,
    pub tuning_splits: usize,
    pub grid_profile: GridProfile,
    /// Fixed hyper-parameters, used for kinds that are not tuned.
    pub params: BTreeMap<LearnerKind, HyperParams>,
    pub importance_repeats: usize,
    pub paths: RunPaths,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunPaths {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input_csv: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub schema: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub features: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            train_fraction: 0.7,
            n_outer_splits: 6,
            n_subsplits: 200,
            sub_train_fraction: 0.7,
            gini_admission_threshold: 0.5,
            alpha: 0.05,
            n_sim: 10_000,
            selection_mode: SelectionMode::Strict,
            threshold_method: ThresholdMethod::Youden,
            stage: Stage::Stage20,
            learners: LearnerKind::ALL.to_vec(),
            tune: true,
            tuning_splits: 5,
            grid_profile: GridProfile::Epm,
            params: BTreeMap::new(),
            importance_repeats: 10,
            paths: RunPaths::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Validation(m));
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return fail(format!("train_fraction {} outside (0, 1)", self.train_fraction));
        }
        if self.n_outer_splits == 0 {
            return fail("n_outer_splits must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return fail(format!("alpha {} outside [0, 1]", self.alpha));
        }
        if !(100..=1_000_000).contains(&self.n_sim) {
            return fail(format!("n_sim {} outside [100, 1000000]", self.n_sim));
        }
        if self.tuning_splits == 0 {
            return fail("tuning_splits must be at least 1".into());
        }
        if self.importance_repeats == 0 {
            return fail("importance_repeats must be at least 1".into());
        }
        if self.learners.is_empty() {
            return fail("at least one learner is required".into());
        }
        let mut seen = self.learners.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.learners.len() {
            return fail("learners must not repeat".into());
        }
        for (kind, p) in &self.params {
            p.validate(*kind)?;
        }
        self.bagging_config(0, LearnerKind::Knn).validate()
    }

    pub fn bagging_config(&self, split: usize, kind: LearnerKind) -> BaggingConfig {
        BaggingConfig {
            n_subsplits: self.n_subsplits,
            sub_train_fraction: self.sub_train_fraction,
            gini_admission_threshold: self.gini_admission_threshold,
            seed: model_seed(self.seed, split as u64, kind),
        }
    }

    pub fn fixed_params(&self, kind: LearnerKind) -> HyperParams {
        self.params.get(&kind).cloned().unwrap_or_else(|| HyperParams::for_kind(kind))
    }
}

/// Outer split `s` is seeded by `mix_all(seed, [1, s])`; split 0 is the
/// initial split.
pub fn outer_splits(labels: &[ClassLabel], cfg: &RunConfig) -> Result<Vec<Split>> {
    (0..cfg.n_outer_splits)
        .map(|s| split_labels(labels, &SplitPlan::stratified(cfg.train_fraction, seed::mix_all(cfg.seed, &[1, s as u64]))))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningSummary {
    pub learner: LearnerKind,
    pub tuned: bool,
    pub params: HyperParams,
    pub objective: Option<f64>,
    pub grid_points: usize,
    pub failed_points: usize,
}

/// Hyper-parameters per kind, tuned on `train` when `cfg.tune` is set.
pub fn tune_all(train: &Samples, cfg: &RunConfig) -> Result<Vec<TuningSummary>> {
    cfg.learners
        .iter()
        .map(|&kind| tune_kind(train, kind, cfg, None).map(|(s, _)| s))
        .collect()
}

/// The standard grid for `kind` under `cfg`.
pub fn standard_grid(kind: LearnerKind, cfg: &RunConfig) -> ParamGrid {
    ParamGrid::standard(
        kind,
        cfg.grid_profile,
        cfg.tuning_splits,
        seed::mix_all(cfg.seed, &[2, kind.index() as u64]),
    )
}

/// Tunes one kind on `grid`, or on its standard grid. Without `cfg.tune`
/// the fixed parameters are returned and no search runs.
pub fn tune_kind(
    train: &Samples,
    kind: LearnerKind,
    cfg: &RunConfig,
    grid: Option<&ParamGrid>,
) -> Result<(TuningSummary, Option<GridResult>)> {
    if !cfg.tune {
        let s = TuningSummary {
            learner: kind,
            tuned: false,
            params: cfg.fixed_params(kind),
            objective: None,
            grid_points: 0,
            failed_points: 0,
        };
        return Ok((s, None));
    }
    let standard;
    let grid = match grid {
        Some(g) => {
            if g.kind != kind {
                return Err(Error::Validation(format!("grid is for {}, expected {kind}", g.kind)));
            }
            g
        }
        None => {
            standard = standard_grid(kind, cfg);
            &standard
        }
    };
    let r = grid_search(grid, train)?;
    let s = TuningSummary {
        learner: kind,
        tuned: true,
        objective: r.table[r.best_index].objective,
        grid_points: r.table.len(),
        failed_points: r.table.iter().filter(|p| p.failed()).count(),
        params: r.best.clone(),
    };
    Ok((s, Some(r)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaggingSummary {
    pub split: usize,
    pub learner: LearnerKind,
    pub admitted: usize,
    pub candidates: usize,
    pub error: Option<String>,
}

/// Builds one bagging per kind on `split`'s train rows and scores its test
/// rows. Each built bagging is handed to `sink` before being dropped.
pub fn build_split_baggings(
    data: &Samples,
    split_index: usize,
    split: &Split,
    tuned: &[TuningSummary],
    cfg: &RunConfig,
    sink: &mut dyn FnMut(usize, &BaggedModel) -> Result<()>,
) -> Result<(SplitScores, Vec<BaggingSummary>)> {
    let train = data.subset(&split.train_indices);
    let test = data.subset(&split.test_indices);
    let mut scores = SplitScores::new(split_index, test.labels.clone());
    let mut summaries = Vec::new();
    for t in tuned {
        let bagging = build_bagging(t.learner, &t.params, &train, &cfg.bagging_config(split_index, t.learner));
        let outcome = bagging.and_then(|b| {
            sink(split_index, &b)?;
            Ok((bagging_score(&b, &test)?, b.admitted()))
        });
        match outcome {
            Ok((s, admitted)) => {
                scores.insert(t.learner, s);
                summaries.push(BaggingSummary {
                    split: split_index,
                    learner: t.learner,
                    admitted,
                    candidates: cfg.n_subsplits,
                    error: None,
                });
            }
            Err(e @ (Error::EmptyBagging { .. } | Error::Training { .. })) => summaries.push(BaggingSummary {
                split: split_index,
                learner: t.learner,
                admitted: 0,
                candidates: cfg.n_subsplits,
                error: Some(e.to_string()),
            }),
            Err(e) => return Err(e),
        }
    }
    Ok((scores, summaries))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedRow {
    pub rank: usize,
    pub bitmask: u8,
    pub members: Vec<LearnerKind>,
    pub mean_gini: f64,
    pub significant: bool,
    pub per_split: Vec<SplitEvaluation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdedResult {
    pub thresholds: ThresholdSet,
    pub confusion_matrix: ConfusionMatrix,
    pub accuracy: f64,
    pub predictions: Vec<ClassLabel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WinnerReport {
    pub bitmask: u8,
    pub members: Vec<LearnerKind>,
    pub mean_gini: f64,
    pub thresholds: ThresholdSet,
    /// Rows = actual class, columns = predicted, (F, G, W).
    pub confusion_matrix: ConfusionMatrix,
    pub class_report: MetricsReport,
}

/// One row of the base-learner comparison, the ensemble included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub model: String,
    pub mean_gini: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub mode: SelectionMode,
    pub alpha: f64,
    pub n_sim: usize,
    pub gini_admission_threshold: f64,
    pub threshold_method: ThresholdMethod,
    pub splits: usize,
    pub n_ensembles: usize,
    pub notes: Vec<String>,
    pub winner: Option<WinnerReport>,
    pub no_winner_reason: Option<String>,
    pub ranked: Vec<RankedRow>,
    pub base_learners: Vec<ComparisonRow>,
}

/// Combined, re-normalized scores thresholded on their own ROC.
pub fn threshold_and_predict(combined: &ClassScores, labels: &[ClassLabel], method: ThresholdMethod) -> Result<ThresholdedResult> {
    let scores = normalize_class_scores(combined);
    let thresholds = fit_thresholds(&scores, labels, method)?;
    let predictions = predict_classes(&scores, &thresholds);
    let cm = confusion_matrix(labels, &predictions)?;
    Ok(ThresholdedResult {
        thresholds,
        accuracy: cm.trace() as f64 / cm.total().max(1) as f64,
        confusion_matrix: cm,
        predictions,
    })
}

/// Kinds with a bagging on every split.
pub fn complete_kinds(splits: &[SplitScores]) -> Vec<LearnerKind> {
    LearnerKind::ALL
        .into_iter()
        .filter(|&k| splits.iter().all(|s| s.get(k).is_some()))
        .collect()
}

/// Evaluates every ensemble of the kinds present on all splits, selects the
/// winner and thresholds it on the initial split.
pub fn select(splits: &[SplitScores], cfg: &RunConfig) -> Result<SelectionReport> {
    let initial = splits
        .iter()
        .find(|s| s.split == 0)
        .ok_or_else(|| Error::Validation("split 0 (the initial split) is missing".into()))?;
    let mut notes = Vec::new();
    let available = complete_kinds(splits);
    for k in &cfg.learners {
        if !available.contains(k) {
            notes.push(format!("{k} has no bagging on at least one split and is left out of the enumeration"));
        }
    }
    if available.is_empty() {
        return Err(Error::Validation("no learner produced a bagging on every split".into()));
    }
    let ids = enumerate_ensembles(&available)?;
    notes.push(format!(
        "{} non-empty ensembles of {} baggings evaluated; counting the empty set as well gives {}",
        ids.len(),
        available.len(),
        ids.len() + 1
    ));
    notes.push(format!(
        "thresholds fitted per class ({}) on the initial split's test scores after re-normalizing the combined scores",
        match cfg.threshold_method {
            ThresholdMethod::Youden => "youden",
            ThresholdMethod::ClosestTopLeft => "closest-top-left",
        }
    ));
    let nulls = null_distributions(splits, cfg.n_sim, seed::mix(cfg.seed, 3))?;
    let evals = evaluate_all(&ids, splits, &nulls)?;
    let selection = select_best(&evals, cfg.alpha, cfg.selection_mode);

    let winner = match selection.winner {
        Some(id) => {
            let eval = evals.iter().find(|e| e.id == id).expect("winner was evaluated");
            let t = threshold_and_predict(&initial.combined(id)?, &initial.labels, cfg.threshold_method)?;
            let first = eval.per_split.iter().find(|s| s.split == 0).expect("split 0 evaluated");
            let class_report = MetricsReport::new(
                t.confusion_matrix,
                t.thresholds,
                first.gini,
                Some(PValues {
                    per_class: first.p_values,
                    averaged: first.p_value_averaged,
                }),
            );
            Some(WinnerReport {
                bitmask: id.bits(),
                members: id.members(),
                mean_gini: eval.mean_averaged_gini,
                thresholds: t.thresholds,
                confusion_matrix: t.confusion_matrix,
                class_report,
            })
        }
        None => None,
    };

    let mut base_learners = Vec::new();
    for &k in &available {
        let id = EnsembleId::from_kinds(&[k])?;
        let eval = evals.iter().find(|e| e.id == id).expect("singletons are enumerated");
        let t = threshold_and_predict(&initial.combined(id)?, &initial.labels, cfg.threshold_method)?;
        base_learners.push(ComparisonRow {
            model: k.name().to_string(),
            mean_gini: eval.mean_averaged_gini,
            accuracy: t.accuracy,
        });
    }
    if let Some(w) = &winner {
        base_learners.push(ComparisonRow {
            model: format!("Ensemble ({})", EnsembleId::from_bits(w.bitmask)?),
            mean_gini: w.mean_gini,
            accuracy: w.class_report.accuracy.unwrap_or(0.0),
        });
    }

    let ranked = selection
        .ranked
        .iter()
        .map(|r| RankedRow {
            rank: r.rank,
            bitmask: r.evaluation.id.bits(),
            members: r.evaluation.id.members(),
            mean_gini: r.evaluation.mean_averaged_gini,
            significant: r.significant,
            per_split: r.evaluation.per_split.clone(),
        })
        .collect();

    Ok(SelectionReport {
        mode: cfg.selection_mode,
        alpha: cfg.alpha,
        n_sim: cfg.n_sim,
        gini_admission_threshold: cfg.gini_admission_threshold,
        threshold_method: cfg.threshold_method,
        splits: splits.len(),
        n_ensembles: ids.len(),
        notes,
        winner,
        no_winner_reason: selection.no_winner_reason,
        ranked,
        base_learners,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineOutcome {
    pub tuning: Vec<TuningSummary>,
    pub baggings: Vec<BaggingSummary>,
    pub split_scores: Vec<SplitScores>,
    pub report: SelectionReport,
}

/// Runs every stage in memory.
pub fn run_pipeline(data: &FeatureMatrix, cfg: &RunConfig) -> Result<PipelineOutcome> {
    run_pipeline_with(&data.all_samples(), cfg, &mut |_, _| Ok(()))
}

pub fn run_pipeline_with(
    samples: &Samples,
    cfg: &RunConfig,
    sink: &mut dyn FnMut(usize, &BaggedModel) -> Result<()>,
) -> Result<PipelineOutcome> {
    cfg.validate()?;
    let splits = outer_splits(&samples.labels, cfg)?;
    let tuning = tune_all(&samples.subset(&splits[0].train_indices), cfg)?;
    let mut split_scores = Vec::with_capacity(splits.len());
    let mut baggings = Vec::new();
    for (i, split) in splits.iter().enumerate() {
        let (scores, summaries) = build_split_baggings(samples, i, split, &tuning, cfg, sink)?;
        split_scores.push(scores);
        baggings.extend(summaries);
    }
    let report = select(&split_scores, cfg)?;
    Ok(PipelineOutcome {
        tuning,
        baggings,
        split_scores,
        report,
    })
}
