//! Grid search maximizing the mean averaged Gini over stratified splits.

use std::io::Write;
use std::path::Path;

use indexmap::IndexMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{split_labels, Samples, SplitPlan};
use crate::error::{Error, Result};
use crate::learners::{self, HyperParams, LearnerKind};
use crate::metrics::averaged_gini;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Bool(bool),
    Number(f64),
}

impl std::fmt::Display for ParamValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ParamValue::Bool(b) => write!(f, "{b}"),
            ParamValue::Number(x) => write!(f, "{x}"),
        }
    }
}

fn default_n_splits() -> usize {
    5
}

fn default_train_fraction() -> f64 {
    0.7
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamGrid {
    pub kind: LearnerKind,
    /// Axis name to candidate values, enumerated row-major in declared order.
    #[serde(default)]
    pub axes: IndexMap<String, Vec<ParamValue>>,
    #[serde(default = "default_n_splits")]
    pub n_splits: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
}

/// Axis names accepted for each kind.
fn known_axes(kind: LearnerKind) -> &'static [&'static str] {
    match kind {
        LearnerKind::Knn => &["k"],
        LearnerKind::NaiveBayes => &["usekernel"],
        LearnerKind::LogisticRegression => &[],
        LearnerKind::RandomForest => &["mtry", "ntrees"],
        LearnerKind::SvmRbf => &["C", "sigma"],
        LearnerKind::Nn1 | LearnerKind::Nn2 | LearnerKind::Nn3 => &["neurons", "layers"],
    }
}

/// Parameter ranges for the two kinds of data the grids were designed for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GridProfile {
    /// Small course-level data with many task columns.
    Epm,
    /// Large cohort with few task columns.
    Cohort,
}

fn numbers(v: impl IntoIterator<Item = f64>) -> Vec<ParamValue> {
    v.into_iter().map(ParamValue::Number).collect()
}

impl ParamGrid {
    pub fn new(kind: LearnerKind, axes: IndexMap<String, Vec<ParamValue>>, n_splits: usize, seed: u64) -> Self {
        ParamGrid {
            kind,
            axes,
            n_splits,
            seed,
            train_fraction: default_train_fraction(),
        }
    }

    /// The published tuning ranges for `kind`.
    pub fn standard(kind: LearnerKind, profile: GridProfile, n_splits: usize, seed: u64) -> Self {
        let mut axes = IndexMap::new();
        match kind {
            LearnerKind::Knn => {
                axes.insert("k".into(), numbers((5..=43).step_by(2).map(f64::from)));
            }
            LearnerKind::NaiveBayes => {
                axes.insert("usekernel".into(), vec![ParamValue::Bool(true), ParamValue::Bool(false)]);
            }
            LearnerKind::LogisticRegression => {}
            LearnerKind::RandomForest => {
                let hi = match profile {
                    GridProfile::Epm => 12,
                    GridProfile::Cohort => 4,
                };
                axes.insert("mtry".into(), numbers((2..=hi).map(f64::from)));
            }
            LearnerKind::SvmRbf => {
                axes.insert("C".into(), numbers([0.25, 0.5, 1.0]));
                let sigma = match profile {
                    GridProfile::Epm => [0.05, 0.1, 0.15, 0.2, 0.25],
                    GridProfile::Cohort => [0.5, 1.25, 2.0, 2.75, 3.5],
                };
                axes.insert("sigma".into(), numbers(sigma));
            }
            LearnerKind::Nn1 | LearnerKind::Nn2 | LearnerKind::Nn3 => {
                axes.insert("neurons".into(), numbers([5.0]));
            }
        }
        ParamGrid::new(kind, axes, n_splits, seed)
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let grid: ParamGrid = serde_json::from_reader(std::io::BufReader::new(std::fs::File::open(path)?))?;
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_splits == 0 {
            return Err(Error::Validation("grid n_splits must be at least 1".into()));
        }
        let known = known_axes(self.kind);
        for (name, values) in &self.axes {
            if !known.contains(&name.as_str()) {
                return Err(Error::Validation(format!(
                    "axis {name:?} does not apply to {}; expected one of {known:?}",
                    self.kind
                )));
            }
            if values.is_empty() {
                return Err(Error::Validation(format!("axis {name:?} has no values")));
            }
        }
        Ok(())
    }

    pub fn size(&self) -> usize {
        self.axes.values().map(Vec::len).product()
    }

    /// Grid points, last axis varying fastest.
    pub fn points(&self) -> Vec<IndexMap<String, ParamValue>> {
        let mut out = vec![IndexMap::new()];
        for (name, values) in &self.axes {
            out = out
                .into_iter()
                .flat_map(|p| {
                    values.iter().map(move |v| {
                        let mut q = p.clone();
                        q.insert(name.clone(), *v);
                        q
                    })
                })
                .collect();
        }
        out
    }
}

fn as_count(name: &str, v: ParamValue) -> Result<usize> {
    match v {
        ParamValue::Number(x) if x >= 1.0 && x.fract() == 0.0 && x <= u32::MAX as f64 => Ok(x as usize),
        other => Err(Error::Validation(format!("{name} must be a positive integer, got {other}"))),
    }
}

fn as_positive(name: &str, v: ParamValue) -> Result<f64> {
    match v {
        ParamValue::Number(x) if x > 0.0 && x.is_finite() => Ok(x),
        other => Err(Error::Validation(format!("{name} must be a positive number, got {other}"))),
    }
}

/// Hyper-parameters for `kind` with the point's axes applied.
pub fn apply_point(kind: LearnerKind, point: &IndexMap<String, ParamValue>) -> Result<HyperParams> {
    let mut p = HyperParams::for_kind(kind);
    for (name, &v) in point {
        match name.as_str() {
            "k" => p.knn_k = as_count(name, v)?,
            "usekernel" => match v {
                ParamValue::Bool(b) => p.nb_usekernel = b,
                other => return Err(Error::Validation(format!("usekernel must be a boolean, got {other}"))),
            },
            "mtry" => p.rf_mtry = Some(as_count(name, v)?),
            "ntrees" => p.rf_ntrees = as_count(name, v)?,
            "C" => p.svm_c = as_positive(name, v)?,
            "sigma" => p.svm_sigma = as_positive(name, v)?,
            "neurons" => p.nn_neurons_per_layer = as_count(name, v)?,
            "layers" => p.nn_layers = as_count(name, v)?,
            other => return Err(Error::Validation(format!("unknown axis {other:?}"))),
        }
    }
    p.validate(kind)?;
    Ok(p)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub index: usize,
    pub values: IndexMap<String, ParamValue>,
    /// Mean over splits of the averaged Gini; absent when the point failed.
    pub objective: Option<f64>,
    pub error: Option<String>,
}

impl GridPoint {
    /// Failed points rank as negative infinity.
    pub fn objective_value(&self) -> f64 {
        self.objective.unwrap_or(f64::NEG_INFINITY)
    }

    pub fn failed(&self) -> bool {
        self.objective.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub kind: LearnerKind,
    pub best: HyperParams,
    pub best_index: usize,
    pub n_splits: usize,
    pub table: Vec<GridPoint>,
}

fn evaluate_point(grid: &ParamGrid, index: usize, params: &HyperParams, data: &Samples) -> Result<f64> {
    let mut total = 0.0;
    for s in 0..grid.n_splits {
        let plan = SplitPlan::stratified(grid.train_fraction, seed::mix(grid.seed, s as u64));
        let split = split_labels(&data.labels, &plan)?;
        let model_seed = seed::mix_all(grid.seed, &[index as u64, s as u64, 1]);
        let model = learners::train(grid.kind, params, &data.subset(&split.train_indices), model_seed)?;
        let test = data.subset(&split.test_indices);
        total += averaged_gini(&model.score(&test)?, &test.labels)?.mean;
    }
    Ok(total / grid.n_splits as f64)
}

/// Evaluates every point on the same `n_splits` stratified splits and returns
/// the first maximizer in row-major order.
pub fn grid_search(grid: &ParamGrid, data: &Samples) -> Result<GridResult> {
    grid.validate()?;
    let points = grid.points();
    let table: Vec<GridPoint> = points
        .into_par_iter()
        .enumerate()
        .map(|(index, values)| {
            let outcome = apply_point(grid.kind, &values).and_then(|p| evaluate_point(grid, index, &p, data));
            let (objective, error) = match outcome {
                Ok(v) if v.is_finite() => (Some(v), None),
                Ok(v) => (None, Some(format!("non-finite objective {v}"))),
                Err(e) => (None, Some(e.to_string())),
            };
            GridPoint {
                index,
                values,
                objective,
                error,
            }
        })
        .collect();

    let mut best: Option<&GridPoint> = None;
    for p in table.iter().filter(|p| !p.failed()) {
        if best.is_none_or(|b| p.objective_value() > b.objective_value()) {
            best = Some(p);
        }
    }
    let Some(best) = best else {
        let first = table.first().and_then(|p| p.error.clone()).unwrap_or_default();
        return Err(Error::Validation(format!(
            "every grid point failed for {}; first error: {first}",
            grid.kind
        )));
    };
    Ok(GridResult {
        kind: grid.kind,
        best: apply_point(grid.kind, &best.values)?,
        best_index: best.index,
        n_splits: grid.n_splits,
        table,
    })
}

impl GridResult {
    /// Columns: point, each axis, objective, failed.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let axes: Vec<String> = self.table.first().map_or_else(Vec::new, |p| p.values.keys().cloned().collect());
        let mut header = vec!["point".to_string()];
        header.extend(axes.iter().cloned());
        header.extend(["objective".to_string(), "failed".to_string()]);
        w.write_record(&header)?;
        for p in &self.table {
            let mut rec = vec![p.index.to_string()];
            rec.extend(axes.iter().map(|a| p.values[a].to_string()));
            rec.push(p.objective_value().to_string());
            rec.push(p.failed().to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::synth::blobs;
    use crate::dataset::ClassLabel;

    #[test]
    fn knn_grid_has_twenty_points() {
        let g = ParamGrid::standard(LearnerKind::Knn, GridProfile::Epm, 5, 0);
        assert_eq!(g.size(), 20);
        assert_eq!(g.points().len(), 20);
        assert_eq!(g.points()[19]["k"], ParamValue::Number(43.0));
    }

    #[test]
    fn row_major_order() {
        let g = ParamGrid::standard(LearnerKind::SvmRbf, GridProfile::Cohort, 5, 0);
        let pts = g.points();
        assert_eq!(pts.len(), 15);
        assert_eq!(pts[0]["C"], ParamValue::Number(0.25));
        assert_eq!(pts[1]["sigma"], ParamValue::Number(1.25));
        assert_eq!(pts[5]["C"], ParamValue::Number(0.5));
    }

    #[test]
    fn empty_grid_is_a_single_point() {
        let g = ParamGrid::standard(LearnerKind::LogisticRegression, GridProfile::Epm, 3, 1);
        assert_eq!(g.points().len(), 1);
        let data = blobs([15, 15, 15], 2, 8.0, 1).all_samples();
        let r = grid_search(&g, &data).unwrap();
        let direct = evaluate_point(&g, 0, &HyperParams::default(), &data).unwrap();
        assert_eq!(r.table[0].objective, Some(direct));
    }

    #[test]
    fn grid_json_round_trip() {
        let g = ParamGrid::standard(LearnerKind::NaiveBayes, GridProfile::Epm, 5, 9);
        let s = serde_json::to_string(&g).unwrap();
        assert!(s.contains(r#""axes":{"usekernel":[true,false]}"#));
        let back: ParamGrid = serde_json::from_str(&s).unwrap();
        assert_eq!(back, g);
        let bad: ParamGrid = serde_json::from_str(r#"{"kind":"KNN","axes":{"sigma":[1]}}"#).unwrap();
        assert!(bad.validate().is_err());
    }

    #[test]
    fn failing_point_is_marked_and_skipped() {
        let mut axes = IndexMap::new();
        // even k is rejected by parameter validation
        axes.insert("k".to_string(), numbers([4.0, 5.0]));
        let g = ParamGrid::new(LearnerKind::Knn, axes, 2, 3);
        let data = blobs([12, 12, 12], 2, 8.0, 2).all_samples();
        let r = grid_search(&g, &data).unwrap();
        assert!(r.table[0].failed());
        assert_eq!(r.table[0].objective_value(), f64::NEG_INFINITY);
        assert_eq!(r.best_index, 1);
        assert_eq!(r.best.knn_k, 5);
    }

    /// Six tight blobs round a circle, classes alternating F, G, W, so each
    /// class owns two opposite blobs; two points relabelled.
    fn noisy_blobs() -> Samples {
        use rand::Rng;
        let mut rng = seed::rng(21);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for b in 0..6 {
            let angle = b as f64 * std::f64::consts::PI / 3.0;
            for _ in 0..14 {
                rows.push(vec![
                    100.0 * angle.cos() + rng.random_range(-3.0..3.0),
                    100.0 * angle.sin() + rng.random_range(-3.0..3.0),
                ]);
                labels.push(ClassLabel::from_index(b % 3));
            }
        }
        labels[0] = ClassLabel::W;
        labels[50] = ClassLabel::F;
        Samples::from_rows(rows, labels)
    }

    #[test]
    fn small_k_beats_large_k_on_tight_blobs() {
        let mut axes = IndexMap::new();
        axes.insert("k".to_string(), numbers([5.0, 7.0, 43.0]));
        let g = ParamGrid::new(LearnerKind::Knn, axes, 5, 4);
        let r = grid_search(&g, &noisy_blobs()).unwrap();
        let small = r.table[0].objective_value().max(r.table[1].objective_value());
        assert!(small > r.table[2].objective_value());
        assert!(r.best.knn_k <= 7);
    }

    #[test]
    fn parallel_matches_sequential_and_best_is_first_max() {
        let g = ParamGrid::standard(LearnerKind::Knn, GridProfile::Epm, 2, 8);
        let data = noisy_blobs();
        let par = grid_search(&g, &data).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let seq = pool.install(|| grid_search(&g, &data).unwrap());
        assert_eq!(par, seq);
        let max = par.table.iter().map(|p| p.objective_value()).fold(f64::NEG_INFINITY, f64::max);
        let first = par.table.iter().position(|p| p.objective_value() == max).unwrap();
        assert_eq!(par.best_index, first);
    }

    #[test]
    fn csv_layout() {
        let mut axes = IndexMap::new();
        axes.insert("usekernel".to_string(), vec![ParamValue::Bool(false)]);
        let g = ParamGrid::new(LearnerKind::NaiveBayes, axes, 2, 0);
        let r = grid_search(&g, &blobs([10, 10, 10], 2, 5.0, 0).all_samples()).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("point,usekernel,objective,failed\n0,false,"));
    }
}
