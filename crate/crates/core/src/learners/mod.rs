//! The eight base classifiers behind one train/score interface.
//!
//! Every learner produces a [`ClassScores`] triple per row in (F, G, W)
//! order where a higher value means "more likely this class". Scores are
//! only required to rank well; they are not calibrated probabilities.

mod forest;
mod knn;
mod logistic;
mod naive_bayes;
pub mod network;
mod scaling;
mod svm;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{ClassLabel, Samples};
use crate::error::{Error, Result};
use crate::seed;

pub use forest::Forest;
pub use knn::KnnModel;
pub use logistic::LogisticModel;
pub use naive_bayes::NaiveBayesModel;
pub use network::{NetworkModel, NetworkTopology};
pub use svm::SvmModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LearnerKind {
    #[serde(rename = "KNN")]
    Knn,
    #[serde(rename = "NB")]
    NaiveBayes,
    #[serde(rename = "LR")]
    LogisticRegression,
    #[serde(rename = "RF")]
    RandomForest,
    #[serde(rename = "SVM")]
    SvmRbf,
    #[serde(rename = "NN1")]
    Nn1,
    #[serde(rename = "NN2")]
    Nn2,
    #[serde(rename = "NN3")]
    Nn3,
}

impl LearnerKind {
    /// Fixed order; a kind's position is its bit in an ensemble mask.
    pub const ALL: [LearnerKind; 8] = [
        LearnerKind::Knn,
        LearnerKind::NaiveBayes,
        LearnerKind::LogisticRegression,
        LearnerKind::RandomForest,
        LearnerKind::SvmRbf,
        LearnerKind::Nn1,
        LearnerKind::Nn2,
        LearnerKind::Nn3,
    ];

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&k| k == self).expect("kind listed in ALL")
    }

    pub fn name(self) -> &'static str {
        match self {
            LearnerKind::Knn => "KNN",
            LearnerKind::NaiveBayes => "NB",
            LearnerKind::LogisticRegression => "LR",
            LearnerKind::RandomForest => "RF",
            LearnerKind::SvmRbf => "SVM",
            LearnerKind::Nn1 => "NN1",
            LearnerKind::Nn2 => "NN2",
            LearnerKind::Nn3 => "NN3",
        }
    }

    pub fn hidden_layers(self) -> Option<usize> {
        match self {
            LearnerKind::Nn1 => Some(1),
            LearnerKind::Nn2 => Some(2),
            LearnerKind::Nn3 => Some(3),
            _ => None,
        }
    }

    /// Minimum instances per class needed to fit.
    fn min_per_class(self) -> usize {
        match self {
            LearnerKind::LogisticRegression | LearnerKind::Nn1 | LearnerKind::Nn2 | LearnerKind::Nn3 => 2,
            _ => 1,
        }
    }
}

impl std::fmt::Display for LearnerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for LearnerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let up = s.trim().to_ascii_uppercase();
        LearnerKind::ALL
            .iter()
            .copied()
            .find(|k| k.name() == up)
            .ok_or_else(|| Error::Validation(format!("unknown learner kind {s:?}")))
    }
}

/// Hyper-parameters for every kind; a learner reads only its own fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperParams {
    pub knn_k: usize,
    pub nb_usekernel: bool,
    /// Features tried per split; `None` means `floor(sqrt(p))`. Values above
    /// the feature count are clamped to it at fit time.
    pub rf_mtry: Option<usize>,
    pub rf_ntrees: usize,
    pub svm_c: f64,
    pub svm_sigma: f64,
    pub nn_neurons_per_layer: usize,
    pub nn_layers: usize,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            knn_k: 5,
            nb_usekernel: false,
            rf_mtry: None,
            rf_ntrees: 500,
            svm_c: 1.0,
            svm_sigma: 0.1,
            nn_neurons_per_layer: 5,
            nn_layers: 1,
        }
    }
}

impl HyperParams {
    pub fn for_kind(kind: LearnerKind) -> Self {
        let mut p = HyperParams::default();
        if let Some(layers) = kind.hidden_layers() {
            p.nn_layers = layers;
        }
        p
    }

    pub fn validate(&self, kind: LearnerKind) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(m));
        match kind {
            LearnerKind::Knn if self.knn_k == 0 || self.knn_k.is_multiple_of(2) => {
                bad(format!("knn_k must be a positive odd integer, got {}", self.knn_k))
            }
            LearnerKind::RandomForest if self.rf_mtry == Some(0) => bad("rf_mtry must be >= 1".into()),
            LearnerKind::RandomForest if self.rf_ntrees == 0 => bad("rf_ntrees must be >= 1".into()),
            LearnerKind::SvmRbf if !(self.svm_c > 0.0 && self.svm_c.is_finite()) => {
                bad(format!("svm_c must be positive, got {}", self.svm_c))
            }
            LearnerKind::SvmRbf if !(self.svm_sigma > 0.0 && self.svm_sigma.is_finite()) => {
                bad(format!("svm_sigma must be positive, got {}", self.svm_sigma))
            }
            LearnerKind::Nn1 | LearnerKind::Nn2 | LearnerKind::Nn3 if self.nn_neurons_per_layer == 0 => {
                bad("nn_neurons_per_layer must be >= 1".into())
            }
            LearnerKind::Nn1 | LearnerKind::Nn2 | LearnerKind::Nn3
                if Some(self.nn_layers) != kind.hidden_layers() =>
            {
                bad(format!("{kind} requires nn_layers = {:?}, got {}", kind.hidden_layers(), self.nn_layers))
            }
            _ => Ok(()),
        }
    }
}

/// Per-row class scores in (F, G, W) order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub rows: Vec<[f64; 3]>,
    pub normalized: bool,
}

impl ClassScores {
    pub fn raw(rows: Vec<[f64; 3]>) -> Self {
        ClassScores { rows, normalized: false }
    }

    pub fn from_columns(columns: &[Vec<f64>; 3], normalized: bool) -> Self {
        let n = columns[0].len();
        ClassScores {
            rows: (0..n).map(|i| [columns[0][i], columns[1][i], columns[2][i]]).collect(),
            normalized,
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column(&self, class: ClassLabel) -> Vec<f64> {
        self.rows.iter().map(|r| r[class.index()]).collect()
    }

    pub fn columns(&self) -> [Vec<f64>; 3] {
        ClassLabel::ALL.map(|c| self.column(c))
    }

    pub fn is_finite(&self) -> bool {
        self.rows.iter().all(|r| r.iter().all(|v| v.is_finite()))
    }
}

/// Anything that maps feature rows to class scores.
pub trait Scorer: Sync {
    fn n_features(&self) -> usize;

    fn score_rows(&self, rows: &[Vec<f64>]) -> Result<ClassScores>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ModelState {
    Knn(KnnModel),
    NaiveBayes(NaiveBayesModel),
    Logistic(LogisticModel),
    Forest(Forest),
    Svm(SvmModel),
    Network(NetworkModel),
}

/// A fitted learner. Immutable after training, so it can be shared across
/// scoring threads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub kind: LearnerKind,
    pub params: HyperParams,
    pub feature_names: Vec<String>,
    pub state: ModelState,
}

/// Current model file format.
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    model: TrainedModel,
}

/// Seed for the model of `kind` on outer split `split` under run seed `global`.
pub fn model_seed(global: u64, split: u64, kind: LearnerKind) -> u64 {
    seed::mix_all(global, &[split, kind.index() as u64 + 1])
}

pub fn train(kind: LearnerKind, params: &HyperParams, data: &Samples, seed: u64) -> Result<TrainedModel> {
    params.validate(kind)?;
    if data.n_features() == 0 {
        return Err(Error::Validation("training data has no features".into()));
    }
    if let Some(r) = data.rows.iter().position(|r| r.len() != data.n_features()) {
        return Err(Error::Schema(format!("training row {r} has the wrong width")));
    }
    let hist = data.label_histogram();
    for c in ClassLabel::ALL {
        if hist[c.index()] < kind.min_per_class() {
            return Err(Error::Validation(format!(
                "{kind} needs at least {} instance(s) of class {c}, got {}",
                kind.min_per_class(),
                hist[c.index()]
            )));
        }
    }

    let state = match kind {
        LearnerKind::Knn => ModelState::Knn(KnnModel::fit(data, params.knn_k)),
        LearnerKind::NaiveBayes => ModelState::NaiveBayes(NaiveBayesModel::fit(data, params.nb_usekernel)),
        LearnerKind::LogisticRegression => ModelState::Logistic(LogisticModel::fit(data)),
        LearnerKind::RandomForest => {
            let p = data.n_features();
            let mtry = params
                .rf_mtry
                .unwrap_or_else(|| ((p as f64).sqrt().floor() as usize).max(1))
                .clamp(1, p);
            ModelState::Forest(Forest::fit(data, mtry, params.rf_ntrees, seed))
        }
        LearnerKind::SvmRbf => ModelState::Svm(SvmModel::fit(data, params.svm_c, params.svm_sigma)),
        LearnerKind::Nn1 | LearnerKind::Nn2 | LearnerKind::Nn3 => {
            let hidden = vec![params.nn_neurons_per_layer; params.nn_layers];
            ModelState::Network(NetworkModel::fit(data, hidden, seed)?)
        }
    };
    Ok(TrainedModel {
        kind,
        params: params.clone(),
        feature_names: data.feature_names.clone(),
        state,
    })
}

impl TrainedModel {
    /// Scores `data`, whose feature columns must match training order.
    pub fn score(&self, data: &Samples) -> Result<ClassScores> {
        if data.feature_names != self.feature_names {
            return Err(Error::Schema(format!(
                "feature columns {:?} do not match training columns {:?}",
                data.feature_names, self.feature_names
            )));
        }
        self.score_rows(&data.rows)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            model: self.clone(),
        };
        let w = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(w, &file)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let r = std::io::BufReader::new(std::fs::File::open(path)?);
        let file: ModelFile = serde_json::from_reader(r)?;
        if file.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Validation(format!(
                "unsupported model format version {}",
                file.format_version
            )));
        }
        Ok(file.model)
    }
}

impl Scorer for TrainedModel {
    fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    fn score_rows(&self, rows: &[Vec<f64>]) -> Result<ClassScores> {
        let p = self.feature_names.len();
        if let Some(r) = rows.iter().position(|r| r.len() != p) {
            return Err(Error::Schema(format!(
                "row {r} has {} features, model expects {p}",
                rows[r].len()
            )));
        }
        let out: Vec<[f64; 3]> = match &self.state {
            ModelState::Knn(m) => rows.iter().map(|r| m.score(r)).collect(),
            ModelState::NaiveBayes(m) => rows.iter().map(|r| m.score(r)).collect(),
            ModelState::Logistic(m) => rows.iter().map(|r| m.score(r)).collect(),
            ModelState::Forest(m) => rows.iter().map(|r| m.score(r)).collect(),
            ModelState::Svm(m) => rows.iter().map(|r| m.score(r)).collect(),
            ModelState::Network(m) => rows.iter().map(|r| m.score(r)).collect(),
        };
        // scores must stay finite even for inputs far outside training range
        let out = out
            .into_iter()
            .map(|r| r.map(|v| if v.is_nan() { 0.0 } else { v.clamp(-1e300, 1e300) }))
            .collect();
        Ok(ClassScores::raw(out))
    }
}
