//! Grade ingestion, target banding, stratified splitting and PCA projection.

mod ingest;
mod pca;
mod split;
pub mod synth;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use ingest::{
    label_targets, load_dataset, load_dataset_from_reader, rescale_mark, IngestReport, Schema,
};
pub use pca::{pca_project, pca_rows, write_pca_csv, PcaProjection};
pub use split::{split_labels, stratified_split, Split, SplitPlan};

/// Final-grade band. Report layout always follows [`ClassLabel::ALL`], i.e. (F, G, W).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ClassLabel {
    /// Fair, final grade 51..=69.
    F,
    /// Good, final grade 70..=100.
    G,
    /// Weak, final grade <= 50. The intervention target.
    W,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; 3] = [ClassLabel::F, ClassLabel::G, ClassLabel::W];

    pub fn index(self) -> usize {
        match self {
            ClassLabel::F => 0,
            ClassLabel::G => 1,
            ClassLabel::W => 2,
        }
    }

    pub fn from_index(i: usize) -> ClassLabel {
        Self::ALL[i]
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ClassLabel::F => "F",
            ClassLabel::G => "G",
            ClassLabel::W => "W",
        }
    }
}

impl std::fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ClassLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "F" | "f" => Ok(ClassLabel::F),
            "G" | "g" => Ok(ClassLabel::G),
            "W" | "w" => Ok(ClassLabel::W),
            other => Err(Error::Validation(format!("unknown class label {other:?}"))),
        }
    }
}

/// Counts per class in (F, G, W) order.
pub fn label_histogram(labels: &[ClassLabel]) -> [usize; 3] {
    let mut h = [0usize; 3];
    for l in labels {
        h[l.index()] += 1;
    }
    h
}

/// Course delivery stage the features were cut at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Stage20,
    Stage50,
}

impl std::str::FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().trim_end_matches('%') {
            "20" | "stage20" => Ok(Stage::Stage20),
            "50" | "stage50" => Ok(Stage::Stage50),
            other => Err(Error::Validation(format!("unknown stage {other:?}, expected 20 or 50"))),
        }
    }
}

/// Students x task marks, every mark an integer in 0..=100.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub instance_ids: Vec<String>,
    pub feature_names: Vec<String>,
    pub values: Vec<Vec<u8>>,
    pub labels: Vec<ClassLabel>,
    pub stage: Stage,
}

impl FeatureMatrix {
    pub fn new(
        instance_ids: Vec<String>,
        feature_names: Vec<String>,
        values: Vec<Vec<u8>>,
        labels: Vec<ClassLabel>,
        stage: Stage,
    ) -> Result<Self> {
        let m = FeatureMatrix {
            instance_ids,
            feature_names,
            values,
            labels,
            stage,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.instance_ids.len();
        if self.labels.len() != n || self.values.len() != n {
            return Err(Error::Validation(format!(
                "row count mismatch: {} ids, {} label rows, {} value rows",
                n,
                self.labels.len(),
                self.values.len()
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for name in &self.feature_names {
            if !seen.insert(name.as_str()) {
                return Err(Error::Schema(format!("duplicate feature name {name:?}")));
            }
        }
        for (i, row) in self.values.iter().enumerate() {
            if row.len() != self.feature_names.len() {
                return Err(Error::Validation(format!(
                    "row {} has {} values, expected {}",
                    i,
                    row.len(),
                    self.feature_names.len()
                )));
            }
            if let Some(v) = row.iter().find(|&&v| v > 100) {
                return Err(Error::Validation(format!("row {i} has mark {v} outside 0..=100")));
            }
        }
        Ok(())
    }

    pub fn n_rows(&self) -> usize {
        self.instance_ids.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn label_histogram(&self) -> [usize; 3] {
        label_histogram(&self.labels)
    }

    /// Real-valued view of the given rows, in the given order.
    pub fn samples(&self, indices: &[usize]) -> Samples {
        Samples {
            feature_names: self.feature_names.clone(),
            rows: indices
                .iter()
                .map(|&i| self.values[i].iter().map(|&v| v as f64).collect())
                .collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    pub fn all_samples(&self) -> Samples {
        let idx: Vec<usize> = (0..self.n_rows()).collect();
        self.samples(&idx)
    }

    pub fn to_json_file(&self, path: &std::path::Path) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer_pretty(f, self)?;
        Ok(())
    }

    pub fn from_json_file(path: &std::path::Path) -> Result<Self> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        let m: FeatureMatrix = serde_json::from_reader(f)?;
        m.validate()?;
        Ok(m)
    }
}

/// Real-valued rows with labels, the unit learners train and score on.
#[derive(Debug, Clone, PartialEq)]
pub struct Samples {
    pub feature_names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<ClassLabel>,
}

impl Samples {
    pub fn new(feature_names: Vec<String>, rows: Vec<Vec<f64>>, labels: Vec<ClassLabel>) -> Self {
        Samples {
            feature_names,
            rows,
            labels,
        }
    }

    /// Unnamed features `x0, x1, ...`; handy for hand-built data.
    pub fn from_rows(rows: Vec<Vec<f64>>, labels: Vec<ClassLabel>) -> Self {
        let p = rows.first().map_or(0, |r| r.len());
        let feature_names = (0..p).map(|j| format!("x{j}")).collect();
        Samples::new(feature_names, rows, labels)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn subset(&self, indices: &[usize]) -> Samples {
        Samples {
            feature_names: self.feature_names.clone(),
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    pub fn label_histogram(&self) -> [usize; 3] {
        label_histogram(&self.labels)
    }
}
