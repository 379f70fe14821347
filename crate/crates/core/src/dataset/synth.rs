//! Synthetic cohorts.
//!
//! [`Cohort`] mimics a large, strongly unbalanced course export (few Weak
//! students) and writes raw marks plus a matching [`Schema`], so it goes
//! through the same ingestion path as real data. [`blobs`] builds small,
//! well-separated three-class feature matrices for tests.

use std::io::Write;

use indexmap::IndexMap;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{ClassLabel, FeatureMatrix, Schema, Stage};
use crate::error::Result;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cohort {
    pub n_fair: usize,
    pub n_good: usize,
    pub n_weak: usize,
    pub seed: u64,
}

impl Default for Cohort {
    /// 486 students, 8 of them Weak.
    fn default() -> Self {
        Cohort {
            n_fair: 150,
            n_good: 328,
            n_weak: 8,
            seed: 0,
        }
    }
}

const TASKS: [(&str, f64); 6] = [
    ("Quiz01", 10.0),
    ("Assign01", 8.0),
    ("Midterm", 20.0),
    ("Assign02", 12.0),
    ("Assign03", 25.0),
    ("FinalExam", 35.0),
];

pub struct RawTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl RawTable {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

impl Cohort {
    pub fn total(&self) -> usize {
        self.n_fair + self.n_good + self.n_weak
    }

    pub fn schema() -> Schema {
        Schema {
            id_column: "Id".into(),
            final_grade_column: "FinalGrade".into(),
            stage20_columns: vec!["Assign01".into(), "Quiz01".into()],
            stage50_columns: vec![
                "Quiz01".into(),
                "Assign01".into(),
                "Assign02".into(),
                "Midterm".into(),
            ],
            task_max: TASKS.iter().map(|&(n, m)| (n.to_string(), m)).collect::<IndexMap<_, _>>(),
        }
    }

    /// Raw marks on each task's own scale, half-point resolution, a few
    /// blanks. Weak students mostly skip the first assignment.
    pub fn generate(&self) -> RawTable {
        let mut rng = seed::rng(seed::mix(self.seed, 0xC0));
        let noise = Normal::new(0.0, 0.12).expect("valid normal");
        let mut classes: Vec<ClassLabel> = Vec::with_capacity(self.total());
        classes.extend(std::iter::repeat_n(ClassLabel::F, self.n_fair));
        classes.extend(std::iter::repeat_n(ClassLabel::G, self.n_good));
        classes.extend(std::iter::repeat_n(ClassLabel::W, self.n_weak));
        // interleave deterministically so ids do not reveal the class
        for i in (1..classes.len()).rev() {
            let j = rng.random_range(0..=i);
            classes.swap(i, j);
        }

        let mut header = vec!["Id".to_string()];
        header.extend(TASKS.iter().map(|t| t.0.to_string()));
        header.push("FinalGrade".into());

        let rows = classes
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let grade: i64 = match c {
                    ClassLabel::G => rng.random_range(70..=100),
                    ClassLabel::F => rng.random_range(51..=69),
                    ClassLabel::W => rng.random_range(15..=50),
                };
                let ability = grade as f64 / 100.0;
                let mut row = vec![format!("std{i:03}")];
                for &(name, max) in &TASKS {
                    let skipped = rng.random_bool(0.03)
                        || (c == ClassLabel::W && name == "Assign01" && rng.random_bool(0.7));
                    if skipped {
                        row.push(String::new());
                        continue;
                    }
                    let frac = (ability + noise.sample(&mut rng)).clamp(0.0, 1.0);
                    let mark = (frac * max * 2.0).round() / 2.0;
                    row.push(format!("{mark}"));
                }
                row.push(grade.to_string());
                row
            })
            .collect();
        RawTable { header, rows }
    }
}

/// Three Gaussian clusters in `n_features` dimensions with class centres
/// F=50, G=80, W=20 on every axis, clamped and rounded to 0..=100.
pub fn blobs(counts: [usize; 3], n_features: usize, sd: f64, seed: u64) -> FeatureMatrix {
    let centers = [50.0, 80.0, 20.0];
    let mut rng = seed::rng(seed::mix(seed, 0xB10B));
    let normal = Normal::new(0.0, sd).expect("valid sd");
    let mut ids = Vec::new();
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for c in ClassLabel::ALL {
        for _ in 0..counts[c.index()] {
            ids.push(format!("b{:04}", ids.len()));
            values.push(
                (0..n_features)
                    .map(|_| (centers[c.index()] + normal.sample(&mut rng)).round().clamp(0.0, 100.0) as u8)
                    .collect(),
            );
            labels.push(c);
        }
    }
    let names = (1..=n_features).map(|j| format!("T{j}")).collect();
    FeatureMatrix::new(ids, names, values, labels, Stage::Stage20).expect("blobs are valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::load_dataset_from_reader;

    #[test]
    fn cohort_round_trips_through_ingestion() {
        let cohort = Cohort::default();
        let mut buf = Vec::new();
        cohort.generate().write_csv(&mut buf).unwrap();
        let (m, rep) = load_dataset_from_reader(buf.as_slice(), &Cohort::schema(), Stage::Stage50).unwrap();
        assert_eq!(m.n_rows(), 486);
        assert_eq!(m.label_histogram(), [150, 328, 8]);
        assert_eq!(rep.label_histogram["W"], 8);
        assert_eq!(m.n_features(), 4);
    }

    #[test]
    fn blobs_shape() {
        let m = blobs([10, 12, 14], 3, 5.0, 1);
        assert_eq!(m.label_histogram(), [10, 12, 14]);
        assert_eq!(m, blobs([10, 12, 14], 3, 5.0, 1));
    }
}
