use serde::{Deserialize, Serialize};

use super::scaling::{squared_distance, Standardizer};
use crate::dataset::{ClassLabel, Samples};

/// k-nearest neighbours on standardized features. The score of a class is
/// its share of the `k` nearest training rows; equal distances resolve to
/// the lower training index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnModel {
    k: usize,
    scaler: Standardizer,
    rows: Vec<Vec<f64>>,
    labels: Vec<ClassLabel>,
}

impl KnnModel {
    pub fn fit(data: &Samples, k: usize) -> Self {
        let scaler = Standardizer::fit(&data.rows);
        KnnModel {
            k,
            rows: data.rows.iter().map(|r| scaler.apply(r)).collect(),
            scaler,
            labels: data.labels.clone(),
        }
    }

    pub fn score(&self, row: &[f64]) -> [f64; 3] {
        let q = self.scaler.apply(row);
        let mut d: Vec<(f64, usize)> = self
            .rows
            .iter()
            .enumerate()
            .map(|(i, r)| (squared_distance(&q, r), i))
            .collect();
        let k = self.k.min(d.len());
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if k < d.len() {
            d.select_nth_unstable_by(k - 1, cmp);
        }
        let mut counts = [0usize; 3];
        for &(_, i) in &d[..k] {
            counts[self.labels[i].index()] += 1;
        }
        counts.map(|c| c as f64 / k as f64)
    }
}
