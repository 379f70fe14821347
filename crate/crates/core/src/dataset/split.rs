use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{label_histogram, ClassLabel, FeatureMatrix};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub train_fraction: f64,
    pub seed: u64,
    pub stratified: bool,
}

impl SplitPlan {
    pub fn stratified(train_fraction: f64, seed: u64) -> Self {
        SplitPlan {
            train_fraction,
            seed,
            stratified: true,
        }
    }
}

/// Disjoint train/test index sets, each sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
}

pub fn stratified_split(m: &FeatureMatrix, plan: &SplitPlan) -> Result<Split> {
    split_labels(&m.labels, plan)
}

/// Test size is `floor((1 - f) * n)`, so 52 rows at 70% leave 15 for test.
fn test_size(n: usize, train_fraction: f64) -> usize {
    ((1.0 - train_fraction) * n as f64 + 1e-9).floor() as usize
}

/// Splits row indices according to `plan`.
///
/// With stratification the train total is apportioned across classes by
/// largest remainder of `f * class_count` (ties go to the earlier class in
/// F, G, W order), then clamped so every class keeps at least one instance
/// on each side.
pub fn split_labels(labels: &[ClassLabel], plan: &SplitPlan) -> Result<Split> {
    let f = plan.train_fraction;
    if !(f > 0.0 && f < 1.0) {
        return Err(Error::Validation(format!("train fraction {f} outside (0, 1)")));
    }
    let n = labels.len();
    let n_train_total = n - test_size(n, f);
    let mut rng = seed::rng(plan.seed);

    let mut train = Vec::with_capacity(n_train_total);
    if plan.stratified {
        let hist = label_histogram(labels);
        for c in ClassLabel::ALL {
            if hist[c.index()] < 2 {
                return Err(Error::Stratification(format!(
                    "class {c} has {} instance(s); at least 2 are required",
                    hist[c.index()]
                )));
            }
        }
        let quotas: Vec<f64> = hist.iter().map(|&c| f * c as f64).collect();
        let mut alloc: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
        let mut remaining = n_train_total.saturating_sub(alloc.iter().sum());
        let mut order: Vec<usize> = (0..3).collect();
        order.sort_by(|&a, &b| {
            let fa = quotas[a] - quotas[a].floor();
            let fb = quotas[b] - quotas[b].floor();
            fb.total_cmp(&fa).then(a.cmp(&b))
        });
        for &c in &order {
            if remaining == 0 {
                break;
            }
            if alloc[c] < hist[c] {
                alloc[c] += 1;
                remaining -= 1;
            }
        }
        for c in 0..3 {
            alloc[c] = alloc[c].clamp(1, hist[c] - 1);
        }
        for c in ClassLabel::ALL {
            let mut members: Vec<usize> = (0..n).filter(|&i| labels[i] == c).collect();
            members.shuffle(&mut rng);
            train.extend_from_slice(&members[..alloc[c.index()]]);
        }
    } else {
        if n < 2 {
            return Err(Error::Validation(format!("cannot split {n} instance(s)")));
        }
        let mut all: Vec<usize> = (0..n).collect();
        all.shuffle(&mut rng);
        train.extend_from_slice(&all[..n_train_total.clamp(1, n - 1)]);
    }

    train.sort_unstable();
    let mut in_train = vec![false; n];
    for &i in &train {
        in_train[i] = true;
    }
    let test: Vec<usize> = (0..n).filter(|&i| !in_train[i]).collect();
    Ok(Split {
        train_indices: train,
        test_indices: test,
    })
}
