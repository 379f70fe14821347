use serde::{Deserialize, Serialize};

use super::scaling::{log_sum_exp, softmax3};
use crate::dataset::{ClassLabel, Samples};

const VAR_FLOOR: f64 = 1e-9;
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "density", rename_all = "snake_case")]
enum Densities {
    /// `[class][feature]` mean and variance.
    Gaussian { mean: Vec<Vec<f64>>, var: Vec<Vec<f64>> },
    /// `[class][feature]` sample values and bandwidth.
    Kernel {
        points: Vec<Vec<Vec<f64>>>,
        bandwidth: Vec<Vec<f64>>,
    },
}

/// Naive Bayes with per-class, per-feature Gaussian or Gaussian-kernel
/// densities. Scores are posterior class probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NaiveBayesModel {
    log_prior: [f64; 3],
    densities: Densities,
}

/// Silverman's rule of thumb, `0.9 * min(sd, IQR / 1.34) * n^(-1/5)`, with
/// the usual fallbacks when the spread estimate is zero.
pub(crate) fn silverman_bandwidth(x: &[f64]) -> f64 {
    let n = x.len();
    let mean = x.iter().sum::<f64>() / n as f64;
    let sd = if n > 1 {
        (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0)).sqrt()
    } else {
        0.0
    };
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = quantile(&sorted, 0.75) - quantile(&sorted, 0.25);
    let mut lo = sd.min(iqr / 1.34);
    if lo <= 0.0 {
        lo = sd;
    }
    if lo <= 0.0 {
        lo = sorted[0].abs();
    }
    if lo <= 0.0 {
        lo = 1.0;
    }
    0.9 * lo * (n as f64).powf(-0.2)
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

impl NaiveBayesModel {
    pub fn fit(data: &Samples, use_kernel: bool) -> Self {
        let p = data.n_features();
        let by_class: Vec<Vec<&Vec<f64>>> = ClassLabel::ALL
            .iter()
            .map(|&c| {
                data.rows
                    .iter()
                    .zip(&data.labels)
                    .filter(|(_, &l)| l == c)
                    .map(|(r, _)| r)
                    .collect()
            })
            .collect();
        let n = data.len() as f64;
        let log_prior = [0, 1, 2].map(|c| (by_class[c].len() as f64 / n).ln());

        let column = |c: usize, j: usize| -> Vec<f64> { by_class[c].iter().map(|r| r[j]).collect() };
        let densities = if use_kernel {
            let points: Vec<Vec<Vec<f64>>> = (0..3).map(|c| (0..p).map(|j| column(c, j)).collect()).collect();
            let bandwidth = points
                .iter()
                .map(|cols| cols.iter().map(|x| silverman_bandwidth(x)).collect())
                .collect();
            Densities::Kernel { points, bandwidth }
        } else {
            let mut mean = vec![vec![0.0; p]; 3];
            let mut var = vec![vec![VAR_FLOOR; p]; 3];
            for c in 0..3 {
                for j in 0..p {
                    let x = column(c, j);
                    let m = x.iter().sum::<f64>() / x.len() as f64;
                    mean[c][j] = m;
                    if x.len() > 1 {
                        let v = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() as f64 - 1.0);
                        var[c][j] = v.max(VAR_FLOOR);
                    }
                }
            }
            Densities::Gaussian { mean, var }
        };
        NaiveBayesModel { log_prior, densities }
    }

    fn log_likelihood(&self, class: usize, row: &[f64]) -> f64 {
        match &self.densities {
            Densities::Gaussian { mean, var } => row
                .iter()
                .enumerate()
                .map(|(j, &x)| {
                    let v = var[class][j];
                    -LN_SQRT_2PI - 0.5 * v.ln() - (x - mean[class][j]).powi(2) / (2.0 * v)
                })
                .sum(),
            Densities::Kernel { points, bandwidth } => row
                .iter()
                .enumerate()
                .map(|(j, &x)| {
                    let h = bandwidth[class][j];
                    let pts = &points[class][j];
                    let terms: Vec<f64> = pts.iter().map(|&xi| -0.5 * ((x - xi) / h).powi(2)).collect();
                    log_sum_exp(&terms) - (pts.len() as f64 * h).ln() - LN_SQRT_2PI
                })
                .sum(),
        }
    }

    pub fn score(&self, row: &[f64]) -> [f64; 3] {
        softmax3([0, 1, 2].map(|c| self.log_prior[c] + self.log_likelihood(c, row)))
    }
}
