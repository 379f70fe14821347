use serde::{Deserialize, Serialize};

/// Per-feature z-scoring with training mean and sample standard deviation.
/// Constant features keep a unit scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[Vec<f64>]) -> Self {
        let n = rows.len() as f64;
        let p = rows.first().map_or(0, |r| r.len());
        let mut mean = vec![0.0; p];
        for r in rows {
            for j in 0..p {
                mean[j] += r[j];
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; p];
        for r in rows {
            for j in 0..p {
                var[j] += (r[j] - mean[j]).powi(2);
            }
        }
        let scale = var
            .iter()
            .map(|v| {
                let sd = if n > 1.0 { (v / (n - 1.0)).sqrt() } else { 0.0 };
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Standardizer { mean, scale }
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(x, (m, s))| (x - m) / s)
            .collect()
    }
}

/// Linear map of each feature's training range onto [-1, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeMap {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl RangeMap {
    pub fn fit(rows: &[Vec<f64>]) -> Self {
        let p = rows.first().map_or(0, |r| r.len());
        let mut min = vec![f64::INFINITY; p];
        let mut max = vec![f64::NEG_INFINITY; p];
        for r in rows {
            for j in 0..p {
                min[j] = min[j].min(r[j]);
                max[j] = max[j].max(r[j]);
            }
        }
        RangeMap { min, max }
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .enumerate()
            .map(|(j, &x)| {
                let span = self.max[j] - self.min[j];
                if span > 0.0 {
                    2.0 * (x - self.min[j]) / span - 1.0
                } else {
                    0.0
                }
            })
            .collect()
    }
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `log(sum(exp(v)))` without overflow.
pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn softmax3(logits: [f64; 3]) -> [f64; 3] {
    let lse = log_sum_exp(&logits);
    logits.map(|l| (l - lse).exp())
}
