use serde::{Deserialize, Serialize};

use super::scaling::{squared_distance, Standardizer};
use crate::dataset::Samples;

const TOLERANCE: f64 = 1e-3;
const TAU: f64 = 1e-12;

/// RBF kernel `exp(-sigma * |x - y|^2)`.
fn rbf(sigma: f64, a: &[f64], b: &[f64]) -> f64 {
    (-sigma * squared_distance(a, b)).exp()
}

/// One binary C-SVM: `f(x) = sum_i coef_i K(sv_i, x) - rho`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BinarySvm {
    positive: usize,
    negative: usize,
    support: Vec<Vec<f64>>,
    coef: Vec<f64>,
    rho: f64,
}

impl BinarySvm {
    fn decision(&self, sigma: f64, x: &[f64]) -> f64 {
        self.support
            .iter()
            .zip(&self.coef)
            .map(|(sv, c)| c * rbf(sigma, sv, x))
            .sum::<f64>()
            - self.rho
    }
}

/// Dual solution of a binary C-SVM by sequential minimal optimization with
/// second-order working-set selection; returns `(alpha, rho)`.
pub(crate) fn smo(kernel: &[Vec<f64>], y: &[f64], c: f64) -> (Vec<f64>, f64) {
    let n = y.len();
    let q = |i: usize, j: usize| y[i] * y[j] * kernel[i][j];
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let max_iter = (100 * n).max(100_000);

    for _ in 0..max_iter {
        // i: maximal violating index in I_up
        let mut g_max = f64::NEG_INFINITY;
        let mut i_sel = None;
        for t in 0..n {
            let up = if y[t] > 0.0 { alpha[t] < c } else { alpha[t] > 0.0 };
            if up && -y[t] * grad[t] >= g_max {
                g_max = -y[t] * grad[t];
                i_sel = Some(t);
            }
        }
        let Some(i) = i_sel else { break };

        let mut g_min_neg = f64::NEG_INFINITY;
        let mut j_sel = None;
        let mut obj_min = f64::INFINITY;
        for t in 0..n {
            let low = if y[t] > 0.0 { alpha[t] > 0.0 } else { alpha[t] < c };
            if !low {
                continue;
            }
            let v = y[t] * grad[t];
            g_min_neg = g_min_neg.max(v);
            let b = g_max + v;
            if b > 0.0 {
                let a = kernel[i][i] + kernel[t][t] - 2.0 * kernel[i][t];
                let a = if a > 0.0 { a } else { TAU };
                let obj = -(b * b) / a;
                if obj <= obj_min {
                    obj_min = obj;
                    j_sel = Some(t);
                }
            }
        }
        if g_max + g_min_neg < TOLERANCE {
            break;
        }
        let Some(j) = j_sel else { break };

        let (old_i, old_j) = (alpha[i], alpha[j]);
        if y[i] != y[j] {
            let quad = (kernel[i][i] + kernel[j][j] + 2.0 * q(i, j)).max(TAU);
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let quad = (kernel[i][i] + kernel[j][j] - 2.0 * q(i, j)).max(TAU);
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for t in 0..n {
            grad[t] += q(i, t) * di + q(j, t) * dj;
        }
    }

    // rho from free vectors, else the midpoint of the feasible interval
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut free, mut sum_free) = (0usize, 0.0);
    for t in 0..n {
        let yg = y[t] * grad[t];
        if alpha[t] >= c {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            free += 1;
            sum_free += yg;
        }
    }
    let rho = if free > 0 { sum_free / free as f64 } else { 0.5 * (ub + lb) };
    (alpha, rho)
}

/// RBF support vector machine, one-vs-one over the three class pairs on
/// standardized features. A class score is the sum of its pairwise decision
/// values (positive side adds, negative side subtracts).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    sigma: f64,
    scaler: Standardizer,
    machines: Vec<BinarySvm>,
}

impl SvmModel {
    pub fn fit(data: &Samples, c: f64, sigma: f64) -> Self {
        let scaler = Standardizer::fit(&data.rows);
        let x: Vec<Vec<f64>> = data.rows.iter().map(|r| scaler.apply(r)).collect();
        let mut machines = Vec::with_capacity(3);
        for (a, b) in [(0usize, 1usize), (0, 2), (1, 2)] {
            let idx: Vec<usize> = (0..x.len())
                .filter(|&i| {
                    let l = data.labels[i].index();
                    l == a || l == b
                })
                .collect();
            let y: Vec<f64> = idx
                .iter()
                .map(|&i| if data.labels[i].index() == a { 1.0 } else { -1.0 })
                .collect();
            let kernel: Vec<Vec<f64>> = idx
                .iter()
                .map(|&i| idx.iter().map(|&j| rbf(sigma, &x[i], &x[j])).collect())
                .collect();
            let (alpha, rho) = smo(&kernel, &y, c);
            let (support, coef) = idx
                .iter()
                .zip(alpha.iter().zip(&y))
                .filter(|(_, (&al, _))| al > 0.0)
                .map(|(&i, (&al, &yi))| (x[i].clone(), al * yi))
                .unzip();
            machines.push(BinarySvm {
                positive: a,
                negative: b,
                support,
                coef,
                rho,
            });
        }
        SvmModel { sigma, scaler, machines }
    }

    pub fn score(&self, row: &[f64]) -> [f64; 3] {
        let z = self.scaler.apply(row);
        let mut s = [0.0; 3];
        for m in &self.machines {
            let d = m.decision(self.sigma, &z);
            s[m.positive] += d;
            s[m.negative] -= d;
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::ClassLabel;

    #[test]
    fn smo_two_points() {
        // two points, linear-ish kernel limit: symmetric solution, rho = 0
        let k = vec![vec![1.0, 0.2], vec![0.2, 1.0]];
        let (alpha, rho) = smo(&k, &[1.0, -1.0], 10.0);
        assert!((alpha[0] - alpha[1]).abs() < 1e-9);
        assert!(rho.abs() < 1e-9);
        // margin condition y_i f(x_i) = 1 for free vectors
        let f0 = alpha[0] * k[0][0] - alpha[1] * k[0][1] - rho;
        assert!((f0 - 1.0).abs() < 1e-6, "{f0}");
    }

    #[test]
    fn kkt_conditions_hold() {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..40 {
            let t = i as f64;
            rows.push(vec![(t * 0.9).sin() * 2.0 + if i % 2 == 0 { 1.0 } else { -1.0 }, (t * 0.4).cos()]);
            labels.push(if i % 2 == 0 { ClassLabel::F } else { ClassLabel::G });
        }
        let y: Vec<f64> = labels.iter().map(|&l| if l == ClassLabel::F { 1.0 } else { -1.0 }).collect();
        let k: Vec<Vec<f64>> = rows.iter().map(|a| rows.iter().map(|b| rbf(0.5, a, b)).collect()).collect();
        let c = 1.0;
        let (alpha, rho) = smo(&k, &y, c);
        let eq: f64 = alpha.iter().zip(&y).map(|(a, y)| a * y).sum();
        assert!(eq.abs() < 1e-9);
        for i in 0..y.len() {
            let f: f64 = (0..y.len()).map(|j| alpha[j] * y[j] * k[i][j]).sum::<f64>() - rho;
            let m = y[i] * f;
            assert!((0.0..=c).contains(&alpha[i]));
            if alpha[i] <= 0.0 {
                assert!(m >= 1.0 - 2e-3, "i={i} m={m}");
            } else if alpha[i] >= c {
                assert!(m <= 1.0 + 2e-3, "i={i} m={m}");
            } else {
                assert!((m - 1.0).abs() < 2e-3, "i={i} m={m}");
            }
        }
    }
}
