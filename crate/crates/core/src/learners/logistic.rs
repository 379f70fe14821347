use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::scaling::{log_sum_exp, softmax3, Standardizer};
use crate::dataset::Samples;

const MAX_ITERS: usize = 200;
const GRAD_TOL: f64 = 1e-8;

/// Unregularized multinomial logistic regression.
///
/// Class W is the reference (logit fixed at 0); F and G each carry an
/// intercept plus one weight per standardized feature. Fitted by damped
/// Newton steps with Armijo backtracking until the gradient norm drops to
/// 1e-8 or 200 iterations pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    scaler: Standardizer,
    /// `[class F, class G]`, each `[intercept, w_1, .., w_p]`.
    coef: [Vec<f64>; 2],
    pub iterations: usize,
}

struct Objective<'a> {
    x: &'a [Vec<f64>],
    y: &'a [usize],
    p: usize,
}

impl Objective<'_> {
    fn logits(&self, theta: &[f64], row: &[f64]) -> [f64; 3] {
        let d = self.p + 1;
        let mut out = [0.0; 3];
        for c in 0..2 {
            let w = &theta[c * d..(c + 1) * d];
            out[c] = w[0] + w[1..].iter().zip(row).map(|(a, b)| a * b).sum::<f64>();
        }
        out
    }

    fn nll(&self, theta: &[f64]) -> f64 {
        self.x
            .iter()
            .zip(self.y)
            .map(|(r, &y)| {
                let l = self.logits(theta, r);
                log_sum_exp(&l) - l[y]
            })
            .sum()
    }

    fn grad_hess(&self, theta: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
        let d = self.p + 1;
        let k = 2 * d;
        let mut g = DVector::zeros(k);
        let mut h = DMatrix::zeros(k, k);
        let mut feat = vec![1.0; d];
        for (r, &y) in self.x.iter().zip(self.y) {
            feat[1..].copy_from_slice(r);
            let prob = softmax3(self.logits(theta, r));
            for a in 0..2 {
                let resid = prob[a] - if y == a { 1.0 } else { 0.0 };
                for i in 0..d {
                    g[a * d + i] += resid * feat[i];
                }
                for b in 0..2 {
                    let w = prob[a] * (if a == b { 1.0 } else { 0.0 } - prob[b]);
                    for i in 0..d {
                        let wi = w * feat[i];
                        for j in 0..d {
                            h[(a * d + i, b * d + j)] += wi * feat[j];
                        }
                    }
                }
            }
        }
        (g, h)
    }
}

impl LogisticModel {
    pub fn fit(data: &Samples) -> Self {
        let scaler = Standardizer::fit(&data.rows);
        let x: Vec<Vec<f64>> = data.rows.iter().map(|r| scaler.apply(r)).collect();
        let y: Vec<usize> = data.labels.iter().map(|l| l.index()).collect();
        let p = data.n_features();
        let obj = Objective { x: &x, y: &y, p };

        let mut theta = vec![0.0; 2 * (p + 1)];
        let mut f = obj.nll(&theta);
        let mut iterations = 0;
        for it in 0..MAX_ITERS {
            iterations = it;
            let (g, h) = obj.grad_hess(&theta);
            if g.norm() <= GRAD_TOL {
                break;
            }
            let Some(dir) = newton_direction(&h, &g) else { break };
            let slope = g.dot(&dir);
            if slope >= 0.0 {
                break;
            }
            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..40 {
                let cand: Vec<f64> = theta.iter().zip(dir.iter()).map(|(a, b)| a + t * b).collect();
                let fc = obj.nll(&cand);
                if fc.is_finite() && fc <= f + 1e-4 * t * slope {
                    theta = cand;
                    f = fc;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if !accepted {
                break;
            }
            iterations = it + 1;
        }

        let d = p + 1;
        LogisticModel {
            scaler,
            coef: [theta[..d].to_vec(), theta[d..].to_vec()],
            iterations,
        }
    }

    pub fn score(&self, row: &[f64]) -> [f64; 3] {
        let z = self.scaler.apply(row);
        let lin = |w: &[f64]| w[0] + w[1..].iter().zip(&z).map(|(a, b)| a * b).sum::<f64>();
        softmax3([lin(&self.coef[0]), lin(&self.coef[1]), 0.0])
    }
}

/// Solves `(H + lambda I) d = -g`, growing the damping until the system is
/// positive definite.
fn newton_direction(h: &DMatrix<f64>, g: &DVector<f64>) -> Option<DVector<f64>> {
    let scale = h.diagonal().amax().max(1.0);
    let mut lambda = 1e-10 * scale;
    for _ in 0..20 {
        let mut m = h.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += lambda;
        }
        if let Some(chol) = m.cholesky() {
            return Some(-chol.solve(g));
        }
        lambda *= 100.0;
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::ClassLabel::{self, *};

    fn blobs() -> Samples {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        let centers = [(F, 0.0, 5.0), (G, 5.0, 0.0), (W, -5.0, -5.0)];
        for (c, cx, cy) in centers {
            for i in 0..12 {
                let a = i as f64 * 0.52;
                rows.push(vec![cx + a.cos(), cy + (1.7 * a).sin()]);
                labels.push(c);
            }
        }
        Samples::from_rows(rows, labels)
    }

    /// Brute-force separability check: some pairwise linear rule classifies
    /// every point; here each class sits in its own angular sector around
    /// the origin by construction, so check one witness direction per pair.
    fn separable(data: &Samples) -> bool {
        let witness: [(ClassLabel, ClassLabel, [f64; 3]); 3] = [
            (F, G, [0.0, -1.0, 1.0]),
            (F, W, [1.5, 0.0, 1.0]),
            (G, W, [1.5, 1.0, 0.0]),
        ];
        witness.iter().all(|&(a, b, w)| {
            data.rows.iter().zip(&data.labels).all(|(r, &l)| {
                let s = w[0] + w[1] * r[0] + w[2] * r[1];
                if l == a {
                    s > 0.0
                } else if l == b {
                    s < 0.0
                } else {
                    true
                }
            })
        })
    }

    #[test]
    fn separable_blobs_fit_perfectly() {
        let data = blobs();
        assert!(separable(&data));
        let m = LogisticModel::fit(&data);
        for (r, &l) in data.rows.iter().zip(&data.labels) {
            let s = m.score(r);
            assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            let best = (0..3).max_by(|&a, &b| s[a].total_cmp(&s[b])).unwrap();
            assert_eq!(best, l.index(), "{r:?} {s:?}");
        }
    }

    #[test]
    fn overlapping_classes_converge() {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..90 {
            let x = (i as f64 * 0.37).sin() * 3.0 + (i % 3) as f64;
            rows.push(vec![x]);
            labels.push(ClassLabel::from_index(i % 3));
        }
        let m = LogisticModel::fit(&Samples::from_rows(rows, labels));
        assert!(m.iterations < MAX_ITERS);
    }
}
