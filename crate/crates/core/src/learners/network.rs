//! Feed-forward networks trained by Levenberg-Marquardt.
//!
//! Hidden layers use `tanh`, the output layer is linear. Hidden weights are
//! initialised with the Nguyen-Widrow rule, which gives each hidden unit an
//! input-weight row of norm `0.7 * h^(1/n)` (`h` units, fan-in `n`).

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::scaling::RangeMap;
use crate::dataset::Samples;
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkTopology {
    pub n_inputs: usize,
    pub n_outputs: usize,
    pub hidden_layers: Vec<usize>,
}

impl NetworkTopology {
    /// Three-class classifier topology.
    pub fn classifier(n_inputs: usize, hidden_layers: Vec<usize>) -> Self {
        NetworkTopology {
            n_inputs,
            n_outputs: 3,
            hidden_layers,
        }
    }

    /// `(fan_in, width)` per layer, output layer last.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::with_capacity(self.hidden_layers.len() + 1);
        let mut fan_in = self.n_inputs;
        for &h in &self.hidden_layers {
            shapes.push((fan_in, h));
            fan_in = h;
        }
        shapes.push((fan_in, self.n_outputs));
        shapes
    }

    pub fn n_params(&self) -> usize {
        self.layer_shapes().iter().map(|(i, o)| (i + 1) * o).sum()
    }
}

/// Candidate hidden-layer widths from three closed-form rules of thumb.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HiddenNeuronCandidates {
    /// `(rule index, value)` for rules yielding a finite positive width.
    pub raw: Vec<(usize, f64)>,
    pub rounded: Vec<usize>,
}

/// Evaluates
/// 0. `(sqrt(1 + 8 n_i) - 1) / 2`
/// 1. `sqrt(n_i n_o)`
/// 2. `(4 n_i^2 + 3) / (n_i^2 - 8)`
///
/// and keeps the finite, strictly positive results.
pub fn hidden_neuron_candidates(n_i: usize, n_o: usize) -> HiddenNeuronCandidates {
    let ni = n_i as f64;
    let no = n_o as f64;
    let values = [
        ((1.0 + 8.0 * ni).sqrt() - 1.0) / 2.0,
        (ni * no).sqrt(),
        (4.0 * ni * ni + 3.0) / (ni * ni - 8.0),
    ];
    let raw: Vec<(usize, f64)> = values
        .iter()
        .copied()
        .enumerate()
        .filter(|(_, v)| v.is_finite() && *v > 0.0)
        .collect();
    let rounded = raw.iter().map(|(_, v)| (v.round() as usize).max(1)).collect();
    HiddenNeuronCandidates { raw, rounded }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub topology: NetworkTopology,
    /// Flat parameters, per layer: row-major weights (`width x fan_in`), then biases.
    pub params: Vec<f64>,
}

/// Nguyen-Widrow scale `0.7 * h^(1/n)`.
pub fn nguyen_widrow_beta(width: usize, fan_in: usize) -> f64 {
    0.7 * (width as f64).powf(1.0 / fan_in as f64)
}

/// Hidden layers: each unit's weight row is a random direction rescaled to
/// norm `beta`, its bias uniform in `[-beta, beta]`. Output layer: weights
/// and biases uniform in `[-0.5, 0.5]`.
pub fn nguyen_widrow_init(topology: &NetworkTopology, seed: u64) -> Network {
    let mut rng = seed::rng(seed);
    let shapes = topology.layer_shapes();
    let mut params = Vec::with_capacity(topology.n_params());
    for (layer, &(fan_in, width)) in shapes.iter().enumerate() {
        let is_output = layer + 1 == shapes.len();
        if is_output {
            for _ in 0..(fan_in + 1) * width {
                params.push(rng.random_range(-0.5..=0.5));
            }
            continue;
        }
        let beta = nguyen_widrow_beta(width, fan_in);
        let mut biases = Vec::with_capacity(width);
        for _ in 0..width {
            let row = loop {
                let r: Vec<f64> = (0..fan_in).map(|_| rng.random_range(-0.5..=0.5)).collect();
                let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > 1e-8 {
                    break r.into_iter().map(|v| v * beta / norm).collect::<Vec<_>>();
                }
            };
            params.extend(row);
            biases.push(rng.random_range(-beta..=beta));
        }
        params.extend(biases);
    }
    Network {
        topology: topology.clone(),
        params,
    }
}

impl Network {
    /// Per-layer activations, input first.
    fn forward_all(&self, params: &[f64], input: &[f64]) -> Vec<Vec<f64>> {
        let shapes = self.topology.layer_shapes();
        let mut acts = Vec::with_capacity(shapes.len() + 1);
        acts.push(input.to_vec());
        let mut off = 0;
        for (layer, &(fan_in, width)) in shapes.iter().enumerate() {
            let w = &params[off..off + fan_in * width];
            let b = &params[off + fan_in * width..off + (fan_in + 1) * width];
            off += (fan_in + 1) * width;
            let prev = acts.last().expect("input pushed");
            let is_output = layer + 1 == shapes.len();
            let out: Vec<f64> = (0..width)
                .map(|u| {
                    let z = b[u] + w[u * fan_in..(u + 1) * fan_in].iter().zip(prev).map(|(a, x)| a * x).sum::<f64>();
                    if is_output {
                        z
                    } else {
                        z.tanh()
                    }
                })
                .collect();
            acts.push(out);
        }
        acts
    }

    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        self.forward_all(&self.params, input).pop().expect("output layer")
    }

    fn sse(&self, params: &[f64], inputs: &[Vec<f64>], targets: &[Vec<f64>]) -> f64 {
        inputs
            .iter()
            .zip(targets)
            .map(|(x, t)| {
                let acts = self.forward_all(params, x);
                let y = acts.last().expect("output layer");
                y.iter().zip(t).map(|(a, b)| (b - a).powi(2)).sum::<f64>()
            })
            .sum()
    }

    /// Jacobian of the outputs w.r.t. the parameters and residuals `t - y`,
    /// one row per (sample, output).
    fn jacobian(&self, inputs: &[Vec<f64>], targets: &[Vec<f64>]) -> (DMatrix<f64>, DVector<f64>) {
        let shapes = self.topology.layer_shapes();
        let n_out = self.topology.n_outputs;
        let m = inputs.len() * n_out;
        let np = self.params.len();
        let mut jac = DMatrix::zeros(m, np);
        let mut resid = DVector::zeros(m);
        let mut offsets = Vec::with_capacity(shapes.len());
        let mut off = 0;
        for &(fan_in, width) in &shapes {
            offsets.push(off);
            off += (fan_in + 1) * width;
        }

        for (s, (x, t)) in inputs.iter().zip(targets).enumerate() {
            let acts = self.forward_all(&self.params, x);
            let y = acts.last().expect("output layer");
            for o in 0..n_out {
                let row = s * n_out + o;
                resid[row] = t[o] - y[o];
                // dy_o / dz for the current layer's pre-activations
                let mut delta = vec![0.0; n_out];
                delta[o] = 1.0;
                for layer in (0..shapes.len()).rev() {
                    let (fan_in, width) = shapes[layer];
                    let base = offsets[layer];
                    let prev = &acts[layer];
                    for u in 0..width {
                        if delta[u] == 0.0 {
                            continue;
                        }
                        for k in 0..fan_in {
                            jac[(row, base + u * fan_in + k)] = delta[u] * prev[k];
                        }
                        jac[(row, base + fan_in * width + u)] = delta[u];
                    }
                    if layer == 0 {
                        break;
                    }
                    let w = &self.params[base..base + fan_in * width];
                    let mut next = vec![0.0; fan_in];
                    for k in 0..fan_in {
                        let back: f64 = (0..width).map(|u| delta[u] * w[u * fan_in + k]).sum();
                        next[k] = back * (1.0 - prev[k] * prev[k]);
                    }
                    delta = next;
                }
            }
        }
        (jac, resid)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopping {
    pub val_fraction: f64,
    /// Consecutive validation checks without improvement that are tolerated;
    /// training halts on the next one.
    pub patience: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LmConfig {
    pub mu0: f64,
    pub mu_factor: f64,
    pub mu_max: f64,
    pub max_iters: usize,
    pub early_stopping: Option<EarlyStopping>,
}

impl Default for LmConfig {
    fn default() -> Self {
        LmConfig {
            mu0: 1e-3,
            mu_factor: 2.0,
            mu_max: 1e10,
            max_iters: 200,
            early_stopping: Some(EarlyStopping {
                val_fraction: 0.15,
                patience: 6,
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    MaxIterations,
    MuOverflow,
    ValidationRising,
    Converged,
}

#[derive(Debug, Clone)]
pub struct LmOutcome {
    pub network: Network,
    /// Training SSE at the start and after every accepted step.
    pub sse_history: Vec<f64>,
    pub iterations: usize,
    pub stop_reason: StopReason,
}

/// Solves `(J^T J + mu I) delta = J^T e`.
pub fn lm_step(jac: &DMatrix<f64>, resid: &DVector<f64>, mu: f64) -> Option<DVector<f64>> {
    let mut a = jac.transpose() * jac;
    for i in 0..a.nrows() {
        a[(i, i)] += mu;
    }
    let g = jac.transpose() * resid;
    a.cholesky().map(|c| c.solve(&g))
}

/// Trains `topology` from a Nguyen-Widrow start. When early stopping is
/// configured, a seeded `val_fraction` of the rows is held out for
/// validation and the best-validation weights are returned.
pub fn train_lm(
    topology: &NetworkTopology,
    inputs: &[Vec<f64>],
    targets: &[Vec<f64>],
    config: &LmConfig,
    seed: u64,
) -> Result<LmOutcome> {
    let init = nguyen_widrow_init(topology, seed::mix(seed, 1));
    let n_val = config
        .early_stopping
        .map_or(0, |es| (es.val_fraction * inputs.len() as f64).round() as usize);
    if n_val == 0 || n_val >= inputs.len() {
        let cfg = LmConfig {
            early_stopping: None,
            ..*config
        };
        return train_lm_from(init, (inputs, targets), None, &cfg);
    }
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    order.shuffle(&mut seed::rng(seed::mix(seed, 2)));
    let (val_idx, train_idx) = order.split_at(n_val);
    let pick = |idx: &[usize], src: &[Vec<f64>]| idx.iter().map(|&i| src[i].clone()).collect::<Vec<_>>();
    let (tx, ty) = (pick(train_idx, inputs), pick(train_idx, targets));
    let (vx, vy) = (pick(val_idx, inputs), pick(val_idx, targets));
    train_lm_from(init, (&tx, &ty), Some((&vx, &vy)), config)
}

type Rows<'a> = (&'a [Vec<f64>], &'a [Vec<f64>]);

/// Levenberg-Marquardt from explicit initial weights and an optional
/// explicit validation set.
pub fn train_lm_from(
    mut net: Network,
    train: Rows<'_>,
    validation: Option<Rows<'_>>,
    config: &LmConfig,
) -> Result<LmOutcome> {
    let (x, t) = train;
    let mut sse = net.sse(&net.params, x, t);
    if !sse.is_finite() {
        return Err(Error::Training {
            iteration: 0,
            message: format!("initial training loss is {sse}"),
        });
    }
    let mut history = vec![sse];
    let mut mu = config.mu0;
    let patience = validation.and(config.early_stopping.map(|e| e.patience));
    let mut best_val = validation.map_or(f64::INFINITY, |(vx, vt)| net.sse(&net.params, vx, vt));
    let mut best_params = net.params.clone();
    let mut fails = 0usize;
    let mut stop = StopReason::MaxIterations;
    let mut iterations = 0;

    'outer: for it in 0..config.max_iters {
        iterations = it + 1;
        let (jac, resid) = net.jacobian(x, t);
        let grad_norm = (jac.transpose() * &resid).norm();
        if grad_norm < 1e-12 || sse == 0.0 {
            stop = StopReason::Converged;
            break;
        }
        loop {
            if let Some(delta) = lm_step(&jac, &resid, mu) {
                let cand: Vec<f64> = net.params.iter().zip(delta.iter()).map(|(w, d)| w + d).collect();
                let cand_sse = net.sse(&cand, x, t);
                if cand_sse.is_finite() && cand_sse < sse {
                    net.params = cand;
                    sse = cand_sse;
                    history.push(sse);
                    mu /= config.mu_factor;
                    break;
                }
            }
            mu *= config.mu_factor;
            if mu > config.mu_max {
                stop = StopReason::MuOverflow;
                break 'outer;
            }
        }
        if !sse.is_finite() {
            return Err(Error::Training {
                iteration: it,
                message: "training loss became non-finite".into(),
            });
        }
        if let (Some((vx, vt)), Some(patience)) = (validation, patience) {
            let v = net.sse(&net.params, vx, vt);
            if v < best_val {
                best_val = v;
                best_params = net.params.clone();
                fails = 0;
            } else {
                fails += 1;
                if fails > patience {
                    stop = StopReason::ValidationRising;
                    break;
                }
            }
        }
    }
    if patience.is_some() {
        net.params = best_params;
    }
    Ok(LmOutcome {
        network: net,
        sse_history: history,
        iterations,
        stop_reason: stop,
    })
}

/// The NN1/NN2/NN3 learners: inputs mapped to [-1, 1] by training range,
/// one-hot targets, raw linear outputs as class scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkModel {
    input_map: RangeMap,
    network: Network,
}

impl NetworkModel {
    pub fn fit(data: &Samples, hidden: Vec<usize>, seed: u64) -> Result<Self> {
        let input_map = RangeMap::fit(&data.rows);
        let inputs: Vec<Vec<f64>> = data.rows.iter().map(|r| input_map.apply(r)).collect();
        let targets: Vec<Vec<f64>> = data
            .labels
            .iter()
            .map(|l| {
                let mut t = vec![0.0; 3];
                t[l.index()] = 1.0;
                t
            })
            .collect();
        let topology = NetworkTopology::classifier(data.n_features(), hidden);
        let out = train_lm(&topology, &inputs, &targets, &LmConfig::default(), seed)?;
        Ok(NetworkModel {
            input_map,
            network: out.network,
        })
    }

    pub fn score(&self, row: &[f64]) -> [f64; 3] {
        let y = self.network.forward(&self.input_map.apply(row));
        [y[0], y[1], y[2]]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn candidates_for_nine_inputs() {
        let c = hidden_neuron_candidates(9, 3);
        let raw: Vec<f64> = c.raw.iter().map(|r| r.1).collect();
        // (sqrt(73)-1)/2, sqrt(27), 327/73
        let want = [(73f64.sqrt() - 1.0) / 2.0, 27f64.sqrt(), 327.0 / 73.0];
        assert_eq!(raw.len(), 3);
        for (a, b) in raw.iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((raw[0] - 3.77).abs() < 0.005 && (raw[1] - 5.20).abs() < 0.005 && (raw[2] - 4.48).abs() < 0.005);
        assert!(raw.iter().all(|v| (2.0..=6.0).contains(v)));
        assert_eq!(c.rounded, vec![4, 5, 4]);
    }

    #[test]
    fn third_rule_discarded_for_two_inputs() {
        let c = hidden_neuron_candidates(2, 3);
        assert_eq!(c.raw.len(), 2);
        assert!(c.raw.iter().all(|(i, _)| *i != 2));
    }

    #[test]
    fn beta_values() {
        assert!((nguyen_widrow_beta(5, 9) - 0.837).abs() < 5e-4);
        assert_eq!(nguyen_widrow_beta(1, 1), 0.7);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let topo = NetworkTopology::classifier(3, vec![4, 2]);
        let net = nguyen_widrow_init(&topo, 9);
        let x = vec![vec![0.3, -0.2, 0.9], vec![-0.7, 0.1, 0.0]];
        let t = vec![vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0]];
        let (jac, _) = net.jacobian(&x, &t);
        let h = 1e-6;
        for p in 0..net.params.len() {
            let mut plus = net.clone();
            plus.params[p] += h;
            let mut minus = net.clone();
            minus.params[p] -= h;
            for (s, xi) in x.iter().enumerate() {
                let (yp, ym) = (plus.forward(xi), minus.forward(xi));
                for o in 0..3 {
                    let fd = (yp[o] - ym[o]) / (2.0 * h);
                    assert!((jac[(s * 3 + o, p)] - fd).abs() < 1e-7, "param {p}");
                }
            }
        }
    }
    fn line_data() -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let x: Vec<Vec<f64>> = (0..20).map(|i| vec![-1.0 + 2.0 * i as f64 / 19.0]).collect();
        let t = x.iter().map(|r| vec![0.5 * r[0] + 0.25]).collect();
        (x, t)
    }

    #[test]
    fn lm_fits_linear_target_with_one_unit() {
        let (x, t) = line_data();
        let topo = NetworkTopology {
            n_inputs: 1,
            n_outputs: 1,
            hidden_layers: vec![1],
        };
        let cfg = LmConfig {
            max_iters: 100,
            early_stopping: None,
            ..LmConfig::default()
        };
        let out = train_lm(&topo, &x, &t, &cfg, 3).unwrap();
        let mse = out.sse_history.last().unwrap() / x.len() as f64;
        assert!(out.iterations <= 100);
        assert!(mse < 1e-8, "mse {mse} after {} iterations", out.iterations);
        assert!(out.sse_history.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn huge_damping_approaches_gradient_direction() {
        let (x, t) = line_data();
        let topo = NetworkTopology::classifier(1, vec![3]);
        let targets: Vec<Vec<f64>> = t.iter().map(|v| vec![v[0], 1.0 - v[0], 0.2]).collect();
        let net = nguyen_widrow_init(&topo, 5);
        let (jac, resid) = net.jacobian(&x, &targets);
        let mu = 1e9;
        let step = lm_step(&jac, &resid, mu).unwrap();
        let grad = jac.transpose() * &resid / mu;
        let cos = step.dot(&grad) / (step.norm() * grad.norm());
        assert!(cos.min(1.0).acos() < 1e-3);
    }

    #[test]
    fn zero_patience_with_validation_equal_to_training_runs_to_max_iters() {
        let (x, t) = line_data();
        let topo = NetworkTopology {
            n_inputs: 1,
            n_outputs: 1,
            hidden_layers: vec![2],
        };
        let cfg = LmConfig {
            max_iters: 25,
            early_stopping: Some(EarlyStopping {
                val_fraction: 0.0,
                patience: 0,
            }),
            ..LmConfig::default()
        };
        let init = nguyen_widrow_init(&topo, 8);
        let out = train_lm_from(init, (&x, &t), Some((&x, &t)), &cfg).unwrap();
        assert_eq!(out.stop_reason, StopReason::MaxIterations);
        assert_eq!(out.iterations, 25);
    }

    #[test]
    fn non_finite_targets_are_a_training_error() {
        let (x, mut t) = line_data();
        t[3][0] = f64::NAN;
        let topo = NetworkTopology {
            n_inputs: 1,
            n_outputs: 1,
            hidden_layers: vec![1],
        };
        let err = train_lm(&topo, &x, &t, &LmConfig::default(), 1).unwrap_err();
        assert!(matches!(err, Error::Training { iteration: 0, .. }));
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(1000))]
        #[test]
        fn hidden_rows_have_norm_beta(h in 1usize..12, n in 1usize..15, seed in proptest::prelude::any::<u64>()) {
            let topo = NetworkTopology::classifier(n, vec![h]);
            let net = nguyen_widrow_init(&topo, seed);
            let beta = nguyen_widrow_beta(h, n);
            for u in 0..h {
                let row = &net.params[u * n..(u + 1) * n];
                let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                proptest::prop_assert!((norm - beta).abs() < 1e-10);
            }
            for b in &net.params[h * n..h * n + h] {
                proptest::prop_assert!(b.abs() <= beta);
            }
        }
    }
}
