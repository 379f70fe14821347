use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Samples;
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Node {
    Leaf {
        class: u8,
    },
    Split {
        feature: u32,
        threshold: f64,
        left: u32,
        right: u32,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn predict(&self, row: &[f64]) -> usize {
        let mut at = 0usize;
        loop {
            match &self.nodes[at] {
                Node::Leaf { class } => return *class as usize,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if row[*feature as usize] <= *threshold {
                        *left as usize
                    } else {
                        *right as usize
                    }
                }
            }
        }
    }
}

fn gini_impurity(counts: &[usize; 3], n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>()
}

fn majority(counts: &[usize; 3]) -> u8 {
    // ties resolve to the lower class index
    let mut best = 0;
    for c in 1..3 {
        if counts[c] > counts[best] {
            best = c;
        }
    }
    best as u8
}

struct Builder<'a, R: Rng> {
    x: &'a [Vec<f64>],
    y: &'a [usize],
    mtry: usize,
    rng: R,
    nodes: Vec<Node>,
}

impl<R: Rng> Builder<'_, R> {
    /// Grows the subtree over `idx` until nodes are pure or unsplittable
    /// (minimum leaf size 1).
    fn grow(&mut self, idx: &mut [usize]) -> u32 {
        let mut counts = [0usize; 3];
        for &i in idx.iter() {
            counts[self.y[i]] += 1;
        }
        let id = self.nodes.len() as u32;
        self.nodes.push(Node::Leaf { class: majority(&counts) });
        let n = idx.len();
        let parent = gini_impurity(&counts, n);
        if n < 2 || parent == 0.0 {
            return id;
        }

        let p = self.x[0].len();
        let features = sample(&mut self.rng, p, self.mtry);
        let mut best: Option<(f64, usize, f64)> = None;
        let mut order: Vec<usize> = idx.to_vec();
        for f in features.iter() {
            order.sort_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]));
            let mut left = [0usize; 3];
            for k in 0..n - 1 {
                left[self.y[order[k]]] += 1;
                let lo = self.x[order[k]][f];
                let hi = self.x[order[k + 1]][f];
                if lo == hi {
                    continue;
                }
                let right = [counts[0] - left[0], counts[1] - left[1], counts[2] - left[2]];
                let nl = k + 1;
                let nr = n - nl;
                let weighted =
                    (nl as f64 * gini_impurity(&left, nl) + nr as f64 * gini_impurity(&right, nr)) / n as f64;
                if best.is_none_or(|(b, _, _)| weighted < b) {
                    best = Some((weighted, f, 0.5 * (lo + hi)));
                }
            }
        }
        let Some((impurity, feature, threshold)) = best else {
            return id;
        };
        if impurity >= parent - 1e-12 {
            return id;
        }

        let mut split_at = 0;
        for k in 0..n {
            if self.x[idx[k]][feature] <= threshold {
                idx.swap(k, split_at);
                split_at += 1;
            }
        }
        let (l, r) = idx.split_at_mut(split_at);
        let left = self.grow(l);
        let right = self.grow(r);
        self.nodes[id as usize] = Node::Split {
            feature: feature as u32,
            threshold,
            left,
            right,
        };
        id
    }
}

/// Random forest of unpruned CART trees on bootstrap resamples, Gini
/// impurity splits over `mtry` random features per node. A row's score for
/// a class is the fraction of trees voting for it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    trees: Vec<Tree>,
}

impl Forest {
    pub fn fit(data: &Samples, mtry: usize, n_trees: usize, seed: u64) -> Self {
        let y: Vec<usize> = data.labels.iter().map(|l| l.index()).collect();
        let n = data.len();
        let trees = (0..n_trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = seed::rng(seed::mix(seed, t as u64));
                let mut idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
                let mut b = Builder {
                    x: &data.rows,
                    y: &y,
                    mtry,
                    rng,
                    nodes: Vec::new(),
                };
                b.grow(&mut idx);
                Tree { nodes: b.nodes }
            })
            .collect();
        Forest { trees }
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn score(&self, row: &[f64]) -> [f64; 3] {
        let mut votes = [0usize; 3];
        for t in &self.trees {
            votes[t.predict(row)] += 1;
        }
        let n = self.trees.len() as f64;
        votes.map(|v| v as f64 / n)
    }
}
