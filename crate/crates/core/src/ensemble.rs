//! Ensembles of baggings: enumeration, multi-split evaluation with
//! Monte-Carlo significance, and selection.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bagging::BaggedModel;
use crate::dataset::{ClassLabel, Samples};
use crate::error::{Error, Result};
use crate::learners::{ClassScores, LearnerKind, Scorer};
use crate::metrics::{averaged_gini, normalize_class_scores, GiniSummary, NullDistribution};
use crate::seed;

/// A non-empty set of learner kinds, bit `i` standing for `LearnerKind::ALL[i]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EnsembleId(u8);

impl EnsembleId {
    pub fn from_bits(bits: u8) -> Result<Self> {
        if bits == 0 {
            return Err(Error::Validation("an ensemble needs at least one member".into()));
        }
        Ok(EnsembleId(bits))
    }

    pub fn from_kinds(kinds: &[LearnerKind]) -> Result<Self> {
        Self::from_bits(kinds.iter().fold(0u8, |acc, k| acc | 1 << k.index()))
    }

    pub fn bits(self) -> u8 {
        self.0
    }

    pub fn contains(self, kind: LearnerKind) -> bool {
        self.0 & (1 << kind.index()) != 0
    }

    pub fn members(self) -> Vec<LearnerKind> {
        LearnerKind::ALL.into_iter().filter(|&k| self.contains(k)).collect()
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        false
    }
}

impl std::fmt::Display for EnsembleId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let names: Vec<&str> = self.members().iter().map(|k| k.name()).collect();
        f.write_str(&names.join("+"))
    }
}

/// Every non-empty subset of `available`, ascending by bitmask.
pub fn enumerate_ensembles(available: &[LearnerKind]) -> Result<Vec<EnsembleId>> {
    let mask = EnsembleId::from_kinds(available)
        .map_err(|_| Error::Validation("no learner kinds available to enumerate".into()))?
        .bits();
    Ok((1..=u8::MAX)
        .filter(|b| b & !mask == 0)
        .map(EnsembleId)
        .collect())
}

/// Normalizes each member's columns over the rows, then averages them per class.
pub fn combine_scores(members: &[&ClassScores]) -> Result<ClassScores> {
    let Some(first) = members.first() else {
        return Err(Error::Validation("cannot combine an empty member list".into()));
    };
    let n = first.len();
    if members.iter().any(|m| m.len() != n) {
        return Err(Error::Validation("member score tables differ in length".into()));
    }
    let normalized: Vec<ClassScores> = members.iter().map(|m| normalize_class_scores(m)).collect();
    let k = members.len() as f64;
    let rows = (0..n)
        .map(|r| [0, 1, 2].map(|c| normalized.iter().map(|m| m.rows[r][c]).sum::<f64>() / k))
        .collect();
    Ok(ClassScores { rows, normalized: true })
}

/// Scores `rows` with every bagging and combines the results.
pub fn combine_baggings(members: &[&BaggedModel], rows: &Samples) -> Result<ClassScores> {
    let raw = members
        .iter()
        .map(|b| crate::bagging::bagging_score(b, rows))
        .collect::<Result<Vec<_>>>()?;
    combine_scores(&raw.iter().collect::<Vec<_>>())
}

/// Raw bagging scores on one outer split's test rows, indexed by
/// `LearnerKind::index`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitScores {
    pub split: usize,
    pub labels: Vec<ClassLabel>,
    pub scores: Vec<Option<ClassScores>>,
}

impl SplitScores {
    pub fn new(split: usize, labels: Vec<ClassLabel>) -> Self {
        SplitScores {
            split,
            labels,
            scores: vec![None; LearnerKind::ALL.len()],
        }
    }

    pub fn insert(&mut self, kind: LearnerKind, scores: ClassScores) {
        self.scores[kind.index()] = Some(scores);
    }

    pub fn get(&self, kind: LearnerKind) -> Option<&ClassScores> {
        self.scores[kind.index()].as_ref()
    }

    pub fn available(&self) -> Vec<LearnerKind> {
        LearnerKind::ALL.into_iter().filter(|&k| self.get(k).is_some()).collect()
    }

    pub fn combined(&self, id: EnsembleId) -> Result<ClassScores> {
        let members = id
            .members()
            .into_iter()
            .map(|k| {
                self.get(k).ok_or(Error::MissingBagging {
                    split: self.split,
                    kind: k,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        combine_scores(&members)
    }
}

/// Null distributions for each split's test labels, seeded by `mix(seed, split)`.
pub fn null_distributions(splits: &[SplitScores], n_sim: usize, seed: u64) -> Result<Vec<NullDistribution>> {
    splits
        .iter()
        .map(|s| NullDistribution::simulate(&s.labels, n_sim, seed::mix(seed, s.split as u64)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitEvaluation {
    pub split: usize,
    pub gini: GiniSummary,
    /// Per class, (F, G, W).
    pub p_values: [f64; 3],
    pub p_value_averaged: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleEvaluation {
    pub id: EnsembleId,
    pub per_split: Vec<SplitEvaluation>,
    pub mean_averaged_gini: f64,
}

pub fn evaluate_with_nulls(id: EnsembleId, splits: &[SplitScores], nulls: &[NullDistribution]) -> Result<EnsembleEvaluation> {
    if splits.is_empty() || splits.len() != nulls.len() {
        return Err(Error::Validation(format!(
            "{} splits but {} null distributions",
            splits.len(),
            nulls.len()
        )));
    }
    let per_split = splits
        .iter()
        .zip(nulls)
        .map(|(s, null)| {
            let gini = averaged_gini(&s.combined(id)?, &s.labels)?;
            Ok(SplitEvaluation {
                split: s.split,
                gini,
                p_values: null.class_p_values(&gini.per_class),
                p_value_averaged: null.p_value(gini.mean),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mean_averaged_gini = per_split.iter().map(|e| e.gini.mean).sum::<f64>() / per_split.len() as f64;
    Ok(EnsembleEvaluation {
        id,
        per_split,
        mean_averaged_gini,
    })
}

pub fn evaluate_across_splits(id: EnsembleId, splits: &[SplitScores], n_sim: usize, seed: u64) -> Result<EnsembleEvaluation> {
    evaluate_with_nulls(id, splits, &null_distributions(splits, n_sim, seed)?)
}

/// Evaluates every id in parallel; output order follows `ids`.
pub fn evaluate_all(ids: &[EnsembleId], splits: &[SplitScores], nulls: &[NullDistribution]) -> Result<Vec<EnsembleEvaluation>> {
    ids.par_iter().map(|&id| evaluate_with_nulls(id, splits, nulls)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionMode {
    /// Every class significant on every split.
    #[default]
    Strict,
    /// Only class W gated.
    TargetClass,
}

impl std::str::FromStr for SelectionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "strict" => Ok(SelectionMode::Strict),
            "target-class" => Ok(SelectionMode::TargetClass),
            other => Err(Error::Validation(format!("unknown selection mode {other:?}"))),
        }
    }
}

impl EnsembleEvaluation {
    pub fn passes(&self, alpha: f64, mode: SelectionMode) -> bool {
        self.per_split.iter().all(|s| match mode {
            SelectionMode::Strict => s.p_values.iter().all(|&p| p <= alpha),
            SelectionMode::TargetClass => s.p_values[ClassLabel::W.index()] <= alpha,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEnsemble {
    pub rank: usize,
    pub significant: bool,
    pub evaluation: EnsembleEvaluation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub mode: SelectionMode,
    pub alpha: f64,
    pub winner: Option<EnsembleId>,
    pub no_winner_reason: Option<String>,
    /// Best first: mean averaged Gini descending, then fewer members, then bitmask.
    pub ranked: Vec<RankedEnsemble>,
}

fn rank_order(a: &EnsembleEvaluation, b: &EnsembleEvaluation) -> std::cmp::Ordering {
    b.mean_averaged_gini
        .total_cmp(&a.mean_averaged_gini)
        .then(a.id.len().cmp(&b.id.len()))
        .then(a.id.cmp(&b.id))
}

/// Picks the highest-ranked evaluation that passes the significance gate.
pub fn select_best(evals: &[EnsembleEvaluation], alpha: f64, mode: SelectionMode) -> Selection {
    let mut sorted: Vec<&EnsembleEvaluation> = evals.iter().collect();
    sorted.sort_by(|a, b| rank_order(a, b));
    let ranked: Vec<RankedEnsemble> = sorted
        .into_iter()
        .enumerate()
        .map(|(i, e)| RankedEnsemble {
            rank: i + 1,
            significant: e.passes(alpha, mode),
            evaluation: e.clone(),
        })
        .collect();
    let winner = ranked.iter().find(|r| r.significant).map(|r| r.evaluation.id);
    let no_winner_reason = match (winner, ranked.is_empty()) {
        (Some(_), _) => None,
        (None, true) => Some("no ensembles were evaluated".into()),
        (None, false) => Some(format!(
            "none of the {} ensembles is significant at alpha {alpha} on every split ({} mode)",
            ranked.len(),
            match mode {
                SelectionMode::Strict => "strict",
                SelectionMode::TargetClass => "target-class",
            }
        )),
    };
    Selection {
        mode,
        alpha,
        winner,
        no_winner_reason,
        ranked,
    }
}

impl Selection {
    /// One row per ensemble and split.
    pub fn write_ranked_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "rank",
            "bitmask",
            "members",
            "mean_gini",
            "significant",
            "split",
            "gini_F",
            "gini_G",
            "gini_W",
            "gini_mean",
            "p_F",
            "p_G",
            "p_W",
            "p_mean",
        ])?;
        for r in &self.ranked {
            let e = &r.evaluation;
            for s in &e.per_split {
                w.write_record([
                    r.rank.to_string(),
                    e.id.bits().to_string(),
                    e.id.to_string(),
                    e.mean_averaged_gini.to_string(),
                    r.significant.to_string(),
                    s.split.to_string(),
                    s.gini.per_class[0].to_string(),
                    s.gini.per_class[1].to_string(),
                    s.gini.per_class[2].to_string(),
                    s.gini.mean.to_string(),
                    s.p_values[0].to_string(),
                    s.p_values[1].to_string(),
                    s.p_values[2].to_string(),
                    s.p_value_averaged.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Treats an ensemble of baggings as a single [`Scorer`].
pub fn ensemble_scorer<'a>(members: Vec<&'a BaggedModel>) -> EnsembleScorer<'a> {
    EnsembleScorer { members }
}

/// Scores rows with several baggings and combines them.
pub struct EnsembleScorer<'a> {
    members: Vec<&'a BaggedModel>,
}

impl Scorer for EnsembleScorer<'_> {
    fn n_features(&self) -> usize {
        self.members.first().map_or(0, |b| b.n_features())
    }

    fn score_rows(&self, rows: &[Vec<f64>]) -> Result<ClassScores> {
        let raw = self.members.iter().map(|b| b.score_rows(rows)).collect::<Result<Vec<_>>>()?;
        combine_scores(&raw.iter().collect::<Vec<_>>())
    }
}
