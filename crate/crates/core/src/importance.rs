//! Permutation feature importance under the averaged-Gini objective, and its
//! average over the members of a bagging.

use std::io::Write;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bagging::BaggedModel;
use crate::dataset::Samples;
use crate::error::{Error, Result};
use crate::learners::Scorer;
use crate::metrics::averaged_gini;
use crate::seed;

pub const METHOD: &str = "permutation-averaged-gini";

/// How column values are shuffled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Shuffle {
    #[default]
    Random,
    /// Leaves every column in place; importance is then exactly zero.
    Identity,
}

pub fn permutation_importance<S: Scorer + ?Sized>(model: &S, data: &Samples, n_repeats: usize, seed: u64) -> Result<Vec<f64>> {
    permutation_importance_with(model, data, n_repeats, seed, Shuffle::Random)
}

/// `baseline - mean(permuted)` averaged Gini per feature. Repeat `r` of
/// feature `j` uses the permutation seeded by `mix_all(seed, [j, r])`.
pub fn permutation_importance_with<S: Scorer + ?Sized>(
    model: &S,
    data: &Samples,
    n_repeats: usize,
    seed: u64,
    shuffle: Shuffle,
) -> Result<Vec<f64>> {
    if n_repeats == 0 {
        return Err(Error::Validation("n_repeats must be at least 1".into()));
    }
    let baseline = averaged_gini(&model.score_rows(&data.rows)?, &data.labels)?.mean;
    (0..data.n_features())
        .into_par_iter()
        .map(|j| {
            let mut total = 0.0;
            let mut rows = data.rows.clone();
            for r in 0..n_repeats {
                let mut column: Vec<f64> = data.rows.iter().map(|row| row[j]).collect();
                if shuffle == Shuffle::Random {
                    column.shuffle(&mut seed::rng(seed::mix_all(seed, &[j as u64, r as u64])));
                }
                for (row, v) in rows.iter_mut().zip(column) {
                    row[j] = v;
                }
                total += averaged_gini(&model.score_rows(&rows)?, &data.labels)?.mean;
            }
            Ok(baseline - total / n_repeats as f64)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub feature: String,
    pub mean_importance: f64,
    pub rank: usize,
}

/// Features best first. Ranks are `1..=p`; equal scores are ordered by name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceRanking {
    pub method: String,
    pub features: Vec<FeatureImportance>,
}

impl ImportanceRanking {
    pub fn from_scores(names: &[String], scores: &[f64]) -> Self {
        let mut order: Vec<usize> = (0..names.len()).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then_with(|| names[a].cmp(&names[b])));
        let features = order
            .into_iter()
            .enumerate()
            .map(|(i, j)| FeatureImportance {
                feature: names[j].clone(),
                mean_importance: scores[j],
                rank: i + 1,
            })
            .collect();
        ImportanceRanking {
            method: METHOD.to_string(),
            features,
        }
    }

    pub fn top(&self, n: usize) -> Vec<&str> {
        self.features.iter().take(n).map(|f| f.feature.as_str()).collect()
    }

    pub fn score_of(&self, feature: &str) -> Option<f64> {
        self.features.iter().find(|f| f.feature == feature).map(|f| f.mean_importance)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["feature", "mean_importance", "rank"])?;
        for f in &self.features {
            w.write_record([f.feature.clone(), f.mean_importance.to_string(), f.rank.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Order-independent mean: values are summed smallest first.
fn stable_mean(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    values.iter().sum::<f64>() / values.len() as f64
}

/// Per-feature mean of the members' permutation importances. Each member's
/// permutations are seeded by its sub-split index, so member order does not
/// matter.
pub fn averaged_importance(b: &BaggedModel, data: &Samples, n_repeats: usize, seed: u64) -> Result<ImportanceRanking> {
    if b.members.is_empty() {
        return Err(Error::EmptyBagging {
            kind: b.kind,
            best_gini: f64::NAN,
        });
    }
    let per_member: Vec<Vec<f64>> = b
        .members
        .iter()
        .zip(&b.member_subsplits)
        .map(|(m, &s)| permutation_importance(m, data, n_repeats, seed::mix(seed, s as u64)))
        .collect::<Result<_>>()?;
    let means: Vec<f64> = (0..data.n_features())
        .map(|j| stable_mean(per_member.iter().map(|v| v[j]).collect()))
        .collect();
    Ok(ImportanceRanking::from_scores(&data.feature_names, &means))
}

/// Per-feature mean across several rankings, e.g. one per outer split.
pub fn mean_ranking(rankings: &[ImportanceRanking]) -> Result<ImportanceRanking> {
    let Some(first) = rankings.first() else {
        return Err(Error::Validation("no rankings to average".into()));
    };
    let mut names: Vec<String> = first.features.iter().map(|f| f.feature.clone()).collect();
    names.sort();
    let means = names
        .iter()
        .map(|n| {
            let vals = rankings
                .iter()
                .map(|r| r.score_of(n).ok_or_else(|| Error::Schema(format!("feature {n} missing from a ranking"))))
                .collect::<Result<Vec<_>>>()?;
            Ok(stable_mean(vals))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ImportanceRanking::from_scores(&names, &means))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bagging::{build_bagging, BaggingConfig};
    use crate::dataset::ClassLabel;
    use crate::learners::{train, ClassScores, HyperParams, LearnerKind};
    use rand::Rng;

    /// Label-driven feature 0, pure noise feature 1.
    fn signal_and_noise(n: usize, seed: u64) -> Samples {
        let mut rng = seed::rng(seed);
        let labels: Vec<ClassLabel> = (0..n).map(|i| ClassLabel::from_index(i % 3)).collect();
        let rows = labels
            .iter()
            .map(|l| vec![l.index() as f64 * 10.0 + rng.random_range(-3.0..3.0), rng.random_range(0.0..100.0)])
            .collect();
        Samples::new(vec!["signal".into(), "noise".into()], rows, labels)
    }

    #[test]
    fn noise_feature_scores_near_zero() {
        let data = signal_and_noise(300, 1);
        let model = train(LearnerKind::NaiveBayes, &HyperParams::default(), &data, 0).unwrap();
        let imp = permutation_importance(&model, &data, 10, 7).unwrap();
        assert!(imp[1].abs() < 0.05, "{imp:?}");
        assert!(imp[0] > 0.5);
    }

    #[test]
    fn copied_label_dominates_for_one_nn() {
        let mut data = signal_and_noise(90, 2);
        data.feature_names.push("label".into());
        for (row, l) in data.rows.iter_mut().zip(&data.labels) {
            row.push(l.index() as f64 * 50.0);
        }
        // weaken the signal column so the copied label is the clear best
        for row in data.rows.iter_mut() {
            row[0] = row[0] * 0.1 + row[1];
        }
        let params = HyperParams {
            knn_k: 1,
            ..HyperParams::default()
        };
        let model = train(LearnerKind::Knn, &params, &data, 0).unwrap();
        let imp = permutation_importance(&model, &data, 5, 3).unwrap();
        let r = ImportanceRanking::from_scores(&data.feature_names, &imp);
        assert_eq!(r.top(1), vec!["label"]);
    }

    #[test]
    fn identity_shuffle_gives_zero() {
        let data = signal_and_noise(60, 3);
        let model = train(LearnerKind::Knn, &HyperParams::default(), &data, 0).unwrap();
        let imp = permutation_importance_with(&model, &data, 3, 1, Shuffle::Identity).unwrap();
        assert_eq!(imp, vec![0.0, 0.0]);
    }

    /// Scores from feature 0 only.
    struct FirstColumn;

    impl Scorer for FirstColumn {
        fn n_features(&self) -> usize {
            2
        }

        fn score_rows(&self, rows: &[Vec<f64>]) -> Result<ClassScores> {
            Ok(ClassScores::raw(rows.iter().map(|r| [-(r[0] - 10.0).abs(), -r[0].abs(), r[0]]).collect()))
        }
    }

    #[test]
    fn ignored_feature_scores_exactly_zero() {
        let data = signal_and_noise(60, 4);
        let imp = permutation_importance(&FirstColumn, &data, 4, 9).unwrap();
        assert_eq!(imp[1], 0.0);
        assert!(imp[0] > 0.0);
    }

    #[test]
    fn ranks_are_a_permutation_with_name_tie_break() {
        let names: Vec<String> = ["b", "a", "c", "d"].map(String::from).to_vec();
        let r = ImportanceRanking::from_scores(&names, &[0.5, 0.5, 0.9, -0.1]);
        let order: Vec<(&str, usize)> = r.features.iter().map(|f| (f.feature.as_str(), f.rank)).collect();
        assert_eq!(order, vec![("c", 1), ("a", 2), ("b", 3), ("d", 4)]);
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("feature,mean_importance,rank\nc,0.9,1\n"));
    }

    #[test]
    fn bagging_average_properties() {
        let data = signal_and_noise(90, 5);
        let cfg = BaggingConfig {
            n_subsplits: 4,
            gini_admission_threshold: -1.0,
            seed: 3,
            ..BaggingConfig::default()
        };
        let b = build_bagging(LearnerKind::Knn, &HyperParams::default(), &data, &cfg).unwrap();
        let all = averaged_importance(&b, &data, 3, 11).unwrap();

        let mut reversed = b.clone();
        reversed.members.reverse();
        reversed.member_subsplits.reverse();
        assert_eq!(averaged_importance(&reversed, &data, 3, 11).unwrap(), all);

        let mut single = b.clone();
        single.members.truncate(1);
        single.member_subsplits.truncate(1);
        let one = averaged_importance(&single, &data, 3, 11).unwrap();
        let direct = permutation_importance(&b.members[0], &data, 3, seed::mix(11, b.member_subsplits[0] as u64)).unwrap();
        assert_eq!(one, ImportanceRanking::from_scores(&data.feature_names, &direct));

        let mut clones = single.clone();
        clones.members.push(single.members[0].clone());
        clones.member_subsplits.push(single.member_subsplits[0]);
        assert_eq!(averaged_importance(&clones, &data, 3, 11).unwrap(), one);

        let total: f64 = all.features.iter().map(|f| f.mean_importance).sum();
        assert!(total.is_finite());
    }

    #[test]
    fn cross_split_mean() {
        let names: Vec<String> = vec!["x".into(), "y".into()];
        let a = ImportanceRanking::from_scores(&names, &[0.2, 0.4]);
        let b = ImportanceRanking::from_scores(&names, &[0.6, 0.0]);
        let m = mean_ranking(&[a, b]).unwrap();
        assert_eq!(m.top(2), vec!["x", "y"]);
        assert!((m.score_of("x").unwrap() - 0.4).abs() < 1e-15);
    }
}
