//! Cross-module invariants as property tests.

use gradebag::bagging::{build_bagging, BaggingConfig};
use gradebag::dataset::synth::blobs;
use gradebag::dataset::{load_dataset_from_reader, Schema, Stage};
use gradebag::ensemble::{
    enumerate_ensembles, evaluate_all, null_distributions, select_best, EnsembleId, SelectionMode, SplitScores,
};
use gradebag::importance::permutation_importance;
use gradebag::learners::network::{train_lm, LmConfig, NetworkTopology};
use gradebag::learners::train;
use gradebag::metrics::{averaged_gini, roc_curve};
use gradebag::tuning::{grid_search, ParamGrid, ParamValue};
use gradebag::{seed, ClassLabel, ClassScores, FeatureMatrix, HyperParams, LearnerKind, Samples};
use indexmap::IndexMap;
use proptest::prelude::*;
use rand::Rng;

fn matrix_csv(m: &FeatureMatrix, grades: &[i64]) -> String {
    let mut s = format!("Id,{},Final\n", m.feature_names.join(","));
    for ((id, row), g) in m.instance_ids.iter().zip(&m.values).zip(grades) {
        let vals: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        s.push_str(&format!("{id},{},{g}\n", vals.join(",")));
    }
    s
}

fn identity_schema(names: &[String]) -> Schema {
    Schema {
        id_column: "Id".into(),
        final_grade_column: "Final".into(),
        stage20_columns: names.to_vec(),
        stage50_columns: names.to_vec(),
        task_max: names.iter().map(|n| (n.clone(), 100.0)).collect(),
    }
}

fn grade_for(l: ClassLabel) -> i64 {
    match l {
        ClassLabel::F => 60,
        ClassLabel::G => 85,
        ClassLabel::W => 30,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn ingestion_is_idempotent_and_histogram_matches(s in 0u64..1000, nf in 1usize..5) {
        let m = blobs([5, 6, 7], nf, 15.0, s);
        let grades: Vec<i64> = m.labels.iter().map(|&l| grade_for(l)).collect();
        let schema = identity_schema(&m.feature_names);
        let (once, report) =
            load_dataset_from_reader(matrix_csv(&m, &grades).as_bytes(), &schema, Stage::Stage20).unwrap();
        let (twice, _) =
            load_dataset_from_reader(matrix_csv(&once, &grades).as_bytes(), &schema, Stage::Stage20).unwrap();
        prop_assert_eq!(&once, &twice);
        prop_assert_eq!(once.values.clone(), m.values.clone());
        let h = once.label_histogram();
        for c in ClassLabel::ALL {
            prop_assert_eq!(report.label_histogram[c.as_str()], h[c.index()]);
        }
    }

    #[test]
    fn learner_scores_are_deterministic_finite_and_normalized(s in 0u64..1000, k in 0usize..5) {
        let kind = LearnerKind::ALL[k];
        let data = blobs([12, 12, 12], 3, 12.0, s).all_samples();
        let params = HyperParams { rf_ntrees: 25, ..HyperParams::for_kind(kind) };
        let a = train(kind, &params, &data, s).unwrap().score(&data).unwrap();
        let b = train(kind, &params, &data, s).unwrap().score(&data).unwrap();
        prop_assert_eq!(&a.rows, &b.rows);
        prop_assert!(a.is_finite());
        if matches!(kind, LearnerKind::Knn | LearnerKind::RandomForest | LearnerKind::LogisticRegression) {
            for r in &a.rows {
                prop_assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-9, "{:?}", r);
            }
        }
    }

    #[test]
    fn lm_accepted_sse_strictly_decreases(s in 0u64..10_000, h in 1usize..4) {
        let mut rng = seed::rng(s);
        let x: Vec<Vec<f64>> = (0..25).map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
        let t: Vec<Vec<f64>> = x.iter().map(|r| vec![(2.0 * r[0]).sin() * r[1]]).collect();
        let topo = NetworkTopology { n_inputs: 2, n_outputs: 1, hidden_layers: vec![h] };
        let cfg = LmConfig { max_iters: 30, early_stopping: None, ..LmConfig::default() };
        let out = train_lm(&topo, &x, &t, &cfg, s).unwrap();
        prop_assert!(out.sse_history.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn roc_endpoints_and_auc_range(
        v in proptest::collection::vec((0u8..8, any::<bool>()), 2..30)
    ) {
        let scores: Vec<f64> = v.iter().map(|p| p.0 as f64).collect();
        let pos: Vec<bool> = v.iter().map(|p| p.1).collect();
        prop_assume!(pos.iter().any(|&p| p) && pos.iter().any(|&p| !p));
        let roc = roc_curve(&scores, &pos).unwrap();
        prop_assert_eq!(roc.points.first().copied(), Some((0.0, 0.0)));
        prop_assert_eq!(roc.points.last().copied(), Some((1.0, 1.0)));
        prop_assert!((0.0..=1.0).contains(&roc.auc()));
    }
}

fn toy_splits(s: u64) -> Vec<SplitScores> {
    let mut rng = seed::rng(s);
    let labels: Vec<ClassLabel> = (0..24).map(|i| ClassLabel::from_index(i % 3)).collect();
    (0..2)
        .map(|sp| {
            let mut sc = SplitScores::new(sp, labels.clone());
            for (i, k) in [LearnerKind::Knn, LearnerKind::NaiveBayes, LearnerKind::SvmRbf].into_iter().enumerate() {
                let rows = labels
                    .iter()
                    .map(|l| {
                        let mut r = [rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()];
                        r[l.index()] += 0.3 * i as f64;
                        r
                    })
                    .collect();
                sc.insert(k, ClassScores::raw(rows));
            }
            sc
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn selection_is_order_free_and_matches_brute_force(s in 0u64..10_000, perm_seed in any::<u64>()) {
        let splits = toy_splits(s);
        let ids = enumerate_ensembles(&[LearnerKind::Knn, LearnerKind::NaiveBayes, LearnerKind::SvmRbf]).unwrap();
        let nulls = null_distributions(&splits, 200, s).unwrap();
        let evals = evaluate_all(&ids, &splits, &nulls).unwrap();
        let base = select_best(&evals, 0.05, SelectionMode::Strict);

        let mut shuffled = evals.clone();
        let mut rng = seed::rng(perm_seed);
        for i in (1..shuffled.len()).rev() {
            let j = rng.random_range(0..=i);
            shuffled.swap(i, j);
        }
        prop_assert_eq!(&select_best(&shuffled, 0.05, SelectionMode::Strict), &base);

        // per-split Gini recomputed from the stored combined scores
        for e in &evals {
            for (se, sp) in e.per_split.iter().zip(&splits) {
                let g = averaged_gini(&sp.combined(e.id).unwrap(), &sp.labels).unwrap();
                prop_assert_eq!(g, se.gini);
            }
        }

        // brute force over the 7 subsets
        let mut best: Option<(f64, usize, u8)> = None;
        for bits in 1u8..=255 {
            let Ok(id) = EnsembleId::from_bits(bits) else { continue };
            if id.members().iter().any(|k| !matches!(k, LearnerKind::Knn | LearnerKind::NaiveBayes | LearnerKind::SvmRbf)) {
                continue;
            }
            let mut total = 0.0;
            let mut passes = true;
            for (sp, null) in splits.iter().zip(&nulls) {
                let g = averaged_gini(&sp.combined(id).unwrap(), &sp.labels).unwrap();
                total += g.mean;
                passes &= null.class_p_values(&g.per_class).iter().all(|&p| p <= 0.05);
            }
            let mean = total / splits.len() as f64;
            let key = (mean, id.len(), bits);
            let better = |b: &(f64, usize, u8)| {
                mean > b.0 || (mean == b.0 && (id.len() < b.1 || (id.len() == b.1 && bits < b.2)))
            };
            if passes && best.as_ref().is_none_or(better) {
                best = Some(key);
            }
        }
        prop_assert_eq!(base.winner.map(|w| w.bits()), best.map(|b| b.2));
        if let Some(w) = base.winner {
            let wg = evals.iter().find(|e| e.id == w).unwrap().mean_averaged_gini;
            for r in base.ranked.iter().filter(|r| r.significant) {
                prop_assert!(wg >= r.evaluation.mean_averaged_gini);
            }
        }
    }
}

fn bagging_data(s: u64) -> Samples {
    blobs([20, 20, 20], 2, 14.0, s).all_samples()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn bagging_log_is_complete_reproducible_and_exact(s in 0u64..1000, n in 1usize..8) {
        let data = bagging_data(s);
        let cfg = BaggingConfig { n_subsplits: n, seed: s, ..BaggingConfig::default() };
        let params = HyperParams::for_kind(LearnerKind::Knn);
        let a = build_bagging(LearnerKind::Knn, &params, &data, &cfg);
        let b = build_bagging(LearnerKind::Knn, &params, &data, &cfg);
        match (a, b) {
            (Ok(a), Ok(b)) => {
                prop_assert_eq!(&a, &b);
                prop_assert_eq!(a.admission_log.len(), n);
                for (m, &i) in a.members.iter().zip(&a.member_subsplits) {
                    let split = cfg.subsplit(&data.labels, i).unwrap();
                    let test = data.subset(&split.test_indices);
                    let g = averaged_gini(&m.score(&test).unwrap(), &test.labels).unwrap();
                    let logged = a.admission_log.iter().find(|r| r.subsplit == i).unwrap().gini.unwrap();
                    prop_assert_eq!(g, logged);
                }
            }
            (Err(a), Err(b)) => prop_assert_eq!(a.to_string(), b.to_string()),
            _ => prop_assert!(false, "runs disagree"),
        }
    }

    #[test]
    fn grid_table_is_pure_thread_independent_and_best_is_first_max(s in 0u64..1000) {
        let data = bagging_data(s);
        let mut axes = IndexMap::new();
        axes.insert("k".to_string(), [3.0, 5.0, 7.0, 9.0].map(ParamValue::Number).to_vec());
        let grid = ParamGrid::new(LearnerKind::Knn, axes, 3, s);
        let a = grid_search(&grid, &data).unwrap();
        let one_thread = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = one_thread.install(|| grid_search(&grid, &data).unwrap());
        prop_assert_eq!(&a, &b);
        let mut best = 0;
        for (i, p) in a.table.iter().enumerate() {
            if p.objective_value() > a.table[best].objective_value() {
                best = i;
            }
        }
        prop_assert_eq!(a.best_index, best);
    }

    #[test]
    fn importance_sum_is_finite_and_reproducible(s in 0u64..1000) {
        let data = bagging_data(s);
        let model = train(LearnerKind::NaiveBayes, &HyperParams::default(), &data, s).unwrap();
        let a = permutation_importance(&model, &data, 3, s).unwrap();
        let b = permutation_importance(&model, &data, 3, s).unwrap();
        let (sa, sb): (f64, f64) = (a.iter().sum(), b.iter().sum());
        prop_assert!(sa.is_finite());
        prop_assert_eq!(sa.to_bits(), sb.to_bits());
    }
}
