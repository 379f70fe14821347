use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use gradebag::bagging::BaggedModel;
use gradebag::dataset::synth::{blobs, Cohort};
use gradebag::dataset::{load_dataset, pca_project, write_pca_csv, IngestReport, Schema, Stage};
use gradebag::ensemble::{EnsembleId, SplitScores};
use gradebag::importance::{averaged_importance, mean_ranking};
use gradebag::metrics::{normalize_class_scores, write_roc_csv};
use gradebag::pipeline::{
    build_split_baggings, outer_splits, select, tune_kind, BaggingSummary, SelectionReport, TuningSummary,
};
use gradebag::tuning::ParamGrid;
use gradebag::{seed, FeatureMatrix, LearnerKind};

use crate::artifacts::{read_envelope, read_same_run, require, usage, Writer};
use crate::render;

pub const FEATURES: &str = "features.json";
pub const TUNING: &str = "tuning/tuning.json";
pub const BAGGING_SUMMARY: &str = "baggings/summary.json";
pub const SELECTION: &str = "selection/selection.json";

fn scores_file(split: usize) -> String {
    format!("scores/split_{split}.json")
}

fn bagging_file(split: usize, kind: LearnerKind) -> String {
    format!("baggings/split_{split}/{}.json", kind.name())
}

pub fn features_path(w: &Writer, flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| w.config.paths.features.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| w.path(FEATURES))
}

pub fn load_features(path: &Path) -> Result<FeatureMatrix> {
    let m: FeatureMatrix = read_envelope(path, "features file")?.artifact;
    m.validate()?;
    Ok(m)
}

pub fn ingest(w: &Writer, input: Option<PathBuf>, schema: Option<PathBuf>, stage: Option<Stage>) -> Result<()> {
    let input = input.or_else(|| w.config.paths.input_csv.as_ref().map(PathBuf::from));
    let schema = schema.or_else(|| w.config.paths.schema.as_ref().map(PathBuf::from));
    let (Some(input), Some(schema)) = (input, schema) else {
        return usage("ingest needs --input and --schema (or paths.input_csv and paths.schema in the config)");
    };
    require(&input, "input CSV")?;
    require(&schema, "schema file")?;
    let schema = Schema::from_json_file(&schema)?;
    let (m, report) = load_dataset(&input, &schema, stage.unwrap_or(w.config.stage))?;
    w.write_json(FEATURES, &m)?;
    w.write_json("ingest_report.json", &report)?;
    print_ingest(&report);
    Ok(())
}

fn print_ingest(r: &IngestReport) {
    let hist: Vec<String> = r.label_histogram.iter().map(|(k, v)| format!("{k}={v}")).collect();
    println!(
        "ingested {} rows, {} features ({}), labels {}",
        r.rows,
        r.feature_columns.len(),
        r.feature_columns.join(","),
        hist.join(" ")
    );
}

pub enum SynthKind {
    Cohort { n_fair: usize, n_good: usize, n_weak: usize },
    Blobs { counts: [usize; 3], n_features: usize, sd: f64 },
}

pub fn synth(w: &Writer, kind: SynthKind) -> Result<()> {
    match kind {
        SynthKind::Cohort { n_fair, n_good, n_weak } => {
            let cohort = Cohort {
                n_fair,
                n_good,
                n_weak,
                seed: w.config.seed,
            };
            let table = cohort.generate();
            let csv = w.write_csv("cohort.csv", |buf| table.write_csv(buf))?;
            let mut doc = serde_json::Map::new();
            doc.insert("config_hash".into(), w.hash.clone().into());
            if let serde_json::Value::Object(fields) = serde_json::to_value(Cohort::schema())? {
                doc.extend(fields);
            }
            let mut schema = serde_json::to_vec_pretty(&doc)?;
            schema.push(b'\n');
            let schema = w.write_bytes("cohort_schema.json", &schema)?;
            println!("wrote {} rows to {} with schema {}", cohort.total(), csv.display(), schema.display());
        }
        SynthKind::Blobs { counts, n_features, sd } => {
            if !(sd.is_finite() && sd > 0.0) || n_features == 0 {
                return usage("blobs need a positive sd and at least one feature");
            }
            let m = blobs(counts, n_features, sd, w.config.seed);
            let p = w.write_json(FEATURES, &m)?;
            println!("wrote {} rows to {}", m.n_rows(), p.display());
        }
    }
    Ok(())
}

pub fn tune(w: &Writer, features: &Path, grids: &[PathBuf]) -> Result<Vec<TuningSummary>> {
    let m = load_features(features)?;
    let samples = m.all_samples();
    let splits = outer_splits(&samples.labels, &w.config)?;
    let train = samples.subset(&splits[0].train_indices);
    let mut custom = Vec::new();
    for g in grids {
        require(g, "grid file")?;
        custom.push(ParamGrid::from_json_file(g)?);
    }
    let mut summaries = Vec::new();
    for &kind in &w.config.learners {
        let grid = custom.iter().find(|g| g.kind == kind);
        let (s, result) = tune_kind(&train, kind, &w.config, grid).with_context(|| format!("tuning {kind}"))?;
        if let Some(r) = result {
            w.write_csv(&format!("tuning/grid_{}.csv", kind.name()), |buf| r.write_csv(buf))?;
        }
        println!(
            "{kind}: {} grid point(s), {} failed, objective {}",
            s.grid_points,
            s.failed_points,
            s.objective.map_or_else(|| "-".into(), |o| format!("{o:.4}"))
        );
        summaries.push(s);
    }
    w.write_json(TUNING, &summaries)?;
    Ok(summaries)
}

/// Tuned parameters from an earlier `tune`, otherwise the fixed ones.
fn tuning_or_fixed(w: &Writer) -> Result<Vec<TuningSummary>> {
    let path = w.path(TUNING);
    if path.exists() {
        return read_same_run(&path, "tuning results", &w.hash);
    }
    Ok(w
        .config
        .learners
        .iter()
        .map(|&k| TuningSummary {
            learner: k,
            tuned: false,
            params: w.config.fixed_params(k),
            objective: None,
            grid_points: 0,
            failed_points: 0,
        })
        .collect())
}

pub fn bag(w: &Writer, features: &Path, tuning: Option<Vec<TuningSummary>>) -> Result<Vec<SplitScores>> {
    let m = load_features(features)?;
    let samples = m.all_samples();
    let tuning = match tuning {
        Some(t) => t,
        None => tuning_or_fixed(w)?,
    };
    let splits = outer_splits(&samples.labels, &w.config)?;
    let mut all_scores = Vec::new();
    let mut summaries: Vec<BaggingSummary> = Vec::new();
    for (i, split) in splits.iter().enumerate() {
        let mut sink = |s: usize, b: &BaggedModel| -> gradebag::Result<()> {
            let rel = bagging_file(s, b.kind);
            w.write_json_compact(&rel, b).map_err(|e| std::io::Error::other(format!("{e:#}")))?;
            w.write_csv(&format!("baggings/split_{s}/{}_admission.csv", b.kind.name()), |buf| {
                b.write_admission_csv(buf)
            })
            .map_err(|e| std::io::Error::other(format!("{e:#}")))?;
            Ok(())
        };
        let (scores, s) = build_split_baggings(&samples, i, split, &tuning, &w.config, &mut sink)?;
        for b in &s {
            match &b.error {
                None => println!("split {i} {}: {}/{} admitted", b.learner, b.admitted, b.candidates),
                Some(e) => println!("split {i} {}: no bagging ({e})", b.learner),
            }
        }
        w.write_json(&scores_file(i), &scores)?;
        all_scores.push(scores);
        summaries.extend(s);
    }
    w.write_json(BAGGING_SUMMARY, &summaries)?;
    Ok(all_scores)
}

fn load_scores(w: &Writer) -> Result<Vec<SplitScores>> {
    (0..w.config.n_outer_splits)
        .map(|s| read_same_run(&w.path(&scores_file(s)), &format!("scores for split {s}"), &w.hash))
        .collect()
}

pub fn select_stage(w: &Writer, scores: Option<Vec<SplitScores>>) -> Result<SelectionReport> {
    let scores = match scores {
        Some(s) => s,
        None => load_scores(w)?,
    };
    let report = select(&scores, &w.config)?;
    w.write_json(SELECTION, &report)?;
    w.write_csv("selection/ranked.csv", |buf| {
        let mut c = csv::Writer::from_writer(buf);
        let mut header = vec!["rank".to_string(), "ensemble".into(), "bitmask".into(), "mean_gini".into(), "significant".into()];
        for s in 0..report.splits {
            header.extend(["F", "G", "W", "mean"].iter().map(|c| format!("split{s}_gini_{c}")));
            header.extend(["F", "G", "W", "averaged"].iter().map(|c| format!("split{s}_p_{c}")));
        }
        c.write_record(&header)?;
        for r in &report.ranked {
            let mut rec = vec![
                r.rank.to_string(),
                EnsembleId::from_bits(r.bitmask)?.to_string(),
                r.bitmask.to_string(),
                r.mean_gini.to_string(),
                r.significant.to_string(),
            ];
            for e in &r.per_split {
                rec.extend(e.gini.per_class.iter().map(|v| v.to_string()));
                rec.push(e.gini.mean.to_string());
                rec.extend(e.p_values.iter().map(|v| v.to_string()));
                rec.push(e.p_value_averaged.to_string());
            }
            c.write_record(&rec)?;
        }
        c.flush()?;
        Ok(())
    })?;
    w.write_csv("selection/base_learners.csv", |buf| {
        let mut c = csv::Writer::from_writer(buf);
        c.write_record(["model", "mean_gini", "accuracy"])?;
        for b in &report.base_learners {
            c.write_record([b.model.clone(), b.mean_gini.to_string(), b.accuracy.to_string()])?;
        }
        c.flush()?;
        Ok(())
    })?;
    if let Some(win) = &report.winner {
        let initial = scores.iter().find(|s| s.split == 0).expect("select checked split 0");
        let combined = normalize_class_scores(&initial.combined(EnsembleId::from_bits(win.bitmask)?)?);
        w.write_csv("selection/winner_roc.csv", |buf| write_roc_csv(buf, &combined, &initial.labels))?;
        println!("winner {} (mean averaged Gini {:.4})", EnsembleId::from_bits(win.bitmask)?, win.mean_gini);
    } else {
        println!("no winner: {}", report.no_winner_reason.as_deref().unwrap_or(""));
    }
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Text,
    Json,
    Csv,
}

pub fn report(w: &Writer, format: Format) -> Result<()> {
    let r: SelectionReport = read_same_run(&w.path(SELECTION), "selection report", &w.hash)?;
    write_reports(w, &r)?;
    match format {
        Format::Text => print!("{}", render::text(&r)),
        Format::Json => println!("{}", serde_json::to_string_pretty(&r)?),
        Format::Csv => print!("{}", String::from_utf8(render::csv(&r)?)?),
    }
    Ok(())
}

pub fn write_reports(w: &Writer, r: &SelectionReport) -> Result<()> {
    w.write_text("report/report.txt", &render::text(r))?;
    w.write_json("report/report.json", r)?;
    w.write_csv("report/report.csv", |buf| {
        buf.extend(render::csv(r)?);
        Ok(())
    })?;
    Ok(())
}

pub fn pca(w: &Writer, features: &Path, components: usize) -> Result<()> {
    let m = load_features(features)?;
    let p = pca_project(&m, components)?;
    let path = w.write_csv("pca/pca.csv", |buf| write_pca_csv(buf, &m.instance_ids, &p, &m.labels))?;
    w.write_json("pca/pca_axes.json", &p)?;
    let ratios: Vec<String> = p.explained_variance_ratio.iter().map(|r| format!("{:.1}%", r * 100.0)).collect();
    println!("wrote {} (explained variance {})", path.display(), ratios.join(", "));
    Ok(())
}

pub fn importance(w: &Writer, features: &Path, kind: LearnerKind) -> Result<()> {
    let m = load_features(features)?;
    let samples = m.all_samples();
    let splits = outer_splits(&samples.labels, &w.config)?;
    let mut rankings = Vec::new();
    for (s, split) in splits.iter().enumerate() {
        let b: BaggedModel = read_same_run(&w.path(&bagging_file(s, kind)), &format!("{kind} bagging for split {s}"), &w.hash)?;
        let test = samples.subset(&split.test_indices);
        let seed = seed::mix_all(w.config.seed, &[4, s as u64, kind.index() as u64]);
        let r = averaged_importance(&b, &test, w.config.importance_repeats, seed)?;
        w.write_csv(&format!("importance/{}_split{s}.csv", kind.name()), |buf| r.write_csv(buf))?;
        rankings.push(r);
    }
    let mean = mean_ranking(&rankings)?;
    let p = w.write_csv(&format!("importance/{}_mean.csv", kind.name()), |buf| mean.write_csv(buf))?;
    println!("{kind} top features: {} ({})", mean.top(3).join(", "), p.display());
    Ok(())
}

pub fn pipeline(w: &Writer, features: &Path) -> Result<()> {
    let m = load_features(features)?;
    let tuning = tune(w, features, &[])?;
    let scores = bag(w, features, Some(tuning))?;
    let report = select_stage(w, Some(scores))?;
    write_reports(w, &report)?;
    if m.n_features() >= 2 {
        pca(w, features, 2)?;
    }
    print!("{}", render::text(&report));
    Ok(())
}
