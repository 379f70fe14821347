use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gradebag"))
}

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn run(out: &Path, args: &[&str]) -> Output {
    bin().arg("--out-dir").arg(out).args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_config(dir: &Path, json: &str) -> PathBuf {
    let p = dir.join("config.json");
    std::fs::write(&p, json).unwrap();
    p
}

const TOY: &str = r#"{"n_outer_splits": 3, "n_subsplits": 20, "n_sim": 1000,
    "learners": ["KNN", "NB", "LR"], "tune": false}"#;

/// Synthesizes the toy blobs into `out` and runs the full pipeline.
fn toy_pipeline(root: &Path, name: &str, config: &str) -> (PathBuf, Output) {
    let out = root.join(name);
    std::fs::create_dir_all(&out).unwrap();
    let cfg = write_config(&out, config);
    let cfg = cfg.to_str().unwrap();
    let o = run(&out, &["--config", cfg, "synth", "blobs", "--counts", "40,40,40", "--n-features", "3", "--sd", "6"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = run(&out, &["--config", cfg, "pipeline"]);
    (out, o)
}

fn json_artifact(path: &Path) -> Value {
    let v: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    v["artifact"].clone()
}

fn files_under(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(files_under(&p));
        } else if p.file_name().unwrap() != "config.json" {
            out.push(p);
        }
    }
    out.sort();
    out
}

#[test]
fn toy_pipeline_is_fast_significant_and_reproducible() {
    let root = tempfile::tempdir().unwrap();
    let t0 = Instant::now();
    let (a, o) = toy_pipeline(root.path(), "a", TOY);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(t0.elapsed() < Duration::from_secs(60));
    let sel = json_artifact(&a.join("selection/selection.json"));
    assert_eq!(sel["mode"], "strict");
    assert!(sel["winner"].is_object(), "{sel}");
    assert_eq!(sel["n_ensembles"], 7);

    let (b, o) = toy_pipeline(root.path(), "b", TOY);
    assert!(o.status.success());
    let fa = files_under(&a);
    let fb = files_under(&b);
    assert_eq!(fa.len(), fb.len());
    for (x, y) in fa.iter().zip(&fb) {
        assert_eq!(x.strip_prefix(&a).unwrap(), y.strip_prefix(&b).unwrap());
        assert!(std::fs::read(x).unwrap() == std::fs::read(y).unwrap(), "{} differs", x.display());
    }
    assert!(!a.join("FAILED").exists());
}

#[test]
fn every_output_embeds_the_config_hash() {
    let root = tempfile::tempdir().unwrap();
    let (out, o) = toy_pipeline(root.path(), "run", TOY);
    assert!(o.status.success(), "{}", stderr(&o));
    let sel: Value = serde_json::from_str(&std::fs::read_to_string(out.join("selection/selection.json")).unwrap()).unwrap();
    let hash = sel["config_hash"].as_str().unwrap().to_string();
    assert_eq!(hash.len(), 64);
    assert_eq!(sel["config"]["n_subsplits"], 20);
    for f in files_under(&out) {
        if f.ends_with("features.json") {
            continue;
        }
        let text = std::fs::read_to_string(&f).unwrap();
        assert!(text.contains(&hash), "{} lacks the config hash", f.display());
    }
    assert!(out.join("selection/winner_roc.csv").exists());
    assert!(out.join("pca/pca.csv").exists());
}

#[test]
fn zero_alpha_has_no_winner() {
    let root = tempfile::tempdir().unwrap();
    let cfg = TOY.replace("\"tune\": false", "\"tune\": false, \"alpha\": 0.0");
    let (out, o) = toy_pipeline(root.path(), "run", &cfg);
    assert!(o.status.success(), "{}", stderr(&o));
    let sel = json_artifact(&out.join("selection/selection.json"));
    assert!(sel["winner"].is_null());
    assert!(sel["no_winner_reason"].is_string());
}

#[test]
fn report_formats_agree() {
    let root = tempfile::tempdir().unwrap();
    let (out, o) = toy_pipeline(root.path(), "run", TOY);
    assert!(o.status.success(), "{}", stderr(&o));
    let cfg = out.join("config.json");
    let cfg = cfg.to_str().unwrap();

    let text = run(&out, &["--config", cfg, "report", "--format", "text"]);
    assert!(text.status.success());
    let text = stdout(&text);
    assert!(text.contains("Thresholds (%)"));
    assert!(text.contains("Confusion matrix"));
    assert!(text.contains("Ensemble ("));

    let json: Value = serde_json::from_str(&stdout(&run(&out, &["--config", cfg, "report", "--format", "json"]))).unwrap();
    let csv = stdout(&run(&out, &["--config", cfg, "report", "--format", "csv"]));
    let lookup = |section: &str, row: &str, col: &str| -> f64 {
        csv.lines()
            .map(|l| l.split(',').collect::<Vec<_>>())
            .find(|f| f.len() == 4 && f[0] == section && f[1] == row && f[2] == col)
            .unwrap_or_else(|| panic!("{section}/{row}/{col} missing"))[3]
            .parse()
            .unwrap()
    };
    let w = &json["winner"];
    assert_eq!(lookup("winner", "", "mean_gini"), w["mean_gini"].as_f64().unwrap());
    for c in ["F", "G", "W"] {
        assert_eq!(lookup("thresholds", "", c), w["thresholds"][c].as_f64().unwrap());
    }
    for (i, a) in ["F", "G", "W"].iter().enumerate() {
        for (j, p) in ["F", "G", "W"].iter().enumerate() {
            assert_eq!(lookup("confusion_matrix", a, p), w["confusion_matrix"]["counts"][i][j].as_f64().unwrap());
        }
    }
    let base = json["base_learners"].as_array().unwrap();
    assert!(base.last().unwrap()["model"].as_str().unwrap().starts_with("Ensemble"));
    for b in base {
        let m = b["model"].as_str().unwrap();
        assert_eq!(lookup("base_learners", m, "accuracy"), b["accuracy"].as_f64().unwrap());
        assert_eq!(lookup("base_learners", m, "mean_gini"), b["mean_gini"].as_f64().unwrap());
    }
}

#[test]
fn staged_commands_match_the_pipeline() {
    let root = tempfile::tempdir().unwrap();
    let (piped, o) = toy_pipeline(root.path(), "piped", TOY);
    assert!(o.status.success());

    let out = root.path().join("staged");
    std::fs::create_dir_all(&out).unwrap();
    let cfg = write_config(&out, TOY);
    let cfg = cfg.to_str().unwrap();
    for args in [
        vec!["synth", "blobs", "--counts", "40,40,40", "--n-features", "3", "--sd", "6"],
        vec!["tune"],
        vec!["bag"],
        vec!["select"],
        vec!["report"],
        vec!["importance", "--learner", "KNN"],
        vec!["pca", "--components", "2"],
    ] {
        let mut full = vec!["--config", cfg];
        full.extend(args.iter().copied());
        let o = run(&out, &full);
        assert!(o.status.success(), "{args:?}: {}", stderr(&o));
    }
    for f in ["selection/selection.json", "selection/ranked.csv", "report/report.csv", "scores/split_2.json"] {
        assert_eq!(std::fs::read(piped.join(f)).unwrap(), std::fs::read(out.join(f)).unwrap(), "{f}");
    }
    let imp = std::fs::read_to_string(out.join("importance/KNN_mean.csv")).unwrap();
    assert!(imp.lines().nth(1).unwrap().starts_with("feature,mean_importance,rank"));
    assert_eq!(imp.lines().count(), 2 + 3);
}

#[test]
fn ingest_epm_fixture() {
    let root = tempfile::tempdir().unwrap();
    let f = fixtures();
    let o = run(
        root.path(),
        &[
            "ingest",
            "--input",
            f.join("epm_dataset1.csv").to_str().unwrap(),
            "--schema",
            f.join("epm_dataset1_schema.json").to_str().unwrap(),
            "--stage",
            "20",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let m = json_artifact(&root.path().join("features.json"));
    assert_eq!(m["instance_ids"].as_array().unwrap().len(), 52);
    let names: Vec<&str> = m["feature_names"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    assert_eq!(names, ["ES1.1", "ES1.2", "ES2.1", "ES2.2", "ES3.1", "ES3.2", "ES3.3", "ES3.4", "ES3.5"]);
}

#[test]
fn synthetic_cohort_has_eight_weak_students() {
    let root = tempfile::tempdir().unwrap();
    let out = root.path();
    let o = run(out, &["synth", "cohort"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = run(
        out,
        &[
            "ingest",
            "--input",
            out.join("cohort.csv").to_str().unwrap(),
            "--schema",
            out.join("cohort_schema.json").to_str().unwrap(),
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let r = json_artifact(&out.join("ingest_report.json"));
    assert_eq!(r["rows"], 486);
    assert_eq!(r["label_histogram"]["W"], 8);
}

#[test]
fn missing_schema_column_exits_2_naming_it() {
    let root = tempfile::tempdir().unwrap();
    let mut schema: Value =
        serde_json::from_str(&std::fs::read_to_string(fixtures().join("epm_dataset1_schema.json")).unwrap()).unwrap();
    schema["stage20_columns"].as_array_mut().unwrap().push("ES9.9".into());
    schema["task_max"]["ES9.9"] = 5.into();
    let sp = root.path().join("schema.json");
    std::fs::write(&sp, schema.to_string()).unwrap();
    let o = run(
        root.path(),
        &["ingest", "--input", fixtures().join("epm_dataset1.csv").to_str().unwrap(), "--schema", sp.to_str().unwrap()],
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("ES9.9"), "{}", stderr(&o));
    assert!(root.path().join("FAILED").exists());
}

#[test]
fn missing_artifacts_and_bad_config_exit_2() {
    let root = tempfile::tempdir().unwrap();
    let o = run(root.path(), &["report"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("selection report"));
    assert!(root.path().join("FAILED").exists());

    let o = run(root.path(), &["pipeline"]);
    assert_eq!(o.status.code(), Some(2));

    let cfg = write_config(root.path(), r#"{"n_sim": 50}"#);
    let o = run(root.path(), &["--config", cfg.to_str().unwrap(), "select"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("n_sim"));
}

#[test]
fn changed_config_is_rejected_between_stages() {
    let root = tempfile::tempdir().unwrap();
    let (out, o) = toy_pipeline(root.path(), "run", TOY);
    assert!(o.status.success());
    let cfg = out.join("config.json");
    let o = run(&out, &["--config", cfg.to_str().unwrap(), "--seed", "99", "select"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("current config"));
}

#[test]
fn failure_marker_is_cleared_by_a_later_success() {
    let root = tempfile::tempdir().unwrap();
    let out = root.path();
    assert_eq!(run(out, &["report"]).status.code(), Some(2));
    assert!(out.join("FAILED").exists());
    let o = run(out, &["synth", "blobs", "--counts", "10,10,10"]);
    assert!(o.status.success());
    assert!(!out.join("FAILED").exists());
}
