//! Gini-filtered baggings: many models of one kind, each trained on a
//! stratified sub-split and kept only if its sub-test averaged Gini clears
//! a threshold.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{split_labels, ClassLabel, Samples, Split, SplitPlan};
use crate::error::{Error, Result};
use crate::learners::{self, ClassScores, HyperParams, LearnerKind, Scorer, TrainedModel};
use crate::metrics::{averaged_gini, GiniSummary};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaggingConfig {
    pub n_subsplits: usize,
    pub sub_train_fraction: f64,
    pub gini_admission_threshold: f64,
    pub seed: u64,
}

impl Default for BaggingConfig {
    fn default() -> Self {
        BaggingConfig {
            n_subsplits: 200,
            sub_train_fraction: 0.7,
            gini_admission_threshold: 0.5,
            seed: 0,
        }
    }
}

impl BaggingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_subsplits == 0 {
            return Err(Error::Validation("n_subsplits must be at least 1".into()));
        }
        let f = self.sub_train_fraction;
        if !(f > 0.0 && f < 1.0) {
            return Err(Error::Validation(format!("sub_train_fraction {f} outside (0, 1)")));
        }
        let t = self.gini_admission_threshold;
        if !(-1.0..=1.0).contains(&t) {
            return Err(Error::Validation(format!("gini_admission_threshold {t} outside [-1, 1]")));
        }
        Ok(())
    }

    /// Sub-split `i`, seeded by `mix(seed, i)`.
    pub fn subsplit(&self, labels: &[ClassLabel], i: usize) -> Result<Split> {
        split_labels(
            labels,
            &SplitPlan::stratified(self.sub_train_fraction, seed::mix(self.seed, i as u64)),
        )
    }

    pub fn member_seed(&self, i: usize) -> u64 {
        seed::mix_all(self.seed, &[i as u64, 1])
    }
}

/// Outcome of one candidate. `gini` is absent when the candidate failed to
/// train, in which case `error` says why.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmissionRecord {
    pub subsplit: usize,
    pub gini: Option<GiniSummary>,
    pub kept: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaggedModel {
    pub kind: LearnerKind,
    pub params: HyperParams,
    pub config: BaggingConfig,
    pub feature_names: Vec<String>,
    pub members: Vec<TrainedModel>,
    /// Sub-split index of each member.
    pub member_subsplits: Vec<usize>,
    pub admission_log: Vec<AdmissionRecord>,
}

pub fn build_bagging(
    kind: LearnerKind,
    params: &HyperParams,
    train_data: &Samples,
    config: &BaggingConfig,
) -> Result<BaggedModel> {
    config.validate()?;
    params.validate(kind)?;
    let hist = train_data.label_histogram();
    if let Some(c) = ClassLabel::ALL.into_iter().find(|c| hist[c.index()] == 0) {
        return Err(Error::Validation(format!("bagging data has no instance of class {c}")));
    }

    let candidates: Vec<(AdmissionRecord, Option<TrainedModel>)> = (0..config.n_subsplits)
        .into_par_iter()
        .map(|i| {
            let fitted = config.subsplit(&train_data.labels, i).and_then(|split| {
                let model = learners::train(kind, params, &train_data.subset(&split.train_indices), config.member_seed(i))?;
                let test = train_data.subset(&split.test_indices);
                let gini = averaged_gini(&model.score(&test)?, &test.labels)?;
                Ok((model, gini))
            });
            match fitted {
                Ok((model, gini)) => {
                    let kept = gini.mean >= config.gini_admission_threshold;
                    let record = AdmissionRecord {
                        subsplit: i,
                        gini: Some(gini),
                        kept,
                        error: None,
                    };
                    (record, kept.then_some(model))
                }
                Err(e) => (
                    AdmissionRecord {
                        subsplit: i,
                        gini: None,
                        kept: false,
                        error: Some(e.to_string()),
                    },
                    None,
                ),
            }
        })
        .collect();

    let mut admission_log = Vec::with_capacity(candidates.len());
    let mut members = Vec::new();
    let mut member_subsplits = Vec::new();
    for (record, model) in candidates {
        if let Some(m) = model {
            member_subsplits.push(record.subsplit);
            members.push(m);
        }
        admission_log.push(record);
    }
    if members.is_empty() {
        let best_gini = admission_log
            .iter()
            .filter_map(|r| r.gini.map(|g| g.mean))
            .fold(f64::NEG_INFINITY, f64::max);
        return Err(Error::EmptyBagging { kind, best_gini });
    }
    Ok(BaggedModel {
        kind,
        params: params.clone(),
        config: *config,
        feature_names: train_data.feature_names.clone(),
        members,
        member_subsplits,
        admission_log,
    })
}

/// Per-class mean of the members' raw scores.
pub fn bagging_score(b: &BaggedModel, data: &Samples) -> Result<ClassScores> {
    if data.feature_names != b.feature_names {
        return Err(Error::Schema(format!(
            "feature columns {:?} do not match bagging columns {:?}",
            data.feature_names, b.feature_names
        )));
    }
    b.score_rows(&data.rows)
}

impl Scorer for BaggedModel {
    fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    fn score_rows(&self, rows: &[Vec<f64>]) -> Result<ClassScores> {
        if self.members.is_empty() {
            return Err(Error::EmptyBagging {
                kind: self.kind,
                best_gini: f64::NAN,
            });
        }
        let per_member: Vec<ClassScores> = self
            .members
            .par_iter()
            .map(|m| m.score_rows(rows))
            .collect::<Result<_>>()?;
        let k = per_member.len() as f64;
        let mut buf = Vec::with_capacity(per_member.len());
        let out = (0..rows.len())
            .map(|r| {
                [0, 1, 2].map(|c| {
                    buf.clear();
                    buf.extend(per_member.iter().map(|s| s.rows[r][c]));
                    // summing in sorted order makes the mean independent of member order
                    buf.sort_by(f64::total_cmp);
                    buf.iter().sum::<f64>() / k
                })
            })
            .collect();
        Ok(ClassScores::raw(out))
    }
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    kind: LearnerKind,
    params: HyperParams,
    config: BaggingConfig,
    feature_names: Vec<String>,
    member_files: Vec<String>,
    member_subsplits: Vec<usize>,
    admission_log: Vec<AdmissionRecord>,
}

const MANIFEST_VERSION: u32 = 1;

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

impl BaggedModel {
    /// Writes `manifest.json`, one file per member under `members/` and
    /// `admission_log.csv`.
    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir.join("members"))?;
        let mut member_files = Vec::with_capacity(self.members.len());
        for (m, &s) in self.members.iter().zip(&self.member_subsplits) {
            let name = format!("members/subsplit_{s:04}.json");
            m.save(&dir.join(&name))?;
            member_files.push(name);
        }
        let manifest = Manifest {
            format_version: MANIFEST_VERSION,
            kind: self.kind,
            params: self.params.clone(),
            config: self.config,
            feature_names: self.feature_names.clone(),
            member_files,
            member_subsplits: self.member_subsplits.clone(),
            admission_log: self.admission_log.clone(),
        };
        let f = std::fs::File::create(dir.join("manifest.json"))?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(f), &manifest)?;
        let f = std::fs::File::create(dir.join("admission_log.csv"))?;
        self.write_admission_csv(std::io::BufWriter::new(f))
    }

    pub fn load_dir(dir: &Path) -> Result<Self> {
        let f = std::fs::File::open(dir.join("manifest.json"))?;
        let manifest: Manifest = serde_json::from_reader(std::io::BufReader::new(f))?;
        if manifest.format_version != MANIFEST_VERSION {
            return Err(Error::Validation(format!(
                "unsupported bagging manifest version {}",
                manifest.format_version
            )));
        }
        let members = manifest
            .member_files
            .iter()
            .map(|name| TrainedModel::load(&dir.join(name)))
            .collect::<Result<Vec<_>>>()?;
        Ok(BaggedModel {
            kind: manifest.kind,
            params: manifest.params,
            config: manifest.config,
            feature_names: manifest.feature_names,
            members,
            member_subsplits: manifest.member_subsplits,
            admission_log: manifest.admission_log,
        })
    }

    pub fn write_admission_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["subsplit", "gini_F", "gini_G", "gini_W", "mean", "kept"])?;
        for r in &self.admission_log {
            let g = r.gini.map(|g| g.per_class);
            w.write_record([
                r.subsplit.to_string(),
                opt(g.map(|g| g[0])),
                opt(g.map(|g| g[1])),
                opt(g.map(|g| g[2])),
                opt(r.gini.map(|g| g.mean)),
                r.kept.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn admitted(&self) -> usize {
        self.members.len()
    }
}
