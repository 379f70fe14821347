use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use gradebag::pipeline::RunConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const FAILED_MARKER: &str = "FAILED";

/// Bad user input: a missing artifact, an unusable flag. Exits with code 2.
#[derive(Debug)]
pub struct Usage(pub String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

pub fn usage<T>(msg: impl Into<String>) -> Result<T> {
    Err(Usage(msg.into()).into())
}

/// SHA-256 of the compact JSON encoding of the config.
pub fn config_hash(cfg: &RunConfig) -> Result<String> {
    let bytes = serde_json::to_vec(cfg)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// JSON artifact with its provenance.
#[derive(Debug, Serialize, Deserialize)]
pub struct Envelope<T> {
    pub config_hash: String,
    pub config: RunConfig,
    pub artifact: T,
}

/// Owns all writes of one invocation.
pub struct Writer {
    pub out_dir: PathBuf,
    pub config: RunConfig,
    pub hash: String,
}

impl Writer {
    pub fn new(out_dir: PathBuf, config: RunConfig) -> Result<Self> {
        let hash = config_hash(&config)?;
        fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
        Ok(Writer { out_dir, config, hash })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.out_dir.join(rel)
    }

    /// Writes to a temporary sibling, then renames into place.
    pub fn write_bytes(&self, rel: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.path(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let tmp = path.with_extension(format!(
            "{}.tmp",
            path.extension().and_then(|e| e.to_str()).unwrap_or("")
        ));
        {
            let mut f = fs::File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
            f.write_all(bytes)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, &path).with_context(|| format!("renaming into {}", path.display()))?;
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&self, rel: &str, artifact: &T) -> Result<PathBuf> {
        let env = Envelope {
            config_hash: self.hash.clone(),
            config: self.config.clone(),
            artifact,
        };
        let mut bytes = serde_json::to_vec_pretty(&env)?;
        bytes.push(b'\n');
        self.write_bytes(rel, &bytes)
    }

    /// Large artifacts are stored without indentation.
    pub fn write_json_compact<T: Serialize>(&self, rel: &str, artifact: &T) -> Result<PathBuf> {
        let env = Envelope {
            config_hash: self.hash.clone(),
            config: self.config.clone(),
            artifact,
        };
        self.write_bytes(rel, &serde_json::to_vec(&env)?)
    }

    /// CSV body produced by `fill`, preceded by a `# config_hash:` line.
    pub fn write_csv(
        &self,
        rel: &str,
        fill: impl FnOnce(&mut Vec<u8>) -> gradebag::Result<()>,
    ) -> Result<PathBuf> {
        let mut buf = format!("# config_hash: {}\n", self.hash).into_bytes();
        fill(&mut buf)?;
        self.write_bytes(rel, &buf)
    }

    pub fn write_text(&self, rel: &str, text: &str) -> Result<PathBuf> {
        let body = format!("config_hash: {}\n{text}", self.hash);
        self.write_bytes(rel, body.as_bytes())
    }

    pub fn mark_failed(&self, err: &anyhow::Error) {
        let _ = self.write_bytes(FAILED_MARKER, format!("{err:#}\n").as_bytes());
    }

    pub fn clear_failed(&self) -> Result<()> {
        let p = self.path(FAILED_MARKER);
        if p.exists() {
            fs::remove_file(p)?;
        }
        Ok(())
    }
}

pub fn require(path: &Path, what: &str) -> Result<()> {
    if !path.exists() {
        return usage(format!("{what} not found: {}", path.display()));
    }
    Ok(())
}

pub fn read_envelope<T: DeserializeOwned>(path: &Path, what: &str) -> Result<Envelope<T>> {
    require(path, what)?;
    let f = fs::File::open(path)?;
    serde_json::from_reader(std::io::BufReader::new(f))
        .map_err(|e| Usage(format!("{what} at {} is unreadable: {e}", path.display())).into())
}

/// Loads an artifact written by an earlier stage of the same run.
pub fn read_same_run<T: DeserializeOwned>(path: &Path, what: &str, hash: &str) -> Result<T> {
    let env: Envelope<T> = read_envelope(path, what)?;
    if env.config_hash != hash {
        bail!(Usage(format!(
            "{what} at {} was produced under config {}, current config is {hash}",
            path.display(),
            env.config_hash
        )));
    }
    Ok(env.artifact)
}
