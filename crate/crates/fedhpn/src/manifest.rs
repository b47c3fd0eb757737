//! Run directories and their manifests.
//!
//! A run directory holds `config.toml` (the effective config, byte-for-byte
//! what `config_hash` covers), `manifest.json`, and one subtree per stage.
//! Stages are append-only: rerunning a completed stage needs `--force`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::error::{read_artifact_string, write_file, HarnessError, Result};

pub const MANIFEST: &str = "manifest.json";
pub const CONFIG: &str = "config.toml";
pub const FORMAT_VERSION: u32 = 1;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash of the config with seed and output directory blanked, shared by
/// every seed of one experiment.
pub fn experiment_hash(cfg: &ExperimentConfig) -> String {
    let mut c = cfg.clone();
    c.seed = 0;
    c.out = None;
    sha256_hex(c.to_toml().as_bytes())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    /// Paths relative to the run directory, sorted.
    pub artifacts: Vec<String>,
    pub wall_clock_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub experiment_hash: String,
    pub seed: u64,
    pub versions: BTreeMap<String, String>,
    pub stages: BTreeMap<String, StageRecord>,
}

impl RunManifest {
    fn new(config_bytes: &[u8], cfg: &ExperimentConfig) -> Self {
        let mut versions = BTreeMap::new();
        versions.insert("fedhpn".into(), env!("CARGO_PKG_VERSION").into());
        versions.insert("format".into(), FORMAT_VERSION.to_string());
        Self {
            config_hash: sha256_hex(config_bytes),
            experiment_hash: experiment_hash(cfg),
            seed: cfg.seed,
            versions,
            stages: BTreeMap::new(),
        }
    }

    pub fn load(run: &Path) -> Result<Self> {
        let p = run.join(MANIFEST);
        serde_json::from_str(&read_artifact_string(&p)?).map_err(|e| HarnessError::format("manifest", &p, e))
    }
}

#[derive(Debug)]
pub struct RunDir {
    root: PathBuf,
    pub manifest: RunManifest,
}

impl RunDir {
    /// Opens `root` for `cfg`, creating it if needed. An existing run with a
    /// different config is refused unless `force`, which starts it afresh.
    pub fn open(root: &Path, cfg: &ExperimentConfig, force: bool) -> Result<Self> {
        let text = cfg.to_toml();
        let hash = sha256_hex(text.as_bytes());
        let manifest_path = root.join(MANIFEST);
        if manifest_path.exists() {
            let manifest = RunManifest::load(root)?;
            let stored = read_artifact_string(&root.join(CONFIG))?;
            if sha256_hex(stored.as_bytes()) != manifest.config_hash {
                return Err(HarnessError::Config(format!(
                    "{} does not match its manifest's config hash",
                    root.join(CONFIG).display()
                )));
            }
            if manifest.config_hash == hash {
                return Ok(Self {
                    root: root.to_path_buf(),
                    manifest,
                });
            }
            if !force {
                return Err(HarnessError::Usage(format!(
                    "{} holds a run with a different config; use a new --out or --force",
                    root.display()
                )));
            }
        }
        write_file(&root.join(CONFIG), text.as_bytes())?;
        let run = Self {
            root: root.to_path_buf(),
            manifest: RunManifest::new(text.as_bytes(), cfg),
        };
        run.save()?;
        Ok(run)
    }

    /// Opens an existing run without a config (for reading artifacts).
    pub fn existing(root: &Path) -> Result<(Self, ExperimentConfig)> {
        let manifest = RunManifest::load(root)?;
        let cfg = ExperimentConfig::load(&root.join(CONFIG))?;
        Ok((
            Self {
                root: root.to_path_buf(),
                manifest,
            },
            cfg,
        ))
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn has_stage(&self, stage: &str) -> bool {
        self.manifest.stages.contains_key(stage)
    }

    /// Refuses to redo a completed stage unless `force`.
    pub fn begin_stage(&self, stage: &str, force: bool) -> Result<()> {
        if self.has_stage(stage) && !force {
            return Err(HarnessError::Usage(format!(
                "stage `{stage}` already completed in {}; rerun with --force",
                self.root.display()
            )));
        }
        Ok(())
    }

    pub fn finish_stage(&mut self, stage: &str, artifacts: &[PathBuf], secs: f64) -> Result<()> {
        let mut rel: Vec<String> = artifacts
            .iter()
            .map(|p| {
                p.strip_prefix(&self.root)
                    .unwrap_or(p)
                    .to_string_lossy()
                    .replace('\\', "/")
            })
            .collect();
        rel.sort();
        rel.dedup();
        self.manifest.stages.insert(
            stage.to_string(),
            StageRecord {
                artifacts: rel,
                wall_clock_secs: secs,
            },
        );
        self.save()
    }

    fn save(&self) -> Result<()> {
        write_file(&self.root.join(MANIFEST), &crate::json_bytes(&self.manifest))
    }
}
