// SPDX-License-Identifier: MIT OR Apache-2.0

//! Run directory layout, lock file and manifest.
//!
//! ```text
//! <run>/run.cfg              resolved configuration
//! <run>/manifest.txt         run id, hashes of every artifact, checkpoint list
//! <run>/corpus/train.bin     training shard (+ train.ann for PCFG)
//! <run>/corpus/heldout.bin   evaluation shard (+ heldout.ann for PCFG)
//! <run>/corpus/stats.txt     Zipf fit and counts; lengths.csv holds the histogram
//! <run>/checkpoints/         step-XXXXXXXX.ckpt
//! <run>/runlog.csv
//! <run>/metrics.csv
//! ```

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use hlab_core::config::KvConfig;
use hlab_core::corpus::file_sha256;
use hlab_core::train::list_checkpoints;
use hlab_core::{HlabError, Result};

use crate::runcfg::RunConfig;

#[derive(Debug, Clone)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn config_path(&self) -> PathBuf {
        self.root.join("run.cfg")
    }
    pub fn manifest_path(&self) -> PathBuf {
        self.root.join("manifest.txt")
    }
    pub fn corpus_dir(&self) -> PathBuf {
        self.root.join("corpus")
    }
    pub fn train_shard(&self) -> PathBuf {
        self.corpus_dir().join("train.bin")
    }
    pub fn train_sidecar(&self) -> PathBuf {
        self.corpus_dir().join("train.ann")
    }
    pub fn heldout_shard(&self) -> PathBuf {
        self.corpus_dir().join("heldout.bin")
    }
    pub fn heldout_sidecar(&self) -> PathBuf {
        self.corpus_dir().join("heldout.ann")
    }
    pub fn checkpoint_dir(&self) -> PathBuf {
        self.root.join("checkpoints")
    }
    pub fn runlog_path(&self) -> PathBuf {
        self.root.join("runlog.csv")
    }
    pub fn metrics_path(&self) -> PathBuf {
        self.root.join("metrics.csv")
    }
    pub fn probe_dir(&self) -> PathBuf {
        self.root.join("probes")
    }

    pub fn create(&self) -> Result<()> {
        fs::create_dir_all(self.corpus_dir()).map_err(|e| HlabError::io(self.corpus_dir(), e))
    }

    /// Stored configuration, if the run has been configured.
    pub fn load_config(&self) -> Result<Option<RunConfig>> {
        let p = self.config_path();
        if !p.exists() {
            return Ok(None);
        }
        RunConfig::from_kv(&KvConfig::load(&p)?).map(Some)
    }

    /// Writes `cfg` on first use; afterwards the stored text must match.
    pub fn bind_config(&self, cfg: &RunConfig) -> Result<()> {
        let text = cfg.to_kv().to_text();
        let p = self.config_path();
        if p.exists() {
            let old = fs::read_to_string(&p).map_err(|e| HlabError::io(&p, e))?;
            if old != text {
                return Err(HlabError::Contract(format!(
                    "{} already holds a different configuration; use a new --out directory",
                    self.root.display()
                )));
            }
            return Ok(());
        }
        self.create()?;
        fs::write(&p, text).map_err(|e| HlabError::io(&p, e))
    }

    /// Takes the run lock; released when the guard drops.
    pub fn lock(&self) -> Result<RunLock> {
        fs::create_dir_all(&self.root).map_err(|e| HlabError::io(&self.root, e))?;
        let path = self.root.join(".lock");
        let mut f = OpenOptions::new().write(true).create_new(true).open(&path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::AlreadyExists {
                HlabError::Contract(format!("{} is locked by another command", self.root.display()))
            } else {
                HlabError::io(&path, e)
            }
        })?;
        let _ = writeln!(f, "{}", std::process::id());
        Ok(RunLock { path })
    }

    /// Rewrites the manifest from the artifacts currently on disk. The
    /// creation time is kept from an earlier manifest.
    pub fn refresh_manifest(&self, cfg: &RunConfig, fp_mode: &str) -> Result<()> {
        let mp = self.manifest_path();
        let created = fs::read_to_string(&mp)
            .ok()
            .and_then(|t| KvConfig::parse_str(&t).ok())
            .and_then(|kv| kv.get_str("created_unix").map(str::to_string))
            .unwrap_or_else(|| {
                SystemTime::now()
                    .duration_since(UNIX_EPOCH)
                    .map(|d| d.as_secs())
                    .unwrap_or(0)
                    .to_string()
            });
        let mut kv = KvConfig::default();
        kv.set("run_id", &cfg.run_id);
        kv.set("process", cfg.process.as_str());
        kv.set("created_unix", created);
        kv.set("fp_mode", fp_mode);
        kv.set("config.sha256", hlab_core::corpus::sha256_hex(cfg.to_kv().to_text().as_bytes()));
        for (key, path) in [
            ("corpus.train.sha256", self.train_shard()),
            ("corpus.train_ann.sha256", self.train_sidecar()),
            ("corpus.heldout.sha256", self.heldout_shard()),
            ("corpus.heldout_ann.sha256", self.heldout_sidecar()),
            ("metrics.sha256", self.metrics_path()),
        ] {
            if path.exists() {
                kv.set(key, file_sha256(&path)?);
            }
        }
        if self.checkpoint_dir().exists() {
            for (step, path) in list_checkpoints(&self.checkpoint_dir())? {
                kv.set(&format!("checkpoint.{step:08}"), file_sha256(&path)?);
            }
        }
        fs::write(&mp, kv.to_text()).map_err(|e| HlabError::io(&mp, e))
    }
}

pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}
