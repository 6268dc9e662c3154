//! Output directory handling and the per-run manifest.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    /// Relative to the output directory.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Issue {
    pub subject: String,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub started_at: String,
    pub runtime_seconds: f64,
    pub workers: usize,
    pub config: Option<ExperimentConfig>,
    pub config_checksum: Option<String>,
    pub artifacts: Vec<Artifact>,
    pub failures: Vec<Issue>,
    pub dropped_targets: Vec<Issue>,
    pub warnings: Vec<String>,
    pub error: Option<String>,
}

impl RunManifest {
    pub fn file_name(command: &str) -> String {
        format!("manifest-{command}.json")
    }

    pub fn artifact(&self, path: &str) -> Option<&Artifact> {
        self.artifacts.iter().find(|a| a.path == path)
    }
}

/// One invocation writing into an output directory. The manifest is written
/// by [`Run::finish`], which consumes the run, so it happens once.
pub struct Run {
    out: PathBuf,
    started: Instant,
    manifest: RunManifest,
}

impl Run {
    /// Creates `out` and checks that it is writable before any work starts.
    pub fn start(command: &str, out: &Path, config: Option<&ExperimentConfig>, workers: usize) -> anyhow::Result<Self> {
        fs::create_dir_all(out).with_context(|| format!("cannot create output directory {}", out.display()))?;
        let probe = out.join(".iccplan-write-probe");
        fs::write(&probe, b"").with_context(|| format!("output directory {} is not writable", out.display()))?;
        fs::remove_file(&probe)?;
        Ok(Self {
            out: out.to_path_buf(),
            started: Instant::now(),
            manifest: RunManifest {
                tool: env!("CARGO_PKG_NAME").into(),
                version: env!("CARGO_PKG_VERSION").into(),
                command: command.into(),
                started_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
                runtime_seconds: 0.0,
                workers,
                config: config.cloned(),
                config_checksum: config.map(ExperimentConfig::checksum),
                artifacts: Vec::new(),
                failures: Vec::new(),
                dropped_targets: Vec::new(),
                warnings: Vec::new(),
                error: None,
            },
        })
    }

    pub fn out(&self) -> &Path {
        &self.out
    }

    /// Renders an artifact in memory, writes it under the output directory,
    /// and records its checksum.
    pub fn write_artifact<F>(&mut self, rel: &str, render: F) -> anyhow::Result<()>
    where
        F: FnOnce(&mut Vec<u8>) -> iccplan_core::Result<()>,
    {
        let mut bytes = Vec::new();
        render(&mut bytes).with_context(|| format!("rendering {rel}"))?;
        let path = self.out.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let mut file = fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        file.write_all(&bytes)?;
        file.sync_all()?;
        log::info!("wrote {}", path.display());
        self.manifest.artifacts.retain(|a| a.path != rel);
        self.manifest.artifacts.push(Artifact {
            path: rel.into(),
            sha256: hex::encode(Sha256::digest(&bytes)),
            bytes: bytes.len() as u64,
        });
        Ok(())
    }

    /// Replaces the config snapshot, e.g. after targets were dropped.
    pub fn set_config(&mut self, config: &ExperimentConfig) {
        self.manifest.config = Some(config.clone());
        self.manifest.config_checksum = Some(config.checksum());
    }

    pub fn failure(&mut self, subject: impl Into<String>, detail: impl Into<String>) {
        self.manifest.failures.push(Issue {
            subject: subject.into(),
            detail: detail.into(),
        });
    }

    pub fn dropped(&mut self, subject: impl Into<String>, detail: impl Into<String>) {
        self.manifest.dropped_targets.push(Issue {
            subject: subject.into(),
            detail: detail.into(),
        });
    }

    pub fn warn(&mut self, message: impl Into<String>) {
        let message = message.into();
        log::warn!("{message}");
        self.manifest.warnings.push(message);
    }

    pub fn finish(mut self, error: Option<String>) -> anyhow::Result<PathBuf> {
        self.manifest.runtime_seconds = self.started.elapsed().as_secs_f64();
        self.manifest.error = error;
        let path = self.out.join(RunManifest::file_name(&self.manifest.command));
        let json = serde_json::to_string_pretty(&self.manifest)?;
        fs::write(&path, json + "\n").with_context(|| format!("writing {}", path.display()))?;
        log::info!("wrote {}", path.display());
        Ok(path)
    }
}
