//! Run directory: layout, lock file and manifest.

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

pub const SUBDIRS: [&str; 6] = ["corpus", "model", "series", "selection", "eval", "report"];
const LOCK: &str = ".lock";
const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub params: serde_json::Value,
    /// Input path → SHA-256.
    pub inputs: BTreeMap<String, String>,
    /// Output path relative to the run directory → SHA-256.
    pub outputs: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skipped: Option<String>,
    pub started_at: String,
    pub elapsed_ms: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub stages: BTreeMap<String, StageRecord>,
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let mut f = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(|e| CliError::io(path, e))?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

/// Exclusive hold on a run directory, released on drop.
#[derive(Debug)]
struct RunLock(PathBuf);

impl RunLock {
    fn acquire(dir: &Path) -> CliResult<RunLock> {
        let lock = dir.join(LOCK);
        match OpenOptions::new().write(true).create_new(true).open(&lock) {
            Ok(mut f) => {
                use std::io::Write;
                let _ = writeln!(f, "{}", std::process::id());
                Ok(RunLock(lock))
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(CliError::Locked {
                dir: dir.to_path_buf(),
                lock,
            }),
            Err(e) => Err(CliError::io(&lock, e)),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.0);
    }
}

/// An open run directory.
pub struct Run {
    pub cfg: RunConfig,
    pub dir: PathBuf,
    manifest: Manifest,
    _lock: RunLock,
}

/// Timing and provenance of one stage while it runs.
pub struct StageGuard {
    name: &'static str,
    started_at: String,
    clock: Instant,
    params: serde_json::Value,
    inputs: Vec<PathBuf>,
    outputs: Vec<String>,
}

impl StageGuard {
    pub fn input(&mut self, p: impl Into<PathBuf>) {
        self.inputs.push(p.into());
    }

    /// Register an output by its path relative to the run directory.
    pub fn output(&mut self, rel: impl Into<String>) {
        self.outputs.push(rel.into());
    }
}

impl Run {
    pub fn open(cfg: RunConfig) -> CliResult<Run> {
        let dir = cfg.paths.run_dir.clone();
        for sub in SUBDIRS {
            let p = dir.join(sub);
            std::fs::create_dir_all(&p).map_err(|e| CliError::io(&p, e))?;
        }
        let lock = RunLock::acquire(&dir)?;
        let mpath = dir.join(MANIFEST);
        let mut manifest = if mpath.is_file() {
            let body = std::fs::read_to_string(&mpath).map_err(|e| CliError::io(&mpath, e))?;
            serde_json::from_str(&body).unwrap_or_else(|e| {
                log::warn!("ignoring unreadable manifest {}: {e}", mpath.display());
                Manifest::default()
            })
        } else {
            Manifest::default()
        };
        manifest.version = env!("CARGO_PKG_VERSION").to_string();
        manifest.seed = cfg.seed;
        manifest.config = serde_json::to_value(&cfg).expect("config serializes");
        Ok(Run {
            cfg,
            dir,
            manifest,
            _lock: lock,
        })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    /// Path of an artifact that `stage` must already have written.
    pub fn require(&self, rel: &str, stage: &'static str) -> CliResult<PathBuf> {
        let p = self.path(rel);
        if p.is_file() {
            Ok(p)
        } else {
            Err(CliError::MissingArtifact { path: p, stage })
        }
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn begin(&self, name: &'static str, params: serde_json::Value) -> StageGuard {
        log::info!("stage {name}: start");
        StageGuard {
            name,
            started_at: chrono::Utc::now().to_rfc3339(),
            clock: Instant::now(),
            params,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    /// Hash inputs and outputs and persist the stage record.
    pub fn finish(&mut self, g: StageGuard, skipped: Option<String>) -> CliResult<()> {
        let mut inputs = BTreeMap::new();
        for p in &g.inputs {
            inputs.insert(p.display().to_string(), sha256_file(p)?);
        }
        let mut outputs = BTreeMap::new();
        for rel in &g.outputs {
            outputs.insert(rel.clone(), sha256_file(&self.path(rel))?);
        }
        let elapsed_ms = g.clock.elapsed().as_millis() as u64;
        log::info!("stage {}: done in {elapsed_ms} ms", g.name);
        self.manifest.stages.insert(
            g.name.to_string(),
            StageRecord {
                params: g.params,
                inputs,
                outputs,
                skipped,
                started_at: g.started_at,
                elapsed_ms,
            },
        );
        self.write_manifest()
    }

    fn write_manifest(&self) -> CliResult<()> {
        let path = self.path(MANIFEST);
        let tmp = self.path("manifest.json.tmp");
        let body = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        std::fs::write(&tmp, body).map_err(|e| CliError::io(&tmp, e))?;
        std::fs::rename(&tmp, &path).map_err(|e| CliError::io(&path, e))
    }
}
