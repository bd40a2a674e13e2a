//! Stage bookkeeping: input checks, up-to-date stamps and the run log.
//!
//! A stage is up to date when its stamp records the same input digest and
//! every declared output still exists. The digest covers the stage name, the
//! tool version, the stage parameters, the stage seed and the bytes of every
//! input file. Outputs are not re-hashed, so damage to an artifact is caught
//! by the next stage that reads it.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const STAMP_DIR: &str = ".stamps";
pub const RUN_LOG: &str = "run_log.json";

/// A file or directory a stage reads.
pub struct Input {
    pub what: &'static str,
    pub path: PathBuf,
    /// Stage (or command) that produces it, for the error message.
    pub producer: &'static str,
}

impl Input {
    pub fn new(what: &'static str, path: impl Into<PathBuf>, producer: &'static str) -> Self {
        Self { what, path: path.into(), producer }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Serialize, Deserialize)]
struct Stamp {
    stage: String,
    tool_version: String,
    input_digest: String,
    outputs: Vec<String>,
}

#[derive(Clone, Copy, Debug, Serialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum StageStatus {
    Ran,
    UpToDate,
    Failed,
}

#[derive(Clone, Debug, Serialize)]
pub struct StageLog {
    pub stage: String,
    pub status: StageStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<String>,
    pub wall_time_s: f64,
}

#[derive(Serialize)]
struct RunLog<'a> {
    tool_version: &'static str,
    command: Vec<String>,
    config_sha256: String,
    root_seed: u64,
    workers: usize,
    status: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    stages: &'a [StageLog],
    wall_time_s: f64,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn files_of(path: &Path) -> CliResult<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = fs::read_dir(path)
        .map_err(|e| CliError::Internal(format!("{}: {e}", path.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    files.sort();
    Ok(files)
}

fn digest_file(path: &Path) -> CliResult<FileDigest> {
    let bytes = fs::read(path).map_err(|e| CliError::Internal(format!("{}: {e}", path.display())))?;
    Ok(FileDigest { path: path.display().to_string(), sha256: sha256_hex(&bytes) })
}

pub struct Ctx {
    pub cfg: RunConfig,
    pub out: PathBuf,
    pub force: bool,
    started: Instant,
    pub log: Vec<StageLog>,
}

impl Ctx {
    pub fn new(cfg: RunConfig, force: bool) -> Self {
        let out = cfg.output_dir.clone();
        Self { cfg, out, force, started: Instant::now(), log: Vec::new() }
    }

    pub fn artifact(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn stamp_path(&self, stage: &str) -> PathBuf {
        self.out.join(STAMP_DIR).join(format!("{stage}.json"))
    }

    /// Runs `body` unless the stage is up to date. `outputs` are paths
    /// relative to the output directory.
    pub fn stage(
        &mut self,
        name: &'static str,
        inputs: Vec<Input>,
        outputs: &[&str],
        params: &impl Serialize,
        seed: Option<u64>,
        body: impl FnOnce(&Ctx) -> multiid::Result<()>,
    ) -> CliResult<()> {
        for i in &inputs {
            if !i.path.exists() {
                return Err(CliError::MissingInput { what: i.what.to_owned(), path: i.path.clone(), producer: i.producer });
            }
        }
        let mut digests = Vec::new();
        for i in &inputs {
            for f in files_of(&i.path)? {
                digests.push(digest_file(&f)?);
            }
        }
        let mut h = Sha256::new();
        h.update(name.as_bytes());
        h.update(TOOL_VERSION.as_bytes());
        h.update(serde_json::to_vec(params).map_err(|e| CliError::Internal(e.to_string()))?);
        h.update(seed.unwrap_or(0).to_le_bytes());
        for d in &digests {
            h.update(d.sha256.as_bytes());
        }
        let input_digest = hex::encode(h.finalize());
        let outputs: Vec<String> = outputs.iter().map(|s| s.to_string()).collect();

        let t0 = Instant::now();
        let up_to_date = !self.force
            && fs::read(self.stamp_path(name))
                .ok()
                .and_then(|b| serde_json::from_slice::<Stamp>(&b).ok())
                .is_some_and(|s| {
                    s.input_digest == input_digest
                        && s.tool_version == TOOL_VERSION
                        && s.outputs == outputs
                        && outputs.iter().all(|o| self.out.join(o).exists())
                });
        let mut entry = StageLog { stage: name.into(), status: StageStatus::UpToDate, seed, inputs: digests, outputs: outputs.clone(), wall_time_s: 0.0 };
        if up_to_date {
            eprintln!("[{name}] up-to-date");
            self.log.push(entry);
            return Ok(());
        }

        fs::create_dir_all(self.out.join(STAMP_DIR)).map_err(|e| CliError::Internal(format!("{}: {e}", self.out.display())))?;
        // a stale stamp must not survive a failed rerun
        let _ = fs::remove_file(self.stamp_path(name));
        if let Err(source) = body(self) {
            entry.status = StageStatus::Failed;
            entry.wall_time_s = t0.elapsed().as_secs_f64();
            self.log.push(entry);
            return Err(CliError::Stage { stage: name, source });
        }
        let stamp = Stamp { stage: name.into(), tool_version: TOOL_VERSION.into(), input_digest, outputs };
        let text = serde_json::to_string_pretty(&stamp).expect("stamp serializes");
        fs::write(self.stamp_path(name), text).map_err(|e| CliError::Internal(format!("stamp for `{name}`: {e}")))?;
        entry.status = StageStatus::Ran;
        entry.wall_time_s = t0.elapsed().as_secs_f64();
        eprintln!("[{name}] done in {:.2}s", entry.wall_time_s);
        self.log.push(entry);
        Ok(())
    }

    /// Writes `run_log.json` into the output directory, if it exists.
    pub fn write_run_log(&self, outcome: &CliResult<()>) {
        if !self.out.is_dir() {
            return;
        }
        let log = RunLog {
            tool_version: TOOL_VERSION,
            command: std::env::args().collect(),
            config_sha256: sha256_hex(self.cfg.to_toml().as_bytes()),
            root_seed: self.cfg.seed,
            workers: self.cfg.workers,
            status: if outcome.is_ok() { "ok" } else { "failed" },
            error: outcome.as_ref().err().map(|e| e.to_string()),
            stages: &self.log,
            wall_time_s: self.started.elapsed().as_secs_f64(),
        };
        let mut text = serde_json::to_string_pretty(&log).expect("run log serializes");
        text.push('\n');
        if let Err(e) = fs::write(self.out.join(RUN_LOG), text) {
            log::warn!("could not write run log: {e}");
        }
    }
}

/// Pretty JSON with a trailing newline. Floats print in serde_json's
/// shortest round-trip form, which is stable across runs.
pub fn write_json(path: &Path, value: &impl Serialize) -> multiid::Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| multiid::Error::Json { path: path.to_path_buf(), source: e })?;
    text.push('\n');
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| multiid::Error::Io { path: dir.to_path_buf(), source: e })?;
    }
    fs::write(path, text).map_err(|e| multiid::Error::Io { path: path.to_path_buf(), source: e })
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> multiid::Result<T> {
    let bytes = fs::read(path).map_err(|e| multiid::Error::Io { path: path.to_path_buf(), source: e })?;
    serde_json::from_slice(&bytes).map_err(|e| multiid::Error::Json { path: path.to_path_buf(), source: e })
}
