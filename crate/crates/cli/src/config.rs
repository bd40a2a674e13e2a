//! Run configuration. A TOML file, then `--set key=value` and dedicated
//! flags on top; every field has a default so the file is optional.

use std::fs;
use std::path::{Path, PathBuf};

use multiid::bank::BankParams;
use multiid::cluster::ClusterParams;
use multiid::dataset::{BenchParams, QualityFilter, DEFAULT_BENCH_SAMPLES, DEFAULT_PAIRED_FRACTION};
use multiid::losses::{LossWeights, DEFAULT_EPSILON};
use multiid::metrics::EvalConfig;
use multiid::retrieval::{RetrievalParams, DEFAULT_THRESHOLD};
use multiid::seed::derive_seed;
use multiid::store::resolve_data_path;
use multiid::synth::SynthConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    /// Base for relative corpus paths; falls back to `MULTIID_DATA_ROOT`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data_root: Option<PathBuf>,
    pub output_dir: PathBuf,
    /// Root seed; each stage derives its own from it.
    pub seed: u64,
    /// Worker threads for parallel stages; 0 picks the machine default.
    pub workers: usize,
    pub corpora: Corpora,
    pub backends: Backends,
    pub cluster: ClusterSection,
    pub bank: BankSection,
    pub retrieval: RetrievalSection,
    pub pairing: PairingSection,
    pub bench: BenchSection,
    pub training: TrainingSection,
    pub loss: LossSection,
    pub synth: SynthSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Corpora {
    pub single_id: PathBuf,
    pub multi_id: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generated: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Backends {
    /// Backend used for clustering, the bank and retrieval.
    pub cluster: String,
    /// Face backends averaged by the evaluator; the first one matches faces.
    pub eval_face: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clip_image: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clip_text: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterSection {
    pub eps: f64,
    pub min_pts: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BankSection {
    pub keep_secondary: bool,
    pub min_secondary_size: usize,
    /// Members below this cosine to their centroid are dropped; -1 keeps all.
    pub member_floor: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalSection {
    pub threshold: f64,
    pub block_size: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PairingSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_image_quality: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_face_quality: Option<f64>,
    pub reject_tags: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    pub tail_identities: usize,
    pub sample_count: usize,
    pub refs_per_identity: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub paired_fraction: f64,
    pub batch_size: usize,
    pub negatives: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSection {
    pub lambda_id: f64,
    pub lambda_cl: f64,
    pub tau: f64,
    pub check_instances: usize,
    pub check_epsilon: f64,
    pub check_tolerance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub face_backends: Vec<String>,
    pub dim: usize,
    pub identities: usize,
    pub refs_per_identity: usize,
    pub member_similarity: (f64, f64),
    pub multi_images: usize,
    pub max_faces_per_image: usize,
    pub zipf_exponent: f64,
    pub distractor_rate: f64,
    pub clip_dim: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: CONFIG_SCHEMA_VERSION,
            data_root: None,
            output_dir: PathBuf::from("multiid-out"),
            seed: 0,
            workers: 0,
            corpora: Corpora::default(),
            backends: Backends::default(),
            cluster: ClusterSection::default(),
            bank: BankSection::default(),
            retrieval: RetrievalSection::default(),
            pairing: PairingSection::default(),
            bench: BenchSection::default(),
            training: TrainingSection::default(),
            loss: LossSection::default(),
            synth: SynthSection::default(),
        }
    }
}

impl Default for Corpora {
    fn default() -> Self {
        Self { single_id: "single_id".into(), multi_id: "multi_id".into(), generated: None }
    }
}

impl Default for Backends {
    fn default() -> Self {
        let e = EvalConfig::default();
        Self {
            cluster: "arcface".into(),
            eval_face: e.face_backends.iter().map(|b| b.to_string()).collect(),
            clip_image: e.clip_image_backend.map(|b| b.to_string()),
            clip_text: e.clip_text_backend.map(|b| b.to_string()),
        }
    }
}

impl Default for ClusterSection {
    fn default() -> Self {
        let p = ClusterParams::default();
        Self { eps: p.eps, min_pts: p.min_pts }
    }
}

impl Default for BankSection {
    fn default() -> Self {
        let p = BankParams::default();
        Self { keep_secondary: p.keep_secondary, min_secondary_size: p.min_secondary_size, member_floor: p.member_floor.unwrap_or(-1.0) }
    }
}

impl Default for RetrievalSection {
    fn default() -> Self {
        Self { threshold: DEFAULT_THRESHOLD, block_size: RetrievalParams::default().block_size }
    }
}

impl Default for BenchSection {
    fn default() -> Self {
        let p = BenchParams::default();
        Self { tail_identities: p.tail_identities, sample_count: DEFAULT_BENCH_SAMPLES, refs_per_identity: p.refs_per_identity }
    }
}

impl Default for TrainingSection {
    fn default() -> Self {
        Self { paired_fraction: DEFAULT_PAIRED_FRACTION, batch_size: 32, negatives: 4096 }
    }
}

impl Default for LossSection {
    fn default() -> Self {
        let w = LossWeights::default();
        Self {
            lambda_id: w.lambda_id,
            lambda_cl: w.lambda_cl,
            tau: 0.07,
            check_instances: 100,
            check_epsilon: DEFAULT_EPSILON,
            check_tolerance: 1e-4,
        }
    }
}

impl Default for SynthSection {
    fn default() -> Self {
        let s = SynthConfig::default();
        Self {
            face_backends: s.face_backends,
            dim: s.dim,
            identities: s.identities,
            refs_per_identity: s.refs_per_identity,
            member_similarity: s.member_similarity,
            multi_images: s.multi_images,
            max_faces_per_image: s.max_faces_per_image,
            zipf_exponent: s.zipf_exponent,
            distractor_rate: s.distractor_rate,
            clip_dim: s.clip_dim,
        }
    }
}

fn bad(field: &str, reason: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("invalid value for `{field}`: {reason}"))
}

/// Sets a dotted key in a TOML table, creating intermediate tables.
fn set_path(table: &mut toml::Table, key: &str, value: toml::Value) -> CliResult<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| CliError::Config(format!("empty override key `{key}`")))?;
    let mut t = table;
    for p in parts {
        let entry = t.entry(p.to_owned()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        t = entry.as_table_mut().ok_or_else(|| CliError::Config(format!("`{p}` in override `{key}` is not a section")))?;
    }
    t.insert(last.to_owned(), value);
    Ok(())
}

/// Parses the right-hand side of `key=value` as a TOML value, falling back
/// to a bare string.
pub fn parse_override(raw: &str) -> CliResult<(String, toml::Value)> {
    let (k, v) = raw.split_once('=').ok_or_else(|| CliError::Config(format!("override `{raw}` is not KEY=VALUE")))?;
    let value = toml::from_str::<toml::Table>(&format!("v = {v}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(v.to_owned()));
    Ok((k.trim().to_owned(), value))
}

impl RunConfig {
    /// Loads `path` (if any), applies overrides in order and validates.
    pub fn load(path: Option<&Path>, overrides: &[(String, toml::Value)]) -> CliResult<Self> {
        let mut table = match path {
            Some(p) => {
                if !p.is_file() {
                    return Err(CliError::MissingConfig(p.to_path_buf()));
                }
                let text = fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                toml::from_str::<toml::Table>(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for (k, v) in overrides {
            set_path(&mut table, k, v.clone())?;
        }
        // reparsing the merged text makes errors quote the offending line
        let merged = toml::to_string(&table).map_err(|e| CliError::Config(e.to_string()))?;
        let cfg: RunConfig = toml::from_str(&merged).map_err(|e: toml::de::Error| {
            let origin = path.map_or("overrides".to_owned(), |p| p.display().to_string());
            CliError::Config(format!("{origin}: {}", e.to_string().trim_end()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(bad("schema_version", format!("{} is not supported (expected {CONFIG_SCHEMA_VERSION})", self.schema_version)));
        }
        if !(-1.0..=1.0).contains(&self.retrieval.threshold) {
            return Err(bad("retrieval.threshold", format!("{} is outside [-1, 1]", self.retrieval.threshold)));
        }
        if !(-1.0..=1.0).contains(&self.bank.member_floor) {
            return Err(bad("bank.member_floor", format!("{} is outside [-1, 1]", self.bank.member_floor)));
        }
        if self.retrieval.block_size == 0 {
            return Err(bad("retrieval.block_size", "must be at least 1"));
        }
        self.cluster_params().validate().map_err(|e| bad("cluster", e))?;
        if !(0.0..=1.0).contains(&self.training.paired_fraction) {
            return Err(bad("training.paired_fraction", format!("{} is outside [0, 1]", self.training.paired_fraction)));
        }
        if self.training.batch_size == 0 {
            return Err(bad("training.batch_size", "must be at least 1"));
        }
        for (name, v) in [("loss.lambda_id", self.loss.lambda_id), ("loss.lambda_cl", self.loss.lambda_cl)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(bad(name, format!("{v} must be a finite non-negative weight")));
            }
        }
        if !(self.loss.tau > 0.0) {
            return Err(bad("loss.tau", "must be positive"));
        }
        if self.backends.eval_face.is_empty() {
            return Err(bad("backends.eval_face", "needs at least one backend"));
        }
        if self.bench.tail_identities == 0 || self.bench.refs_per_identity == 0 {
            return Err(bad("bench", "tail_identities and refs_per_identity must be at least 1"));
        }
        Ok(())
    }

    pub fn stage_seed(&self, stage: &str) -> u64 {
        derive_seed(self.seed, stage)
    }

    pub fn corpus_path(&self, p: &Path) -> PathBuf {
        resolve_data_path(self.data_root.as_deref(), p)
    }

    pub fn cluster_params(&self) -> ClusterParams {
        ClusterParams { eps: self.cluster.eps, min_pts: self.cluster.min_pts }
    }

    pub fn bank_params(&self) -> BankParams {
        BankParams {
            keep_secondary: self.bank.keep_secondary,
            min_secondary_size: self.bank.min_secondary_size,
            member_floor: (self.bank.member_floor > -1.0).then_some(self.bank.member_floor),
        }
    }

    pub fn retrieval_params(&self) -> RetrievalParams {
        RetrievalParams { threshold: self.retrieval.threshold, block_size: self.retrieval.block_size, workers: self.workers }
    }

    pub fn quality_filter(&self) -> QualityFilter {
        QualityFilter {
            min_image_quality: self.pairing.min_image_quality,
            min_face_quality: self.pairing.min_face_quality,
            reject_tags: self.pairing.reject_tags.clone(),
        }
    }

    pub fn bench_params(&self) -> BenchParams {
        BenchParams {
            tail_identities: self.bench.tail_identities,
            sample_count: self.bench.sample_count,
            refs_per_identity: self.bench.refs_per_identity,
            seed: self.stage_seed("split"),
        }
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            face_backends: self.backends.eval_face.iter().map(|b| b.as_str().into()).collect(),
            clip_image_backend: self.backends.clip_image.as_deref().map(Into::into),
            clip_text_backend: self.backends.clip_text.as_deref().map(Into::into),
        }
    }

    pub fn synth_config(&self) -> SynthConfig {
        let s = &self.synth;
        SynthConfig {
            seed: self.stage_seed("synth"),
            face_backends: s.face_backends.clone(),
            dim: s.dim,
            identities: s.identities,
            refs_per_identity: s.refs_per_identity,
            member_similarity: s.member_similarity,
            multi_images: s.multi_images,
            max_faces_per_image: s.max_faces_per_image,
            zipf_exponent: s.zipf_exponent,
            distractor_rate: s.distractor_rate,
            clip_dim: s.clip_dim,
        }
    }
}
