use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::parse_override;
use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "multiid", version, about = "Identity bank, paired dataset and benchmark pipeline over face embeddings")]
pub struct Cli {
    /// TOML run configuration. Every field has a default.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Override any config field, e.g. `--set retrieval.threshold=0.6`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub sets: Vec<String>,

    /// Base for relative corpus paths (config `data_root`). Defaults to
    /// $MULTIID_DATA_ROOT.
    #[arg(long, global = true, value_name = "DIR")]
    pub data_root: Option<PathBuf>,

    #[arg(long, global = true, value_name = "DIR")]
    pub output_dir: Option<PathBuf>,

    /// Root seed; stages derive their own seeds from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    #[arg(long, global = true)]
    pub workers: Option<usize>,

    /// Rerun stages even when their stamps say they are up to date.
    #[arg(long, global = true)]
    pub force: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate the configured corpora and summarize them.
    Ingest,
    /// DBSCAN each single-ID query group.
    Cluster(ClusterArgs),
    /// Build the reference bank from the clusters.
    BuildBank,
    /// Assign multi-ID faces to bank identities.
    Assign(AssignArgs),
    /// Form paired reference samples.
    Pair,
    /// Carve out the benchmark and filter training pairs.
    Split(SplitArgs),
    /// Corpus and split statistics.
    Stats,
    /// Score generated images against the benchmark.
    Eval(EvalArgs),
    /// Gradient checks for the training losses.
    LossesCheck(LossesCheckArgs),
    /// cluster, build-bank, assign, pair, split and stats in order.
    Pipeline,
    /// Write synthetic fixtures.
    Synth(SynthArgs),
    /// Print the effective configuration as TOML.
    Config,
}

#[derive(Debug, Args)]
pub struct ClusterArgs {
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub min_pts: Option<usize>,
}

#[derive(Debug, Args)]
pub struct AssignArgs {
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub block_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub tail_identities: Option<usize>,
    #[arg(long)]
    pub sample_count: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Generated-image corpus (config `corpora.generated`).
    #[arg(long, value_name = "DIR")]
    pub generated: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LossesCheckArgs {
    /// JSON list of gradient-check inputs to run instead of random ones.
    #[arg(long, value_name = "PATH")]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub instances: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(subcommand)]
    pub what: SynthCommand,
}

#[derive(Debug, Subcommand)]
pub enum SynthCommand {
    /// Single-ID and multi-ID corpora plus ground-truth identities.
    World {
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// A generated-image corpus for the current benchmark split.
    Generated {
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Mode::GroundTruth)]
        mode: Mode,
        /// Cosine to the ground truth in `perturbed` mode.
        #[arg(long, default_value_t = 0.8)]
        similarity: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    GroundTruth,
    CopyReferences,
    Perturbed,
}

fn push<T: Into<toml::Value>>(out: &mut Vec<(String, toml::Value)>, key: &str, v: Option<T>) {
    if let Some(v) = v {
        out.push((key.to_owned(), v.into()));
    }
}

fn path_value(p: &std::path::Path) -> toml::Value {
    toml::Value::String(p.display().to_string())
}

impl Cli {
    /// `--set` pairs first, then dedicated flags, so flags win.
    pub fn overrides(&self) -> CliResult<Vec<(String, toml::Value)>> {
        let mut out = self.sets.iter().map(|s| parse_override(s)).collect::<CliResult<Vec<_>>>()?;
        if let Some(p) = &self.data_root {
            out.push(("data_root".into(), path_value(p)));
        }
        if let Some(p) = &self.output_dir {
            out.push(("output_dir".into(), path_value(p)));
        }
        // TOML integers are i64
        let seed = self.seed.map(|s| i64::try_from(s).map_err(|_| CliError::Config(format!("--seed {s} is above the TOML integer limit {}", i64::MAX))));
        push(&mut out, "seed", seed.transpose()?);
        push(&mut out, "workers", self.workers.map(|w| w as i64));
        match &self.command {
            Command::Cluster(a) => {
                push(&mut out, "cluster.eps", a.eps);
                push(&mut out, "cluster.min_pts", a.min_pts.map(|v| v as i64));
            }
            Command::Assign(a) => {
                push(&mut out, "retrieval.threshold", a.threshold);
                push(&mut out, "retrieval.block_size", a.block_size.map(|v| v as i64));
            }
            Command::Split(a) => {
                push(&mut out, "bench.tail_identities", a.tail_identities.map(|v| v as i64));
                push(&mut out, "bench.sample_count", a.sample_count.map(|v| v as i64));
            }
            Command::Eval(a) => {
                if let Some(p) = &a.generated {
                    out.push(("corpora.generated".into(), path_value(p)));
                }
            }
            Command::LossesCheck(a) => push(&mut out, "loss.check_instances", a.instances.map(|v| v as i64)),
            _ => {}
        }
        Ok(out)
    }
}
