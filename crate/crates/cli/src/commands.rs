use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use multiid::bank::{build_bank, cluster_corpus, BankReport, ClusteredGroup, GroupClusters, ReferenceBank};
use multiid::dataset::{build_pairs_filtered, corpus_stats, split_bench, BenchSplit, CorpusStats, Pairing};
use multiid::losses::{grad_check, Denominator, GradCheckInput, Reduction};
use multiid::metrics::{evaluate, EvalInputs};
use multiid::retrieval::{apply_assignments, assign_corpus, AssignmentResult};
use multiid::store::{BackendDescriptor, Corpus, SplitTag};
use multiid::synth::{generate, generated_corpus, GeneratedMode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::args::Mode;
use crate::error::{CliError, CliResult};
use crate::stage::{read_json, write_json, Ctx, Input};

pub const INGEST_REPORT: &str = "ingest.json";
pub const CLUSTERS: &str = "clusters.json";
pub const BANK_DIR: &str = "bank";
pub const BANK_REPORT: &str = "bank_report.json";
pub const ASSIGNMENTS: &str = "assignments.json";
pub const ASSIGNED_DIR: &str = "multi_assigned";
pub const PAIRS: &str = "pairs.json";
pub const SPLIT: &str = "split.json";
pub const TRAINING_PAIRS: &str = "training_pairs.json";
pub const STATS: &str = "stats.json";
pub const STATS_CSV: &str = "stats.csv";
pub const EVAL_JSON: &str = "eval.json";
pub const EVAL_CSV: &str = "eval.csv";
pub const LOSSES_CHECK: &str = "losses_check.json";

/// The six stages `pipeline` runs, in order.
pub const PIPELINE: [&str; 6] = ["cluster", "build-bank", "assign", "pair", "split", "stats"];

impl Ctx {
    fn single_path(&self) -> PathBuf {
        self.cfg.corpus_path(&self.cfg.corpora.single_id)
    }

    fn multi_path(&self) -> PathBuf {
        self.cfg.corpus_path(&self.cfg.corpora.multi_id)
    }

    fn single_input(&self) -> Input {
        Input::new("single-ID corpus (corpora.single_id)", self.single_path(), "synth world")
    }

    fn bank_input(&self) -> Input {
        Input::new("reference bank", self.artifact(BANK_DIR), "build-bank")
    }

    fn assigned_input(&self) -> Input {
        Input::new("assigned multi-ID corpus", self.artifact(ASSIGNED_DIR), "assign")
    }
}

#[derive(Serialize)]
struct CorpusSummary {
    role: &'static str,
    path: String,
    corpus_id: String,
    split: SplitTag,
    images: u64,
    faces: u64,
    identified_faces: usize,
    backends: Vec<BackendDescriptor>,
}

fn summarize(role: &'static str, path: &Path, c: &Corpus) -> CorpusSummary {
    CorpusSummary {
        role,
        path: path.display().to_string(),
        corpus_id: c.corpus_id().to_owned(),
        split: c.split(),
        images: c.counts().images,
        faces: c.counts().faces,
        identified_faces: c.faces().iter().filter(|f| f.identity_id.is_some()).count(),
        backends: c.backends().to_vec(),
    }
}

pub fn ingest(ctx: &mut Ctx) -> CliResult<()> {
    let mut corpora = vec![("single_id", ctx.single_path()), ("multi_id", ctx.multi_path())];
    if let Some(g) = &ctx.cfg.corpora.generated {
        corpora.push(("generated", ctx.cfg.corpus_path(g)));
    }
    let inputs = corpora.iter().map(|(role, p)| Input::new(role, p.clone(), "synth world")).collect();
    ctx.stage("ingest", inputs, &[INGEST_REPORT], &ctx.cfg.corpora.clone(), None, |ctx| {
        let summaries = corpora
            .iter()
            .map(|(role, p)| Ok(summarize(role, p, &Corpus::ingest_dir(p)?)))
            .collect::<multiid::Result<Vec<_>>>()?;
        write_json(&ctx.artifact(INGEST_REPORT), &serde_json::json!({ "corpora": summaries }))
    })
}

#[derive(Serialize, Deserialize)]
struct ClustersFile {
    backend: String,
    eps: f64,
    min_pts: usize,
    groups: Vec<GroupClusters>,
}

pub fn cluster(ctx: &mut Ctx) -> CliResult<()> {
    let params = (ctx.cfg.backends.cluster.clone(), ctx.cfg.cluster.clone());
    ctx.stage("cluster", vec![ctx.single_input()], &[CLUSTERS], &params, None, |ctx| {
        let corpus = Corpus::ingest_dir(&ctx.single_path())?;
        let p = ctx.cfg.cluster_params();
        let groups = cluster_corpus(&corpus, &ctx.cfg.backends.cluster, &p)?;
        let file = ClustersFile {
            backend: ctx.cfg.backends.cluster.clone(),
            eps: p.eps,
            min_pts: p.min_pts,
            groups: groups.iter().map(|g| g.summary()).collect(),
        };
        write_json(&ctx.artifact(CLUSTERS), &file)
    })
}

pub fn build_bank_stage(ctx: &mut Ctx) -> CliResult<()> {
    let inputs = vec![ctx.single_input(), Input::new("cluster summary", ctx.artifact(CLUSTERS), "cluster")];
    ctx.stage("build-bank", inputs, &[BANK_DIR, BANK_REPORT], &ctx.cfg.bank.clone(), None, |ctx| {
        let corpus = Corpus::ingest_dir(&ctx.single_path())?;
        let file: ClustersFile = read_json(&ctx.artifact(CLUSTERS))?;
        let groups = file
            .groups
            .iter()
            .map(|g| ClusteredGroup::from_summary(&corpus, &file.backend, g))
            .collect::<multiid::Result<Vec<_>>>()?;
        let (bank, report): (ReferenceBank<f32>, BankReport) = build_bank(&groups, &ctx.cfg.bank_params())?;
        bank.save(&ctx.artifact(BANK_DIR))?;
        write_json(&ctx.artifact(BANK_REPORT), &report)
    })
}

#[derive(Serialize)]
struct AssignmentsFile<'a> {
    backend: &'a str,
    threshold: f64,
    face_count: usize,
    assigned_count: usize,
    results: &'a [AssignmentResult],
}

pub fn assign(ctx: &mut Ctx) -> CliResult<()> {
    let inputs = vec![Input::new("multi-ID corpus (corpora.multi_id)", ctx.multi_path(), "synth world"), ctx.bank_input()];
    let params = ctx.cfg.retrieval.clone();
    ctx.stage("assign", inputs, &[ASSIGNMENTS, ASSIGNED_DIR], &params, None, |ctx| {
        let bank = ReferenceBank::load(&ctx.artifact(BANK_DIR))?;
        let corpus = Corpus::ingest_dir(&ctx.multi_path())?;
        let results = assign_corpus(&corpus, &bank, &ctx.cfg.retrieval_params())?;
        write_json(
            &ctx.artifact(ASSIGNMENTS),
            &AssignmentsFile {
                backend: bank.backend().as_str(),
                threshold: ctx.cfg.retrieval.threshold,
                face_count: results.len(),
                assigned_count: results.iter().filter(|r| r.assigned).count(),
                results: &results,
            },
        )?;
        apply_assignments(corpus, &results)?.export_dir(&ctx.artifact(ASSIGNED_DIR))
    })
}

pub fn pair(ctx: &mut Ctx) -> CliResult<()> {
    let seed = ctx.cfg.stage_seed("pair");
    let inputs = vec![ctx.assigned_input(), ctx.bank_input()];
    ctx.stage("pair", inputs, &[PAIRS], &ctx.cfg.pairing.clone(), Some(seed), |ctx| {
        let bank = ReferenceBank::<f32>::load(&ctx.artifact(BANK_DIR))?;
        let corpus = Corpus::ingest_dir(&ctx.artifact(ASSIGNED_DIR))?;
        let pairing = build_pairs_filtered(&corpus, &bank, seed, &ctx.cfg.quality_filter());
        write_json(&ctx.artifact(PAIRS), &pairing)
    })
}

pub fn split(ctx: &mut Ctx) -> CliResult<()> {
    let params = ctx.cfg.bench_params();
    let inputs = vec![ctx.assigned_input(), ctx.bank_input(), Input::new("pairs", ctx.artifact(PAIRS), "pair")];
    ctx.stage("split", inputs, &[SPLIT, TRAINING_PAIRS], &params, Some(params.seed), |ctx| {
        let bank = ReferenceBank::<f32>::load(&ctx.artifact(BANK_DIR))?;
        let corpus = Corpus::ingest_dir(&ctx.artifact(ASSIGNED_DIR))?;
        let split = split_bench(&corpus, &bank, &params)?;
        let pairs: Pairing = read_json(&ctx.artifact(PAIRS))?;
        write_json(&ctx.artifact(SPLIT), &split)?;
        write_json(&ctx.artifact(TRAINING_PAIRS), &split.filter_pairs(&pairs))
    })
}

#[derive(Serialize)]
struct BenchSummary {
    samples: usize,
    samples_by_identity_count: BTreeMap<usize, usize>,
    selected_identities: usize,
    bench_identities: usize,
    training_images: usize,
    excluded_images: usize,
    training_identities: usize,
    shared_identities: usize,
}

#[derive(Serialize)]
struct StatsFile {
    single_id: CorpusStats,
    multi_id: CorpusStats,
    bench: BenchSummary,
}

pub fn stats(ctx: &mut Ctx) -> CliResult<()> {
    let inputs = vec![ctx.single_input(), ctx.assigned_input(), ctx.bank_input(), Input::new("benchmark split", ctx.artifact(SPLIT), "split")];
    ctx.stage("stats", inputs, &[STATS, STATS_CSV], &(), None, |ctx| {
        let bank = ReferenceBank::<f32>::load(&ctx.artifact(BANK_DIR))?;
        let single = Corpus::ingest_dir(&ctx.single_path())?;
        let multi = Corpus::ingest_dir(&ctx.artifact(ASSIGNED_DIR))?;
        let split: BenchSplit = read_json(&ctx.artifact(SPLIT))?;
        let training = split.training_identities(&multi);
        let mut by_count = BTreeMap::new();
        for s in &split.samples {
            *by_count.entry(s.identity_count()).or_insert(0) += 1;
        }
        let multi_stats = corpus_stats(&multi, Some(&bank));
        multi_stats.write_csv(&ctx.artifact(STATS_CSV))?;
        let file = StatsFile {
            single_id: corpus_stats::<f32>(&single, None),
            multi_id: multi_stats,
            bench: BenchSummary {
                samples: split.samples.len(),
                samples_by_identity_count: by_count,
                selected_identities: split.selected_identities.len(),
                bench_identities: split.bench_identities.len(),
                training_images: split.training_image_ids.len(),
                excluded_images: split.excluded_image_ids.len(),
                training_identities: training.len(),
                shared_identities: split.bench_identities.iter().filter(|i| training.contains(*i)).count(),
            },
        };
        write_json(&ctx.artifact(STATS), &file)
    })
}

pub fn pipeline(ctx: &mut Ctx) -> CliResult<()> {
    cluster(ctx)?;
    build_bank_stage(ctx)?;
    assign(ctx)?;
    pair(ctx)?;
    split(ctx)?;
    stats(ctx)
}

pub fn eval(ctx: &mut Ctx) -> CliResult<()> {
    let generated = ctx
        .cfg
        .corpora
        .generated
        .as_ref()
        .map(|g| ctx.cfg.corpus_path(g))
        .ok_or_else(|| CliError::Config("`corpora.generated` is not set (pass --generated DIR)".into()))?;
    let inputs = vec![
        Input::new("benchmark split", ctx.artifact(SPLIT), "split"),
        ctx.assigned_input(),
        ctx.single_input(),
        Input::new("generated corpus (corpora.generated)", generated.clone(), "synth generated"),
    ];
    let params = ctx.cfg.backends.clone();
    ctx.stage("eval", inputs, &[EVAL_JSON, EVAL_CSV], &params, None, |ctx| {
        let split: BenchSplit = read_json(&ctx.artifact(SPLIT))?;
        let gt = Corpus::ingest_dir(&ctx.artifact(ASSIGNED_DIR))?;
        let refs = Corpus::ingest_dir(&ctx.single_path())?;
        let gen = Corpus::ingest_dir(&generated)?;
        let inputs = EvalInputs { samples: &split.samples, ground_truth: &gt, references: &refs, generated: &gen };
        let report = evaluate(&inputs, &ctx.cfg.eval_config())?;
        report.write_json(&ctx.artifact(EVAL_JSON))?;
        report.write_csv(&ctx.artifact(EVAL_CSV))?;
        print!("{}", report.summary());
        Ok(())
    })
}

#[derive(Serialize)]
struct LossCheckRow {
    loss: String,
    instances: usize,
    max_relative_error: f64,
    pass: bool,
}

#[derive(Serialize)]
struct LossCheckFile {
    epsilon: f64,
    tolerance: f64,
    pass: bool,
    results: Vec<LossCheckRow>,
}

fn gauss(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Random instances of each loss, `n` apiece.
pub fn random_grad_inputs(n: usize, seed: u64) -> Vec<GradCheckInput> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(3 * n);
    for _ in 0..n {
        let d = rng.random_range(2..64);
        let reduction = if rng.random_bool(0.5) { Reduction::Sum } else { Reduction::Mean };
        out.push(GradCheckInput::Flow {
            x0: gauss(&mut rng, d),
            x1: gauss(&mut rng, d),
            t: rng.random_range(0.0..1.0),
            prediction: gauss(&mut rng, d),
            reduction,
        });
        out.push(GradCheckInput::Id { g: gauss(&mut rng, d), t: gauss(&mut rng, d) });
        let m = rng.random_range(1..32);
        out.push(GradCheckInput::Contrastive {
            g: gauss(&mut rng, d),
            r: gauss(&mut rng, d),
            negatives: (0..m).map(|_| gauss(&mut rng, d)).collect(),
            tau: rng.random_range(0.05..1.0),
            denominator: if rng.random_bool(0.5) { Denominator::WithPositive } else { Denominator::NegativesOnly },
        });
    }
    out
}

pub fn losses_check(ctx: &mut Ctx, input: Option<&Path>) -> CliResult<()> {
    let seed = ctx.cfg.stage_seed("losses-check");
    let inputs: Vec<Input> = input.map(|p| Input::new("gradient-check input", p, "user")).into_iter().collect();
    let params = ctx.cfg.loss.clone();
    let mut failed = false;
    ctx.stage("losses-check", inputs, &[LOSSES_CHECK], &params, Some(seed), |ctx| {
        let cases = match input {
            Some(p) => read_json::<Vec<GradCheckInput>>(p)?,
            None => random_grad_inputs(params.check_instances, seed),
        };
        let mut rows: BTreeMap<&str, (usize, f64)> = BTreeMap::new();
        for c in &cases {
            let e = grad_check(c, params.check_epsilon)?;
            let row = rows.entry(c.name()).or_default();
            row.0 += 1;
            row.1 = row.1.max(e);
        }
        let results: Vec<LossCheckRow> = rows
            .into_iter()
            .map(|(loss, (instances, max))| LossCheckRow {
                loss: loss.into(),
                instances,
                max_relative_error: max,
                pass: max < params.check_tolerance,
            })
            .collect();
        for r in &results {
            println!("{:<18} {:>4} instances  max rel err {:.3e}  {}", r.loss, r.instances, r.max_relative_error, if r.pass { "PASS" } else { "FAIL" });
        }
        failed = results.iter().any(|r| !r.pass);
        let file = LossCheckFile { epsilon: params.check_epsilon, tolerance: params.check_tolerance, pass: !failed, results };
        write_json(&ctx.artifact(LOSSES_CHECK), &file)
    })?;
    if failed {
        // a failed check must rerun next time
        let _ = std::fs::remove_file(ctx.out.join(crate::stage::STAMP_DIR).join("losses-check.json"));
        return Err(CliError::Internal(format!("gradient check exceeded tolerance {}; see {}", params.check_tolerance, ctx.artifact(LOSSES_CHECK).display())));
    }
    Ok(())
}

fn stage_err(stage: &'static str) -> impl Fn(multiid::Error) -> CliError {
    move |source| CliError::Stage { stage, source }
}

pub fn synth_world(ctx: &mut Ctx, out: &Path) -> CliResult<()> {
    let cfg = ctx.cfg.synth_config();
    let err = stage_err("synth");
    let world = generate(&cfg).map_err(&err)?;
    world.single_id.export_dir(&out.join("single_id")).map_err(&err)?;
    world.multi_id.export_dir(&out.join("multi_id")).map_err(&err)?;
    write_json(&out.join("truth.json"), &serde_json::json!({ "faces": world.truth, "appearances": world.appearances })).map_err(&err)?;
    eprintln!("[synth] wrote {}", out.display());
    Ok(())
}

pub fn synth_generated(ctx: &mut Ctx, out: &Path, mode: Mode, similarity: f64) -> CliResult<()> {
    for i in [Input::new("benchmark split", ctx.artifact(SPLIT), "split"), ctx.assigned_input(), ctx.single_input()] {
        if !i.path.exists() {
            return Err(CliError::MissingInput { what: i.what.into(), path: i.path, producer: i.producer });
        }
    }
    let err = stage_err("synth");
    let mode = match mode {
        Mode::GroundTruth => GeneratedMode::GroundTruth,
        Mode::CopyReferences => GeneratedMode::CopyReferences,
        Mode::Perturbed => GeneratedMode::Perturbed { similarity },
    };
    let split: BenchSplit = read_json(&ctx.artifact(SPLIT)).map_err(&err)?;
    let gt = Corpus::ingest_dir(&ctx.artifact(ASSIGNED_DIR)).map_err(&err)?;
    let refs = Corpus::ingest_dir(&ctx.single_path()).map_err(&err)?;
    let gen = generated_corpus(&gt, &refs, &split.samples, mode, ctx.cfg.stage_seed("generated")).map_err(&err)?;
    gen.export_dir(out).map_err(&err)?;
    eprintln!("[synth] wrote {} generated samples to {}", split.samples.len(), out.display());
    Ok(())
}
