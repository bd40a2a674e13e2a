//! Command-line pipeline: ingest, cluster, build-bank, assign, pair, split,
//! stats, eval and losses-check over on-disk embedding corpora.

pub mod args;
pub mod commands;
pub mod config;
pub mod error;
pub mod stage;

use args::{Cli, Command, SynthCommand};
use config::RunConfig;
use error::CliResult;
use stage::Ctx;

/// Loads the configuration and runs one command. The run log is written
/// whether or not the command succeeds.
pub fn run(cli: &Cli) -> CliResult<()> {
    let cfg = RunConfig::load(cli.config.as_deref(), &cli.overrides()?)?;
    if cfg.workers > 0 {
        // only the first call in a process can size the global pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cfg.workers).build_global();
    }
    let mut ctx = Ctx::new(cfg, cli.force);
    let outcome = dispatch(&mut ctx, &cli.command);
    if !matches!(cli.command, Command::Config | Command::Synth(_)) {
        ctx.write_run_log(&outcome);
    }
    outcome
}

fn dispatch(ctx: &mut Ctx, command: &Command) -> CliResult<()> {
    match command {
        Command::Ingest => commands::ingest(ctx),
        Command::Cluster(_) => commands::cluster(ctx),
        Command::BuildBank => commands::build_bank_stage(ctx),
        Command::Assign(_) => commands::assign(ctx),
        Command::Pair => commands::pair(ctx),
        Command::Split(_) => commands::split(ctx),
        Command::Stats => commands::stats(ctx),
        Command::Eval(_) => commands::eval(ctx),
        Command::LossesCheck(a) => commands::losses_check(ctx, a.input.as_deref()),
        Command::Pipeline => commands::pipeline(ctx),
        Command::Synth(s) => match &s.what {
            SynthCommand::World { out } => commands::synth_world(ctx, out),
            SynthCommand::Generated { out, mode, similarity } => commands::synth_generated(ctx, out, *mode, *similarity),
        },
        Command::Config => {
            print!("{}", ctx.cfg.to_toml());
            Ok(())
        }
    }
}
