use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gridnse_cli::{dispatch, read_config, Command};

#[derive(Debug, clap::Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// error, warn, info, debug or trace.
    #[arg(long, default_value = "info")]
    log_level: log::LevelFilter,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Generate a dataset directory from the recipe.
    Generate(Common),
    /// Train a model and write the best checkpoint.
    Train(Common),
    /// Evaluate a checkpoint on clean data.
    Eval(Common),
    /// GNN and GN accuracy across measurement exclusion fractions.
    SweepExclusion(Common),
    /// Error against hop distance from excluded measurements.
    EvalLocality(Common),
    /// GNN and GN accuracy under corrupted measurements.
    EvalAttack(Common),
    /// Per-bus inference from k-hop subgraphs.
    InferLocal(Common),
    /// Inference time on growing chain systems.
    ProbeScaling(Common),
}

#[derive(Debug, Parser)]
#[command(name = "gridnse", version, about = "Power system state estimation with a factor-graph GNN")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (cmd, common) = match cli.cmd {
        Cmd::Generate(c) => (Command::Generate, c),
        Cmd::Train(c) => (Command::Train, c),
        Cmd::Eval(c) => (Command::Eval, c),
        Cmd::SweepExclusion(c) => (Command::SweepExclusion, c),
        Cmd::EvalLocality(c) => (Command::EvalLocality, c),
        Cmd::EvalAttack(c) => (Command::EvalAttack, c),
        Cmd::InferLocal(c) => (Command::InferLocal, c),
        Cmd::ProbeScaling(c) => (Command::ProbeScaling, c),
    };
    env_logger::Builder::new()
        .filter_level(common.log_level)
        .format_timestamp_millis()
        .target(env_logger::Target::Stderr)
        .init();
    let run = || -> anyhow::Result<()> {
        let cfg = read_config(&common.config)?;
        if cfg.run.threads > 0 {
            rayon::ThreadPoolBuilder::new().num_threads(cfg.run.threads).build_global()?;
        }
        log::info!("{} with {}", cmd.name(), common.config.display());
        dispatch(cmd, &cfg)?;
        Ok(())
    };
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e:#}");
            ExitCode::FAILURE
        }
    }
}
