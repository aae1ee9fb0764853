use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use hypergrad::expcli::{parse_config, run_experiment, ExperimentKind};
use hypergrad::Error;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Command {
    Accuracy,
    HessianViz,
    OverfitVal,
    Distill,
    SplitStudy,
    Run,
}

impl Command {
    fn kind(self) -> ExperimentKind {
        match self {
            Command::Accuracy => ExperimentKind::Accuracy,
            Command::HessianViz => ExperimentKind::HessianViz,
            Command::OverfitVal => ExperimentKind::OverfitVal,
            Command::Distill => ExperimentKind::Distill,
            Command::SplitStudy => ExperimentKind::SplitStudy,
            Command::Run => ExperimentKind::Run,
        }
    }
}

/// Gradient-based hyperparameter optimization experiments.
#[derive(Debug, Parser)]
#[command(version)]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// TOML experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Output directory, overriding `out_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seeds, overriding `seeds`.
    #[arg(long, num_args = 1..)]
    seed: Vec<u64>,
}

fn run(cli: Cli) -> Result<usize, Error> {
    let mut cfg = parse_config(&cli.config)?;
    if cfg.experiment != cli.command.kind() {
        return Err(Error::Config(format!(
            "{} describes a `{}` experiment, not `{}`",
            cli.config.display(),
            cfg.experiment.name(),
            cli.command.kind().name()
        )));
    }
    if let Some(out) = cli.out {
        cfg.out_dir = out;
    }
    if !cli.seed.is_empty() {
        cfg.seeds = cli.seed;
    }
    let out = run_experiment(&cfg)?;
    for f in &out.files {
        println!("{}", f.display());
    }
    Ok(out.failed_runs)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(0) => ExitCode::SUCCESS,
        Ok(n) => {
            eprintln!("error: {n} run(s) stopped on a numeric failure");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numeric() { 2 } else { 1 })
        }
    }
}
