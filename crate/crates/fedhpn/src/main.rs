use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use fedhpn::report::write_report;
use fedhpn::{ExperimentConfig, HarnessError, Method, Options, Pipeline, Result};

#[derive(Parser)]
#[command(
    name = "fedhpn",
    version,
    about = "Per-client federated hyperparameter search experiments"
)]
struct Cli {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config's master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run directory (report: output directory).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Tuning method for `tune` and `evaluate`.
    #[arg(long, global = true, value_enum, default_value_t = MethodArg::Hpn)]
    method: MethodArg,
    /// Plain REINFORCE: no reward baseline, no advantage scaling, no entropy bonus.
    #[arg(long, global = true)]
    paper_faithful: bool,
    /// Worker threads for client training.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Redo a completed stage, or reuse a run directory with another config.
    #[arg(long, global = true)]
    force: bool,
    /// Record per-trial wall time in trial logs.
    #[arg(long, global = true)]
    wall_time: bool,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Hpn,
    Rs,
    Prs,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Hpn => Method::Hpn,
            MethodArg::Rs => Method::Rs,
            MethodArg::Prs => Method::Prs,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate or load the federation; write client splits and encodings.
    Partition,
    /// Run the pretraining course and store its checkpoints.
    Pretrain,
    /// Tune with `--method` until the budget is spent.
    Tune,
    /// Evaluate the tuned configuration of `--method`.
    Evaluate,
    /// Compare finished runs of one experiment.
    Report {
        /// Run directories.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
    },
}

fn pipeline(cli: &Cli) -> Result<Pipeline> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| HarnessError::Usage("--config is required".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg = cfg.with_seed(seed);
    }
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.out.clone())
        .ok_or_else(|| HarnessError::Usage("no run directory: pass --out or set `out` in the config".into()))?;
    let opts = Options {
        paper_faithful: cli.paper_faithful,
        force: cli.force,
        threads: cli.threads,
        wall_time: cli.wall_time,
    };
    Pipeline::open(cfg, &out, opts)
}

fn run(cli: Cli) -> Result<Vec<PathBuf>> {
    match &cli.cmd {
        Command::Partition => pipeline(&cli)?.partition(),
        Command::Pretrain => pipeline(&cli)?.pretrain(),
        Command::Tune => pipeline(&cli)?.tune(cli.method.into()),
        Command::Evaluate => pipeline(&cli)?.evaluate(cli.method.into()),
        Command::Report { runs } => {
            let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("report"));
            write_report(runs, &out)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(written) => {
            for p in written {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
