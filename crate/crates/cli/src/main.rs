use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fedsparse_cli::{cmd_compare, cmd_generate, cmd_run, cmd_theory, ExperimentConfig};

#[derive(Parser)]
#[command(
    name = "fedsparse",
    about = "Federated sparse learning experiments: data generation, runs, sweeps, theory reports"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write per-client LibSVM files, the ground-truth sidecar, and a manifest.
    Generate(Common),
    /// Run one algorithm and emit trace.csv plus report.txt.
    Run(Common),
    /// Run the sweep cross-product and emit compare.csv plus summary.txt.
    Compare(Common),
    /// Print contraction factors, round bounds, and dissimilarity estimates.
    Theory(Common),
}

fn load(common: &Common) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::from_file(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.override_seed(seed);
    }
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    match dispatch() {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch() -> anyhow::Result<ExitCode> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Generate(common) => {
            let cfg = load(common)?;
            let files = cmd_generate(&cfg)?;
            println!("wrote {} files to {}", files.len(), cfg.output_dir.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Run(common) => {
            let cfg = load(common)?;
            let artifacts = cmd_run(&cfg)?;
            let last = artifacts.outcome.traces.last().expect("round 0 recorded");
            println!(
                "completed {} rounds, final objective {}",
                last.round, last.objective
            );
            println!("trace: {}", artifacts.trace_path.display());
            println!("report: {}", artifacts.report_path.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Compare(common) => {
            let cfg = load(common)?;
            let artifacts = cmd_compare(&cfg)?;
            println!(
                "{} runs, {} failed",
                artifacts.runs.len(),
                artifacts.failures
            );
            println!("combined: {}", artifacts.csv_path.display());
            println!("summary: {}", artifacts.summary_path.display());
            if artifacts.failures > 0 {
                Ok(ExitCode::FAILURE)
            } else {
                Ok(ExitCode::SUCCESS)
            }
        }
        Command::Theory(common) => {
            let cfg = load(common)?;
            let artifacts = cmd_theory(&cfg)?;
            print!("{}", artifacts.report);
            println!("report: {}", artifacts.report_path.display());
            Ok(ExitCode::SUCCESS)
        }
    }
}
