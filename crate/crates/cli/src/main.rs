use std::path::PathBuf;
use std::process::ExitCode;

use chivi_cli::RunOptions;
use clap::{Args, Parser, Subcommand};

/// Chi-divergence variational inference experiments.
#[derive(Parser)]
#[command(name = "chivi", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment a config describes.
    Run(RunArgs),
    /// Check a config and its input files without running anything.
    Validate(RunArgs),
    /// Summarize a finished run directory.
    Report {
        /// The run's output directory.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Use the larger paper-scale settings.
    #[arg(long)]
    paper_scale: bool,
}

impl From<RunArgs> for RunOptions {
    fn from(a: RunArgs) -> Self {
        Self {
            config: a.config,
            out: a.out,
            seed: a.seed,
            paper_scale: a.paper_scale,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let result = match Cli::parse().command {
        Command::Run(args) => chivi_cli::run(&args.into()).map(|s| {
            println!("{}", s.out_dir.display());
            if s.passed {
                ExitCode::SUCCESS
            } else {
                eprintln!("checks failed; see {}", s.out_dir.join("report.json").display());
                ExitCode::FAILURE
            }
        }),
        Command::Validate(args) => chivi_cli::validate(&args.into()).map(|text| {
            println!("{text}");
            ExitCode::SUCCESS
        }),
        Command::Report { out } => chivi_cli::report(&out).map(|text| {
            println!("{text}");
            ExitCode::SUCCESS
        }),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e:#}");
        ExitCode::from(2)
    })
}
