use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use lga_cli::config::{Experiment, Preset, RunConfig};
use lga_cli::error::CliResult;
use lga_cli::run_experiment;

/// Run one experiment and write its CSVs, report and manifest to a directory.
#[derive(Debug, Parser)]
#[command(name = "lga", version)]
struct Args {
    experiment: Experiment,
    /// TOML file overlaid on the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long, value_enum, default_value_t = Preset::Desk)]
    preset: Preset,
}

fn run(args: &Args) -> CliResult<String> {
    let cfg = RunConfig::load(args.config.as_deref(), args.preset, args.seed, args.trials)?;
    run_experiment(args.experiment, &cfg, &args.out)?.into_result()
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&args) {
        Ok(msg) => {
            println!("{msg}");
            println!("wrote {}", args.out.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
