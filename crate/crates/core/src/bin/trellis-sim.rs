use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use trellis_detect::error::{Error, Result};
use trellis_detect::sim::{report_model, run_experiment, ExperimentConfig, SavedModel};

#[derive(Parser)]
#[command(name = "trellis-sim", version, about = "Monte Carlo BER sweeps for trellis detectors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the sweep described by a JSON config.
    Run {
        config: PathBuf,
        /// Results CSV; defaults to the config's `output`, then results.csv.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Replace the config's base seed.
        #[arg(long)]
        seed_override: Option<u64>,
    },
    /// Print means, variances, transitions and stationary law of a saved model.
    ReportModel {
        model: PathBuf,
        #[arg(long)]
        json: bool,
    },
}

fn read(path: &PathBuf) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.clone(), source })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config, out, jobs, seed_override } => {
            let mut cfg = ExperimentConfig::from_json(&read(&config)?)?;
            if let Some(seed) = seed_override {
                cfg.seed = seed;
            }
            let out = out
                .or_else(|| cfg.output.as_ref().map(PathBuf::from))
                .unwrap_or_else(|| PathBuf::from("results.csv"));
            let (sweep, meta) = run_experiment(&cfg, jobs, &out)?;
            for r in &sweep.rows {
                match &r.error {
                    Some(e) => println!("{:<16} {:>6} dB  error: {e}", r.detector, r.db),
                    None => println!("{:<16} {:>6} dB  ser {:.3e}  ber {:.3e}", r.detector, r.db, r.ser(), r.ber()),
                }
            }
            eprintln!("wrote {} ({:.1} s)", out.display(), meta.wall_secs);
            Ok(())
        }
        Command::ReportModel { model, json } => {
            let saved = SavedModel::from_json(&read(&model)?)?;
            let report = report_model(saved.trellis())?;
            if json {
                let text = serde_json::to_string_pretty(&report)
                    .map_err(|source| Error::Json { context: "report".into(), source })?;
                println!("{text}");
            } else {
                print!("{}", report.to_text());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", json!({ "error": e.kind(), "message": e.to_string() }));
            ExitCode::FAILURE
        }
    }
}
