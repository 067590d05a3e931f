use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use knfp_cli::{calibrate, run, sweep, ConfigError, Overrides, EXIT_CONFIG, EXIT_RUNTIME};
use serde_json::Value;

#[derive(Parser)]
#[command(name = "knfp", version, about = "Kinetic and fractional Fokker-Planck experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Worker threads for the numerical kernels.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Evaluate the config's acceptance suites; failures give exit status 1.
        #[arg(long)]
        accept: bool,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run once per parameter value and aggregate a summary scalar.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Dotted path into the config, e.g. `initial.mass`.
        #[arg(long)]
        param: String,
        /// Comma-separated JSON values.
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        values: Vec<String>,
        /// Dotted path into the run summary, e.g. `mild_residual`.
        #[arg(long)]
        scalar: String,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Bisect the Picard convergence threshold along scalings of the datum.
    Calibrate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0.1)]
        lo: f64,
        #[arg(long, default_value_t = 10.0)]
        hi: f64,
        #[arg(long, default_value_t = 8)]
        bisections: usize,
    },
}

fn parse_value(s: &str) -> Value {
    serde_json::from_str(s).unwrap_or_else(|_| Value::String(s.to_owned()))
}

fn execute(cli: Cli) -> Result<i32> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring the thread pool")?;
    }
    match cli.command {
        Command::Run { config, out, accept, seed } => {
            let summary = run(&config, &Overrides { out, accept, seed })?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
            Ok(summary.exit_code())
        }
        Command::Sweep { config, param, values, scalar, out, seed } => {
            let values: Vec<Value> = values.iter().map(|v| parse_value(v)).collect();
            let csv = sweep(&config, &param, &values, &scalar, &Overrides { out, accept: false, seed })?;
            print!("{csv}");
            Ok(0)
        }
        Command::Calibrate { config, lo, hi, bisections } => {
            let cal = calibrate(&config, lo, hi, bisections)?;
            println!("{}", serde_json::to_string_pretty(&cal)?);
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = if e.downcast_ref::<ConfigError>().is_some() { EXIT_CONFIG } else { EXIT_RUNTIME };
            ExitCode::from(code as u8)
        }
    }
}
