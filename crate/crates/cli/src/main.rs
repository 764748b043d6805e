//! `cqed`: batch front end for spectra, Rabi scans, thermometry fits and
//! crossover studies.

mod config;
mod error;
mod run;
mod table;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::RunConfig;
use error::CliError;

#[derive(Parser)]
#[command(
    name = "cqed",
    version,
    about = "Thermal transmon–cavity simulations and thermometry fits"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Transmission spectra over a thermal sweep (`spectrum` or `sweep` experiments).
    Spectrum(RunArgs),
    /// Vacuum Rabi traces.
    Rabi(RunArgs),
    /// Fit n_th to a measured spectrum or Rabi trace.
    Fit(RunArgs),
    /// Lorentzian crossover table over n_th.
    Crossover(RunArgs),
    /// Check a config and print it with all defaults filled in.
    Validate { config: PathBuf },
    /// Fit the calibration line through a table of appended fits.
    Calibrate {
        /// JSON-lines table written by `fit` runs.
        table: PathBuf,
        /// Write the line here instead of stdout.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

#[derive(clap::Args)]
struct RunArgs {
    config: PathBuf,
    /// Overrides `output.dir`.
    #[arg(short, long)]
    output_dir: Option<PathBuf>,
}

fn load(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    RunConfig::parse(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn init_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("CQED_THREADS") else {
        return Ok(());
    };
    let n: usize = v.trim().parse().ok().filter(|n| *n > 0).ok_or_else(|| {
        CliError::Config(format!(
            "CQED_THREADS must be a positive integer, got `{v}`"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))
}

fn execute(cli: Cli) -> Result<Vec<String>, CliError> {
    init_threads()?;
    let (name, args) = match &cli.command {
        Command::Validate { config } => {
            let r = run::resolve(load(config)?)?;
            let text = toml::to_string(&r.config).map_err(|e| CliError::Config(e.to_string()))?;
            return Ok(vec![text]);
        }
        Command::Calibrate { table, output } => {
            let line = run::run_calibrate(table)?;
            return match output {
                Some(p) => {
                    table::write_json(p, &line)?;
                    Ok(vec![p.display().to_string()])
                }
                None => {
                    Ok(vec![serde_json::to_string_pretty(&line)
                        .map_err(|e| CliError::Io(e.to_string()))?])
                }
            };
        }
        Command::Spectrum(a) => ("spectrum", a),
        Command::Rabi(a) => ("rabi", a),
        Command::Fit(a) => ("fit", a),
        Command::Crossover(a) => ("crossover", a),
    };
    let mut config = load(&args.config)?;
    if let Some(dir) = &args.output_dir {
        config.output.dir = dir.clone();
    }
    let config_dir = args.config.parent().unwrap_or(Path::new(".")).to_path_buf();
    if config.output.dir.is_relative() && args.output_dir.is_none() {
        config.output.dir = config_dir.join(&config.output.dir);
    }
    let r = run::resolve(config)?;
    let outcome = match name {
        "spectrum" => run::run_spectrum(&r, name)?,
        "rabi" => run::run_rabi(&r, name)?,
        "fit" => run::run_fit(&r, name, &config_dir)?,
        _ => run::run_crossover(&r, name)?,
    };
    Ok(outcome
        .files
        .iter()
        .map(|f| f.display().to_string())
        .collect())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(lines) => {
            for l in lines {
                println!("{l}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
