use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::{error, info};
use mas::experiment::{run_experiment, sweep, write_sweep, ExperimentConfig, SweepParam};
use mas::Error;

const DEFAULT_OUT: &str = "mas_out";

#[derive(Parser)]
#[command(name = "mas", version, about = "Spectral posterior-mean sampling for linear inverse problems")]
struct Cli {
    /// Only print errors.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every method and seed of an experiment config.
    Solve {
        /// Experiment config (TOML).
        config: PathBuf,
        /// Output directory (overrides the config).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run this single seed instead of the configured list.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Sweep one parameter of the MAS methods over a grid.
    Sweep {
        /// Experiment config (TOML).
        config: PathBuf,
        /// Parameter to vary: eta1, eta2 or k.
        #[arg(long)]
        param: SweepParam,
        /// Comma-separated values, e.g. `-0.4,-0.2,0,0.1`.
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true, required = true)]
        grid: Vec<f64>,
        /// Output directory (overrides the config).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// 1 for configuration problems, 2 for numerical failures during solving.
fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Unstable { .. } | Error::NonFinite { .. } | Error::Singular(_) => 2,
        _ => 1,
    }
}

fn out_dir(cli_out: Option<PathBuf>, cfg: &ExperimentConfig) -> PathBuf {
    cli_out
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

fn load(path: &Path) -> Result<ExperimentConfig, Error> {
    ExperimentConfig::load(path)
}

fn execute(command: Command) -> Result<(), Error> {
    match command {
        Command::Solve { config, out, seed } => {
            let mut cfg = load(&config)?;
            if let Some(s) = seed {
                cfg.seeds = vec![s];
            }
            let dir = out_dir(out, &cfg);
            let outcome = run_experiment(&cfg, &dir)?;
            for m in &outcome.metrics.methods {
                let psnr = m
                    .psnr_db
                    .as_ref()
                    .map_or("n/a".to_string(), |s| format!("{:.2} ± {:.2} dB", s.mean, s.std));
                let ssim = m
                    .ssim
                    .as_ref()
                    .map_or("n/a".to_string(), |s| format!("{:.4} ± {:.4}", s.mean, s.std));
                info!("{:<16} PSNR {psnr}  SSIM {ssim}", m.label);
            }
            info!("wrote {} files to {}", outcome.files.len(), dir.display());
        }
        Command::Sweep {
            config,
            param,
            grid,
            out,
        } => {
            let cfg = load(&config)?;
            let dir = out_dir(out, &cfg);
            let outcome = sweep(&cfg, param, &grid)?;
            write_sweep(&dir, param, &outcome)?;
            let failed = outcome.rows.iter().filter(|r| r.failure.is_some()).count();
            info!(
                "{} rows ({failed} failed) written to {}",
                outcome.rows.len(),
                dir.display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    // Usage errors share the configuration exit code; 2 is reserved for solver failures.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = if cli.quiet { "error" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
