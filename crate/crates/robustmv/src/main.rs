use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use robustmv::commands::{self, Outcome};
use robustmv::config::Config;
use robustmv::exec::Rayon;
use robustmv::manifest::RunManifest;
use robustmv::{io, CliError, Result};

/// Robust exploratory mean-variance portfolio toolkit.
///
/// Configuration is layered: built-in defaults, the `--config` TOML file,
/// `ROBUSTMV_<SECTION>__<KEY>` environment variables, then `--set
/// section.key=value` flags and finally `--seed`.
#[derive(Debug, Parser)]
#[command(name = "robustmv", version)]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true, env = "ROBUSTMV_CONFIG")]
    config: Option<PathBuf>,
    /// Master seed; overrides `seed` from every other source.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads, 0 for the available parallelism.
    #[arg(long, global = true, env = "ROBUSTMV_THREADS", default_value_t = 0)]
    threads: usize,
    /// Directory receiving reports, data files and the run manifest.
    #[arg(long, global = true, env = "ROBUSTMV_OUT_DIR", default_value = "out")]
    out_dir: PathBuf,
    /// Override any config key, e.g. `--set simulation.paths=4096`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Lagrange multiplier, value function, policy at t=0 and objective values.
    ClosedForm,
    /// Variance-minimizing scaling k* of the true premium.
    Kstar,
    /// Terminal-variance grid over one or two premium axes.
    Surface {
        /// `min:max:steps`, once per axis (at most two).
        #[arg(long = "axis")]
        axes: Vec<String>,
    },
    /// Paired Monte Carlo of the misspecified and robust policies.
    Simulate,
    /// Train the premium on price data.
    Calibrate,
    /// Robust backtest over the configured scalings.
    Backtest {
        /// `calibration.json` from a previous run; calibrates afresh if absent.
        #[arg(long)]
        calibration: Option<PathBuf>,
    },
    /// Run the property self-test.
    Verify,
    /// Print the resolved configuration.
    Config,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::ClosedForm => "closed-form",
            Command::Kstar => "kstar",
            Command::Surface { .. } => "surface",
            Command::Simulate => "simulate",
            Command::Calibrate => "calibrate",
            Command::Backtest { .. } => "backtest",
            Command::Verify => "verify",
            Command::Config => "config",
        }
    }
}

fn run(cli: Cli) -> Result<Option<String>> {
    let start = Instant::now();
    let mut sets = cli.sets.clone();
    if let Some(seed) = cli.seed {
        sets.push(format!("seed={seed}"));
    }
    let cfg = Config::resolve(cli.config.as_deref(), std::env::vars(), &sets)?;
    let exec = Rayon::new(cli.threads)?;
    let outcome: Outcome = match &cli.command {
        Command::ClosedForm => commands::closed_form(&cfg)?,
        Command::Kstar => commands::kstar(&cfg)?,
        Command::Surface { axes } => commands::surface(&cfg, axes)?,
        Command::Simulate => commands::simulate(&cfg, &exec)?,
        Command::Calibrate => commands::calibrate_cmd(&cfg, &exec)?,
        Command::Backtest { calibration } => {
            commands::backtest_cmd(&cfg, calibration.as_deref(), &exec)?
        }
        Command::Verify => commands::verify(&cfg, &exec)?,
        Command::Config => {
            println!(
                "{}",
                toml::to_string(&cfg).map_err(|e| CliError::config("", e))?
            );
            return Ok(None);
        }
    };
    let mut outputs = Vec::new();
    for (name, contents) in &outcome.files {
        io::write_file(&cli.out_dir.join(name), contents)?;
        outputs.push(name.clone());
    }
    let name = cli.command.name();
    let manifest = RunManifest::new(
        name,
        &cfg,
        exec.threads(),
        start.elapsed().as_secs_f64(),
        outputs,
    )?;
    io::write_file(
        &cli.out_dir.join(RunManifest::file_name(name)),
        &io::to_json(&manifest)?,
    )?;
    print!("{}", io::to_json(&outcome.summary)?);
    Ok(outcome.property_failure)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(None) => ExitCode::SUCCESS,
        Ok(Some(check)) => {
            eprintln!("property check failed: {check}");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
