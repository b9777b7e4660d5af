mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{ConfigError, Overrides, RunConfig};

/// Secure L1 cache simulator: attack harnesses, trace replay and self-tests.
///
/// Settings come from `--config` (a `key = value` file), then `STARSIM_*`
/// environment variables, then flags; later sources win.
#[derive(Debug, Parser)]
#[command(name = "starsim", version)]
struct Cli {
    #[command(flatten)]
    common: CommonArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// L1 model: sa-lru, star-farr or star-news.
    #[arg(long, global = true)]
    model: Option<String>,
    /// Extra NEWS index bits (star-news only, 0..=16; default 4).
    #[arg(long, global = true)]
    k: Option<u32>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Attack trials (AES total, Spectre per secret).
    #[arg(long, global = true)]
    trials: Option<usize>,
    /// `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    l1_cycles: Option<u32>,
    #[arg(long, global = true)]
    l2_cycles: Option<u32>,
    #[arg(long, global = true)]
    memory_cycles: Option<u32>,
    /// Standard deviation of Gaussian timer noise, in cycles.
    #[arg(long, global = true)]
    noise: Option<f64>,
}

impl CommonArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            model: self.model.clone(),
            k: self.k,
            seed: self.seed,
            trials: self.trials,
            l1_cycles: self.l1_cycles,
            l2_cycles: self.l2_cycles,
            memory_cycles: self.memory_cycles,
            noise: self.noise,
            out: self.out.clone(),
        }
    }

    fn resolve(&self) -> Result<RunConfig, ConfigError> {
        let file = match &self.config {
            Some(p) => Overrides::from_file(p)?,
            None => Overrides::default(),
        };
        RunConfig::resolve(file.merge(Overrides::from_env()?).merge(self.overrides()))
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one attack harness and write matrix.csv and summary.json.
    Attack(commands::AttackArgs),
    /// Replay a trace file or a synthetic workload and write stats.csv.
    Replay(commands::ReplayArgs),
    /// Run an attack across models and noise levels and write sweep.csv.
    Sweep(commands::SweepArgs),
    /// Run the built-in invariant suites.
    Selftest(commands::SelftestArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match cli.common.resolve() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let result = match &cli.command {
        Command::Attack(a) => commands::attack(&cfg, a),
        Command::Replay(a) => commands::replay(&cfg, a),
        Command::Sweep(a) => commands::sweep(&cfg, a),
        Command::Selftest(a) => commands::selftest(&cfg, a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<ConfigError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
