use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use markov_circle_cli::config::{self, Overrides};
use markov_circle_cli::runner::{self, Verb, EXIT_CONFIG, EXIT_RUNTIME};

/// Environment variable that overrides the config seed (but not `--seed`).
const SEED_ENV: &str = "MCIRCLE_SEED";

#[derive(Parser)]
#[command(name = "mcircle", version, about = "Random circle maps driven by a finite Markov chain")]
struct Cli {
    #[command(subcommand)]
    verb: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(clap::Args)]
struct Common {
    /// Experiment document (TOML).
    #[arg(long, global = true, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Run a named preset with default settings instead of a document.
    #[arg(long, global = true)]
    preset: Option<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Number of circle bins.
    #[arg(long, global = true)]
    grid: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Stationary vector, dual kernel and the stationary measure on the grid.
    Solve,
    /// Map the stationary measure to its skew-invariant counterpart and back.
    Correspond,
    /// Run the full battery of identities and bounds as a pass/fail table.
    VerifyLemmas,
    /// Local contraction experiment with the ladder estimator.
    Sync,
    /// Scan the circle for a uniform contraction bound.
    Scan,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let verb = match cli.verb {
        Command::Solve => Verb::Solve,
        Command::Correspond => Verb::Correspond,
        Command::VerifyLemmas => Verb::VerifyLemmas,
        Command::Sync => Verb::Sync,
        Command::Scan => Verb::Scan,
    };
    let c = cli.common;

    let env_seed = match std::env::var(SEED_ENV) {
        Ok(raw) => match raw.trim().parse::<u64>() {
            Ok(s) => Some(s),
            Err(_) => {
                eprintln!("error: {SEED_ENV}={raw:?} is not an unsigned integer");
                return ExitCode::from(EXIT_CONFIG as u8);
            }
        },
        Err(_) => None,
    };

    if let Some(jobs) = c.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            eprintln!("error: cannot start {jobs} workers: {e}");
            return ExitCode::from(EXIT_RUNTIME as u8);
        }
    }

    let overrides = Overrides {
        seed: c.seed,
        env_seed,
        out: c.out,
        grid: c.grid,
    };
    let exp = match config::load(c.config.as_deref(), c.preset.as_deref(), &overrides) {
        Ok(exp) => exp,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG as u8);
        }
    };
    if exp.seed_source == "environment" {
        eprintln!("*** seed {} taken from {SEED_ENV} (overrides the config) ***", exp.seed);
    } else if env_seed.is_some() {
        eprintln!("*** {SEED_ENV} ignored: --seed given ***");
    }
    eprintln!("config hash {} seed {}", exp.hash, exp.seed);

    match runner::run(verb, &exp) {
        Ok(outcome) => {
            for line in &outcome.lines {
                println!("{line}");
            }
            for f in &outcome.files {
                eprintln!("wrote {}", f.display());
            }
            ExitCode::from(outcome.exit_code as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_RUNTIME as u8)
        }
    }
}
