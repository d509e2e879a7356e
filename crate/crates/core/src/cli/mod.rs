//! Configuration-driven experiment runner.
//!
//! `absde run <config.toml>` simulates, solves, estimates norms and runs the
//! requested checks, then writes `manifest.json` and `results.csv` into the
//! output directory. Exit status: 0 when every check passes, 1 when a check
//! fails, 2 for configuration errors, 3 when the solver fails.

mod config;
mod run;
mod scenarios;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use config::{
    BasisConfig, BasisKindConfig, ComparisonConfig, ConfigError, DriverConfig, ExperimentConfig, GridConfig,
    MarksConfig, ModelConfig, MonteCarloConfig, Overrides, SolverSection, StabilityConfig, TerminalConfig,
    TerminalKind, UMapConfig,
};
pub use run::{
    execute, results_csv, write_artifacts, write_failure, Manifest, RunError, RunOutput, SolveSummary, FAILURE_FILE,
    MANIFEST_FILE, NODES_FILE, RESULTS_FILE,
};
pub use scenarios::{closed_form_y0, deferred_ode, find_scenario, ScenarioInfo, CHECKS, SCENARIOS};

/// Environment variable holding the worker thread count.
pub const THREADS_ENV: &str = "ABSDE_THREADS";

#[derive(Debug, Parser)]
#[command(name = "absde", version, about = "Regression Monte Carlo lab for anticipated BSDEs with jumps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config.
    Run {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        paths: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Checks to run instead of the configured list.
        #[arg(long = "check", num_args = 1..)]
        checks: Option<Vec<String>>,
    },
    /// List the built-in scenarios.
    ListScenarios,
}

/// The scenario table printed by `list-scenarios`.
pub fn scenario_listing() -> String {
    let mut s = format!("{:<16} {:<34} {}\n", "scenario", "driver", "exercises");
    for sc in SCENARIOS {
        s.push_str(&format!("{:<16} {:<34} {}\n", sc.name, sc.driver, sc.exercises));
    }
    s
}

fn configure_threads() -> Result<(), String> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| format!("{THREADS_ENV} must be a positive integer, got {v:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

/// Load, override and resolve a config file.
pub fn load_config(path: &std::path::Path, overrides: &Overrides) -> Result<ExperimentConfig, ConfigError> {
    let mut c = ExperimentConfig::load(path)?;
    c.apply(overrides);
    c.resolve()
}

fn run_command(path: PathBuf, overrides: Overrides) -> i32 {
    let config = match load_config(&path, &overrides) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config error: {e}");
            return 2;
        }
    };
    let dir = config.output_dir.clone();
    let out = match execute(&config) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("{e}");
            if e.exit_code() == 3 {
                if let Err(io) = write_failure(&e, &dir) {
                    eprintln!("could not write {}: {io}", FAILURE_FILE);
                }
            }
            return e.exit_code();
        }
    };
    if let Err(e) = write_artifacts(&out, &dir) {
        eprintln!("i/o error writing {}: {e}", dir.display());
        return 2;
    }
    print!("{}", results_csv(&out.rows));
    if out.passed() {
        0
    } else {
        1
    }
}

/// Entry point of the `absde` binary; returns the process exit code.
pub fn main_entry() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("{e}");
        return 2;
    }
    match cli.command {
        Command::ListScenarios => {
            print!("{}", scenario_listing());
            0
        }
        Command::Run {
            config,
            seed,
            paths,
            out,
            checks,
        } => run_command(config, Overrides { seed, paths, out, checks }),
    }
}
