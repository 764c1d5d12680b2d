//! `riskmf`: scenario-driven front end for the risk-sensitive mean-field
//! solvers.
//!
//! Exit codes: 0 success, 1 a validation check failed, 2 bad input,
//! 3 numerical failure. Errors are printed on standard error as one line
//! of JSON, `{"error": kind, "message": ...}`.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use riskmf::lq_value::Routes;

use crate::config::{apply_overrides, read_document, ScenarioConfig};
use crate::error::CliError;

#[derive(Parser)]
#[command(name = "riskmf", version, about = "Risk-sensitive mean-field control solvers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Scenario file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config entry, e.g. `--set risk.alpha=0.5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Output directory (overrides `output.directory`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Monte Carlo master seed (overrides `mc.seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Route {
    ClosedForm,
    Mc,
    Pde,
}

#[derive(Subcommand)]
enum Command {
    /// Backward Riccati solve; writes riccati.csv.
    Riccati,
    /// Particle simulation; writes trajectory.csv and cost.json.
    Simulate,
    /// Augmented Fokker–Planck solve; writes marginals and moment.json.
    Fpk,
    /// Value report by closed form, Monte Carlo and PDE.
    Value {
        #[arg(long, value_delimiter = ',', default_values_t = vec![Route::ClosedForm, Route::Mc, Route::Pde], value_enum)]
        routes: Vec<Route>,
    },
    /// Runs the validation checks; exit 1 if any applicable check fails.
    Validate,
    /// One value report per `[sweep]` point plus sweep.csv.
    Sweep {
        #[arg(long, value_delimiter = ',', default_values_t = vec![Route::ClosedForm, Route::Mc, Route::Pde], value_enum)]
        routes: Vec<Route>,
    },
}

fn routes(list: &[Route]) -> Routes {
    Routes {
        closed_form: list.contains(&Route::ClosedForm),
        mc: list.contains(&Route::Mc),
        pde: list.contains(&Route::Pde),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global()
            .map_err(|e| CliError::input(format!("cannot start {jobs} workers: {e}")))?;
    }
    let path = cli.config.ok_or_else(|| CliError::input("--config is required"))?;
    let mut doc = read_document(&path)?;
    let mut overrides = cli.overrides;
    if let Some(seed) = cli.seed {
        overrides.push(format!("mc.seed={seed}"));
    }
    apply_overrides(&mut doc, &overrides)?;
    if let Some(out) = &cli.out {
        let dir = toml::Value::String(out.to_string_lossy().into_owned());
        config::set_path(&mut doc, "output.directory", dir)?;
    }
    let cfg = ScenarioConfig::from_document(doc.clone())?;
    match cli.command {
        Command::Riccati => commands::riccati(&cfg),
        Command::Simulate => commands::simulate(&cfg),
        Command::Fpk => commands::fpk(&cfg),
        Command::Value { routes: r } => commands::value(&cfg, routes(&r)),
        Command::Validate => commands::validate(&cfg),
        Command::Sweep { routes: r } => commands::sweep(&doc, &cfg, routes(&r)),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let err = CliError::input(e.to_string().lines().next().unwrap_or("bad arguments").to_owned());
            eprintln!("{}", err.to_json_line());
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json_line());
            ExitCode::from(e.kind.exit_code() as u8)
        }
    }
}
