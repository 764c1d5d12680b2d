//! Subcommand implementations. Each writes its artifacts under the output
//! directory and prints a one-line JSON summary on standard output.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use riskmf::fpk::{fpk_time_grid, solve_fpk_xz, terminal_exponential_moment, terminal_exponents};
use riskmf::io::{
    write_density_dump, write_json_line, write_particle_dump, write_riccati_csv, write_summary_csv, write_table,
};
use riskmf::lq_value::{optimal_feedback, smp_terminal_residual, value_report, ChiCorrection, Routes, ValueReport};
use riskmf::riccati::{solve_matrix_riccati, solve_mean_ode, solve_scalar_riccati, MeanCorrection};
use riskmf::sim::{estimate_risk_sensitive_cost, simulate_lq, simulate_particles, terminal_costs, CostEstimate, SimConfig, Snapshots};
use riskmf::validation::{
    alpha_limit_check, chi_positivity_check, martingale_check, three_way_value_check, ChiCheckOptions, ChiSample,
};
use riskmf::{validate_model, CheckReport, Policy, RiskParams};
use serde::Serialize;

use crate::config::{set_path, Format, ModelKind, PolicyKind, ScenarioConfig};
use crate::error::CliError;

type Outcome = Result<(), CliError>;

fn out_dir(cfg: &ScenarioConfig) -> Result<PathBuf, CliError> {
    let dir = PathBuf::from(&cfg.output.directory);
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    Ok(BufWriter::new(File::create(path)?))
}

fn print_json<T: Serialize>(value: &T) -> Outcome {
    let mut out = std::io::stdout().lock();
    write_json_line(&mut out, value)?;
    Ok(())
}

fn write_json_file<T: Serialize>(path: &Path, value: &T) -> Outcome {
    let mut w = create(path)?;
    write_json_line(&mut w, value)?;
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct RiccatiSummary {
    scenario_id: String,
    blow_up_t: Option<f64>,
    pi0: Option<Vec<f64>>,
    rho0: Option<f64>,
}

pub fn riccati(cfg: &ScenarioConfig) -> Outcome {
    let dir = out_dir(cfg)?;
    let risk = cfg.risk()?;
    let (sol, y) = match cfg.model.kind {
        ModelKind::Scalar => {
            let m = cfg.scalar_model()?;
            let sol = solve_scalar_riccati(&m, &risk, &cfg.grid, 0.0)?;
            if sol.is_usable() {
                let sol = sol.with_omega(&m)?;
                let y = solve_mean_ode(&sol, &m, cfg.model.init.mean(), &MeanCorrection::None)?;
                (sol, Some(y))
            } else {
                (sol, None)
            }
        }
        ModelKind::Matrix => (solve_matrix_riccati(&cfg.matrix_model()?, &risk, &cfg.grid)?, None),
        ModelKind::Generic => return Err(CliError::input("riccati needs a scalar or matrix LQ model")),
    };
    let mut w = create(&dir.join("riccati.csv"))?;
    write_riccati_csv(&mut w, &sol, y.as_deref())?;
    w.flush()?;
    let d2 = sol.dim * sol.dim;
    print_json(&RiccatiSummary {
        scenario_id: cfg.id.clone(),
        blow_up_t: sol.blow_up.map(|b| b.t_estimate),
        pi0: sol.is_usable().then(|| sol.pi[..d2].to_vec()),
        rho0: sol.is_usable().then(|| sol.rho[0]),
    })
}

fn build_policy(cfg: &ScenarioConfig, risk: &RiskParams) -> Result<Policy, CliError> {
    let n = cfg.grid.n_nodes();
    match cfg.mc.policy {
        PolicyKind::Zero => Ok(Policy::zero(&cfg.grid)),
        PolicyKind::ConstantGain => Ok(Policy::LinearGain(vec![cfg.mc.gain; n])),
        PolicyKind::Optimal => {
            let m = cfg.scalar_model()?;
            let ric = solve_scalar_riccati(&m, risk, &cfg.grid, 0.0)?;
            Ok(optimal_feedback(&ric, &m, risk, ChiCorrection::None)?)
        }
    }
}

fn snapshots(cfg: &ScenarioConfig) -> Snapshots {
    match cfg.mc.snapshot_every {
        0 => Snapshots::TerminalOnly,
        s => Snapshots::Every(s),
    }
}

#[derive(Serialize)]
struct SimulateReport {
    scenario_id: String,
    risk_seeking: bool,
    seed: u64,
    n_particles: usize,
    /// Estimate for the (possibly sign-flipped) risk-averse problem.
    estimate: CostEstimate,
    /// Certainty equivalent of the problem as configured.
    certainty_equivalent: f64,
}

pub fn simulate(cfg: &ScenarioConfig) -> Outcome {
    let dir = out_dir(cfg)?;
    let risk = cfg.risk()?;
    let model = cfg.generic_model()?;
    let policy = build_policy(cfg, &risk)?;
    let sim_cfg = SimConfig::new(cfg.mc.n_particles, cfg.mc.seed).with_snapshots(snapshots(cfg));
    let traj = simulate_particles(&model, &policy, &cfg.model.init, &cfg.grid, &sim_cfg)?;
    let estimate = estimate_risk_sensitive_cost(&traj, &model, &risk)?;
    if cfg.wants(Format::Csv) {
        let mut w = create(&dir.join("trajectory.csv"))?;
        write_summary_csv(&mut w, &traj.summary)?;
        w.flush()?;
    }
    if cfg.wants(Format::Bin) {
        let mut w = create(&dir.join("particles.bin"))?;
        write_particle_dump(&mut w, &traj)?;
        w.flush()?;
    }
    let sign = if cfg.risk.risk_seeking { -1.0 } else { 1.0 };
    let report = SimulateReport {
        scenario_id: cfg.id.clone(),
        risk_seeking: cfg.risk.risk_seeking,
        seed: cfg.mc.seed,
        n_particles: cfg.mc.n_particles,
        estimate,
        certainty_equivalent: sign * estimate.certainty_equivalent,
    };
    if cfg.wants(Format::Json) {
        write_json_file(&dir.join("cost.json"), &report)?;
    }
    print_json(&report)
}

#[derive(Serialize)]
struct FpkReport {
    scenario_id: String,
    value: f64,
    boundary_fraction: f64,
    truncation_warning: bool,
    n_steps: usize,
    max_mass_error: f64,
    min_cell: f64,
}

pub fn fpk(cfg: &ScenarioConfig) -> Outcome {
    let dir = out_dir(cfg)?;
    let s = cfg.scenario()?;
    let grid = fpk_time_grid(&s.model, &s.risk, s.grid.horizon(), &s.fpk)?;
    let ric = solve_scalar_riccati(&s.model, &s.risk, &grid, 0.0)?;
    let sol = solve_fpk_xz(&s.model, &ric, &s.init, &grid, &s.fpk)?;
    let moment = terminal_exponential_moment(&sol.terminal, &s.model, &s.risk)?;
    let d = &sol.terminal;
    if cfg.wants(Format::Csv) {
        let dx = d.x_grid.dx();
        let rows: Vec<Vec<Option<f64>>> = d
            .x_marginal()
            .iter()
            .enumerate()
            .map(|(i, p)| vec![Some(d.x_grid.center(i)), Some(p / dx)])
            .collect();
        let mut w = create(&dir.join("x_marginal.csv"))?;
        write_table(&mut w, &["x".into(), "density".into()], &rows)?;
        w.flush()?;
        let rows: Vec<Vec<Option<f64>>> =
            d.z_marginal().iter().enumerate().map(|(j, p)| vec![Some(d.z_node(j)), Some(*p)]).collect();
        let mut w = create(&dir.join("z_marginal.csv"))?;
        write_table(&mut w, &["z".into(), "probability".into()], &rows)?;
        w.flush()?;
        let rows: Vec<Vec<Option<f64>>> =
            sol.mass_history.iter().enumerate().map(|(k, m)| vec![Some(grid.node(k)), Some(*m)]).collect();
        let mut w = create(&dir.join("mass.csv"))?;
        write_table(&mut w, &["t".into(), "mass".into()], &rows)?;
        w.flush()?;
        let rows: Vec<Vec<Option<f64>>> = (0..d.n_z)
            .flat_map(|j| (0..d.x_grid.n_x).map(move |i| (i, j)))
            .map(|(i, j)| vec![Some(d.x_grid.center(i)), Some(d.z_node(j)), Some(d.mu(i, j).max(0.0))])
            .collect();
        let mut w = create(&dir.join("density.csv"))?;
        write_table(&mut w, &["x".into(), "z".into(), "mu".into()], &rows)?;
        w.flush()?;
    }
    if cfg.wants(Format::Bin) {
        let mut w = create(&dir.join("density.bin"))?;
        write_density_dump(&mut w, d)?;
        w.flush()?;
    }
    let report = FpkReport {
        scenario_id: cfg.id.clone(),
        value: moment.value,
        boundary_fraction: moment.boundary_fraction,
        truncation_warning: moment.truncation_warning,
        n_steps: grid.n_steps(),
        max_mass_error: sol.mass_history.iter().fold(0.0f64, |m, v| m.max((v - 1.0).abs())),
        min_cell: sol.min_value,
    };
    if cfg.wants(Format::Json) {
        write_json_file(&dir.join("moment.json"), &report)?;
    }
    print_json(&report)
}

pub fn value(cfg: &ScenarioConfig, routes: Routes) -> Outcome {
    let dir = out_dir(cfg)?;
    let report = value_report(&cfg.scenario()?, routes)?;
    write_json_file(&dir.join("value.json"), &report)?;
    print_json(&report)
}

fn run_checks(cfg: &ScenarioConfig) -> Result<Vec<CheckReport>, CliError> {
    let s = cfg.scenario()?;
    let mut reports = Vec::new();

    let outcome = validate_model(&s.model, &s.risk, &s.grid);
    reports.push(CheckReport::new(
        "model_admissible",
        outcome.violations.len() as f64,
        0.0,
        format!("violations: {:?}; warnings: {:?}", outcome.violations, outcome.warnings),
    ));
    if !outcome.is_ok() {
        return Ok(reports);
    }

    let ric = solve_scalar_riccati(&s.model, &s.risk, &s.grid, 0.0)?;
    let mut chi_samples = Vec::new();
    if let Some(b) = ric.blow_up {
        let why = format!("Riccati blow-up at t={:.4}", b.t_estimate);
        for name in ["martingale", "smp_terminal_residual"] {
            reports.push(CheckReport::not_applicable(name, why.clone()));
        }
    } else {
        let ric = ric.with_omega(&s.model)?;
        let policy = optimal_feedback(&ric, &s.model, &s.risk, ChiCorrection::None)?;
        let every = (s.grid.n_steps() / 50).max(1);
        let sim_cfg = SimConfig::new(s.mc.n_particles, s.mc.seed).with_snapshots(Snapshots::Every(every));
        let traj = simulate_lq(&s.model, &s.risk, &policy, &s.init, &s.grid, &sim_cfg)?;
        if s.risk.beta == 0.0 {
            reports.push(martingale_check(&traj, &ric, &s.risk)?);
        } else {
            reports.push(CheckReport::not_applicable("martingale", "closed-form u0 needs beta = 0".into()));
        }
        let generic = s.model.to_generic(s.risk.beta);
        let est = estimate_risk_sensitive_cost(&traj, &generic, &s.risk)?;
        let smp = smp_terminal_residual(&traj, &ric, &s.model, &s.risk, s.risk.alpha * est.j_alpha)?;
        reports.push(CheckReport::new(
            "smp_terminal_residual",
            smp.max_abs_residual,
            1e-10,
            format!("max |p(T) - x(T) - beta chi(0)/chi(T)| over {} particles", smp.terminal_residual.len()),
        ));
        let costs = terminal_costs(&traj, &generic)?;
        chi_samples.push(ChiSample::Estimate {
            label: "mc".into(),
            alpha: s.risk.alpha,
            exponents: costs.iter().map(|c| s.risk.alpha * c).collect(),
        });
        let grid = fpk_time_grid(&s.model, &s.risk, s.grid.horizon(), &s.fpk)?;
        let fpk_ric = solve_scalar_riccati(&s.model, &s.risk, &grid, 0.0)?;
        let sol = solve_fpk_xz(&s.model, &fpk_ric, &s.init, &grid, &s.fpk)?;
        chi_samples.push(ChiSample::Field {
            label: "fpk".into(),
            alpha: s.risk.alpha,
            exponents: terminal_exponents(&sol.terminal, &s.model, &s.risk),
        });
    }
    reports.push(chi_positivity_check(&chi_samples, ChiCheckOptions::default()));

    // first-order behaviour only shows for small alpha
    let a = s.risk.alpha.min(0.1);
    reports.push(alpha_limit_check(
        &s.model.to_generic(s.risk.beta),
        &Policy::zero(&s.grid),
        &s.init,
        &s.grid,
        &[a, a / 2.0, a / 4.0],
        &SimConfig::new(s.mc.n_particles, s.mc.seed),
    )?);
    reports.push(three_way_value_check(&s)?);
    Ok(reports)
}

pub fn validate(cfg: &ScenarioConfig) -> Outcome {
    let dir = out_dir(cfg)?;
    let reports = run_checks(cfg)?;
    let mut w = create(&dir.join("checks.jsonl"))?;
    for r in &reports {
        write_json_line(&mut w, r)?;
        print_json(r)?;
    }
    w.flush()?;
    let failed: Vec<&str> = reports.iter().filter(|r| r.applicable && !r.passed).map(|r| r.name.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::check_failed(format!("failed checks: {}", failed.join(", "))))
    }
}

pub fn sweep(doc: &toml::Table, cfg: &ScenarioConfig, routes: Routes) -> Outcome {
    let sweep = cfg.sweep.clone().ok_or_else(|| CliError::input("sweep needs a [sweep] section"))?;
    if sweep.values.is_empty() {
        return Err(CliError::input("sweep.values is empty"));
    }
    let xs = sweep
        .values
        .iter()
        .map(|v| match v {
            toml::Value::Float(f) => Ok(*f),
            toml::Value::Integer(i) => Ok(*i as f64),
            other => Err(CliError::input(format!("sweep values must be numbers, got {other}"))),
        })
        .collect::<Result<Vec<f64>, _>>()?;
    let dir = out_dir(cfg)?;
    let reports: Vec<ValueReport> = sweep
        .values
        .par_iter()
        .enumerate()
        .map(|(i, v)| {
            let mut point = doc.clone();
            set_path(&mut point, &sweep.key, v.clone())?;
            let mut pcfg = ScenarioConfig::from_document(point)?;
            pcfg.id = format!("{}-{i}", cfg.id);
            Ok(value_report(&pcfg.scenario()?, routes)?)
        })
        .collect::<Result<_, CliError>>()?;

    let mut header = vec![sweep.key.clone()];
    header.extend(
        [
            "alpha",
            "beta",
            "value_closed_form",
            "value_mc",
            "mc_std_error",
            "value_pde",
            "certainty_equivalent",
            "residual_beta2",
            "blow_up",
        ]
        .map(String::from),
    );
    let rows: Vec<Vec<Option<f64>>> = reports
        .iter()
        .zip(&xs)
        .map(|(r, x)| {
            vec![
                Some(*x),
                Some(r.alpha),
                Some(r.beta),
                r.value_closed_form,
                r.value_mc,
                r.mc_std_error,
                r.value_pde,
                r.certainty_equivalent,
                r.residual_beta2,
                r.blow_up,
            ]
        })
        .collect();
    let mut w = create(&dir.join("sweep.csv"))?;
    write_table(&mut w, &header, &rows)?;
    w.flush()?;
    for (i, r) in reports.iter().enumerate() {
        write_json_file(&dir.join(format!("value_{i}.json")), r)?;
        print_json(r)?;
    }
    Ok(())
}
