//! Closed-form and small-`β` value pipeline for the scalar mean-field LQ
//! problem, plus the three-route value report.
//!
//! The leading-order value function is
//! `u₀(x, z, t) = exp(α(z + ½π(t)x² + ρ(t)))` and the value is
//! `J^α = e^{αβ y(T)} λ(T)` with `λ(T) = ∫ u₀(x, 0, 0) m₀(dx)`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fpk::{fpk_time_grid, solve_fpk_xz, terminal_exponential_moment, FpkSettings};
use crate::model::{InitialLaw, LQScalarModel, Policy, RiskParams, TimeGrid};
use crate::riccati::{solve_mean_ode, solve_omega, solve_scalar_riccati, MeanCorrection, RiccatiSolution};
use crate::sim::{estimate_risk_sensitive_cost, simulate_lq, CostEstimate, SimConfig, Trajectory};
use crate::stats;

/// Which feedback [`optimal_feedback`] builds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ChiCorrection {
    /// `v = −(b/r)π(t)x`.
    None,
    /// Adds the mean-field term: `v = −(b/r)(π x + β λ(T) ω(t) / u₀)`.
    Approx { lambda_t: f64 },
}

/// Optimal feedback from a usable scalar Riccati solution.
pub fn optimal_feedback(
    riccati: &RiccatiSolution,
    model: &LQScalarModel,
    risk: &RiskParams,
    correction: ChiCorrection,
) -> Result<Policy> {
    let gain = riccati.feedback_gain(model)?;
    match correction {
        ChiCorrection::None => Ok(Policy::LinearGain(gain)),
        ChiCorrection::Approx { lambda_t } => {
            if !(lambda_t > 0.0 && lambda_t.is_finite()) {
                return Err(Error::InvalidInput(format!("lambda(T) must be > 0, got {lambda_t}")));
            }
            let omega = match &riccati.omega {
                Some(o) => o.clone(),
                None => solve_omega(riccati, model)?,
            };
            let pi = riccati.pi.clone();
            let rho = riccati.rho.clone();
            let grid = riccati.grid;
            let ratio = model.b / model.r;
            let (alpha, beta) = (risk.alpha, risk.beta);
            let ln_lambda = lambda_t.ln();
            Ok(Policy::Callback(Arc::new(move |t, x, z, _| {
                let k = grid.index_of(t);
                let log_u0 = alpha * (z + 0.5 * pi[k] * x * x + rho[k]);
                let term = (ln_lambda + omega[k].ln() - log_u0).exp();
                -ratio * (pi[k] * x + beta * term)
            })))
        }
    }
}

/// `λ(T) = ∫ exp(α(½π(0)x² + ρ(0))) m₀(dx)`.
pub fn lambda_t_quadrature(riccati: &RiccatiSolution, init: &InitialLaw, risk: &RiskParams) -> Result<f64> {
    let pi = riccati.pi_path()?;
    init.validate()?;
    let (p0, rho0, alpha) = (pi[0], riccati.rho[0], risk.alpha);
    let log_lambda = match init {
        InitialLaw::Dirac { x0 } => alpha * (0.5 * p0 * x0 * x0 + rho0),
        InitialLaw::Gaussian { mean, variance } => {
            let product = alpha * p0 * variance;
            if product >= 1.0 {
                return Err(Error::IntegrabilityViolation { product });
            }
            let d = 1.0 - product;
            alpha * rho0 + alpha * p0 * mean * mean / (2.0 * d) - 0.5 * d.ln()
        }
        InitialLaw::Samples { values } => {
            let expo: Vec<f64> = values.iter().map(|x| alpha * 0.5 * p0 * x * x).collect();
            alpha * rho0 + stats::exp_moment(&expo).log_value()
        }
    };
    Ok(log_lambda.exp())
}

/// Where an [`MFLQSolution`] value came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueSource {
    ClosedFormApprox,
    MonteCarlo,
    Pde,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MFLQSolution {
    pub riccati: RiccatiSolution,
    /// Mean path `y(t)`.
    pub y: Vec<f64>,
    pub chi0: f64,
    pub lambda_t: f64,
    pub value: f64,
    pub feedback_gain: Vec<f64>,
    pub source: ValueSource,
    /// `(b²/(2r)) α β² / ω(0)²`, the size of the neglected `O(β²)` term.
    pub residual_beta2: f64,
}

impl MFLQSolution {
    pub fn certainty_equivalent(&self, risk: &RiskParams) -> f64 {
        self.value.ln() / risk.alpha
    }

    /// Replaces the value with a Monte Carlo estimate, setting
    /// `χ(0) = α J^α`.
    pub fn with_mc_value(mut self, estimate: &CostEstimate, risk: &RiskParams) -> Self {
        self.value = estimate.j_alpha;
        self.chi0 = risk.alpha * estimate.j_alpha;
        self.source = ValueSource::MonteCarlo;
        self
    }
}

/// Value for small `β`: `e^{αβ y(T)} λ(T)`, dropping `O(β²)` terms.
pub fn approx_value_small_beta(
    model: &LQScalarModel,
    risk: &RiskParams,
    init: &InitialLaw,
    grid: &TimeGrid,
) -> Result<MFLQSolution> {
    risk.require_positive_alpha()?;
    let riccati = solve_scalar_riccati(model, risk, grid, 0.0)?;
    riccati.require_usable()?;
    let riccati = riccati.with_omega(model)?;
    let y = solve_mean_ode(&riccati, model, init.mean(), &MeanCorrection::None)?;
    let lambda_t = lambda_t_quadrature(&riccati, init, risk)?;
    let y_t = *y.last().expect("grid has nodes");
    let value = (risk.alpha * risk.beta * y_t).exp() * lambda_t;
    let omega0 = riccati.omega.as_ref().expect("omega attached")[0];
    let residual_beta2 = 0.5 * model.control_authority() * risk.alpha * risk.beta * risk.beta / (omega0 * omega0);
    let feedback_gain = riccati.feedback_gain(model)?;
    Ok(MFLQSolution {
        riccati,
        y,
        chi0: risk.alpha * value,
        lambda_t,
        value,
        feedback_gain,
        source: ValueSource::ClosedFormApprox,
        residual_beta2,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SMPDiagnostics {
    /// `p_i(t_k)` for every recorded snapshot `k` (outer) and particle `i`.
    pub p_path: Vec<Vec<f64>>,
    pub terminal_residual: Vec<f64>,
    pub max_abs_residual: f64,
}

/// Adjoint `p = π x + β ω χ(0)/χ` along the recorded snapshots and the
/// residual of its terminal condition `p(T) = x(T) + β χ(0)/χ(T)`.
///
/// `χ(T) = α exp(α(z + h))` exactly; at earlier snapshots `χ` is replaced
/// by `α u₀`. Ratios are formed in the log domain.
pub fn smp_terminal_residual(
    traj: &Trajectory,
    riccati: &RiccatiSolution,
    model: &LQScalarModel,
    risk: &RiskParams,
    chi0: f64,
) -> Result<SMPDiagnostics> {
    let pi = riccati.pi_path()?;
    let omega = match &riccati.omega {
        Some(o) => o.clone(),
        None => solve_omega(riccati, model)?,
    };
    let term = traj.terminal()?;
    let n = traj.grid.n_steps();
    let (alpha, beta) = (risk.alpha, risk.beta);
    let ln_chi0 = (chi0 / alpha).ln();
    let stat = stats::mean(&term.x);

    let mut p_path = Vec::with_capacity(traj.snapshots.len());
    for snap in &traj.snapshots {
        let k = snap.node;
        let row = snap
            .x
            .iter()
            .zip(&snap.z)
            .map(|(&x, &z)| {
                let log_chi = if k == n {
                    alpha * (z + model.terminal_cost(x, stat, beta))
                } else {
                    alpha * (z + 0.5 * pi[k] * x * x + riccati.rho[k])
                };
                pi[k] * x + beta * omega[k] * (ln_chi0 - log_chi).exp()
            })
            .collect();
        p_path.push(row);
    }

    let terminal_residual: Vec<f64> = term
        .x
        .iter()
        .zip(&term.z)
        .map(|(&x, &z)| {
            let ratio = (ln_chi0 - alpha * (z + model.terminal_cost(x, stat, beta))).exp();
            let p = pi[n] * x + beta * omega[n] * ratio;
            p - (x + beta * ratio)
        })
        .collect();
    let max_abs_residual = terminal_residual.iter().fold(0.0f64, |m, r| m.max(r.abs()));
    Ok(SMPDiagnostics { p_path, terminal_residual, max_abs_residual })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McSettings {
    pub n_particles: usize,
    pub seed: u64,
}

/// A fully specified scalar LQ scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub id: String,
    pub model: LQScalarModel,
    pub risk: RiskParams,
    pub init: InitialLaw,
    pub grid: TimeGrid,
    pub mc: McSettings,
    pub fpk: FpkSettings,
}

/// Routes to evaluate in [`value_report`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Routes {
    pub closed_form: bool,
    pub mc: bool,
    pub pde: bool,
}

impl Routes {
    pub const ALL: Routes = Routes { closed_form: true, mc: true, pde: true };
}

/// Value of one scenario by up to three routes. Absent routes are `null`
/// in JSON; `blow_up` holds the escape time when the Riccati solve fails.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValueReport {
    pub scenario_id: String,
    pub alpha: f64,
    pub beta: f64,
    pub value_closed_form: Option<f64>,
    pub value_mc: Option<f64>,
    pub mc_std_error: Option<f64>,
    pub value_pde: Option<f64>,
    pub certainty_equivalent: Option<f64>,
    pub residual_beta2: Option<f64>,
    pub blow_up: Option<f64>,
}

/// Monte Carlo value under the leading-order optimal feedback.
pub fn mc_value(scenario: &Scenario, riccati: &RiccatiSolution) -> Result<CostEstimate> {
    let policy = optimal_feedback(riccati, &scenario.model, &scenario.risk, ChiCorrection::None)?;
    let cfg = SimConfig::new(scenario.mc.n_particles, scenario.mc.seed);
    let traj = simulate_lq(&scenario.model, &scenario.risk, &policy, &scenario.init, &scenario.grid, &cfg)?;
    estimate_risk_sensitive_cost(&traj, &scenario.model.to_generic(scenario.risk.beta), &scenario.risk)
}

/// PDE value `∫∫ μ(x, z, T) e^{α(z + h)}` on a CFL-safe time grid.
pub fn pde_value(scenario: &Scenario) -> Result<f64> {
    let grid = fpk_time_grid(&scenario.model, &scenario.risk, scenario.grid.horizon(), &scenario.fpk)?;
    let riccati = solve_scalar_riccati(&scenario.model, &scenario.risk, &grid, 0.0)?;
    let sol = solve_fpk_xz(&scenario.model, &riccati, &scenario.init, &grid, &scenario.fpk)?;
    Ok(terminal_exponential_moment(&sol.terminal, &scenario.model, &scenario.risk)?.value)
}

pub fn value_report(scenario: &Scenario, routes: Routes) -> Result<ValueReport> {
    let risk = scenario.risk;
    risk.require_positive_alpha()?;
    let mut report = ValueReport {
        scenario_id: scenario.id.clone(),
        alpha: risk.alpha,
        beta: risk.beta,
        value_closed_form: None,
        value_mc: None,
        mc_std_error: None,
        value_pde: None,
        certainty_equivalent: None,
        residual_beta2: None,
        blow_up: None,
    };
    let riccati = solve_scalar_riccati(&scenario.model, &risk, &scenario.grid, 0.0)?;
    if let Some(b) = riccati.blow_up {
        report.blow_up = Some(b.t_estimate);
        return Ok(report);
    }
    if routes.closed_form {
        let sol = approx_value_small_beta(&scenario.model, &risk, &scenario.init, &scenario.grid)?;
        report.value_closed_form = Some(sol.value);
        report.residual_beta2 = Some(sol.residual_beta2);
    }
    if routes.mc {
        let est = mc_value(scenario, &riccati)?;
        report.value_mc = Some(est.j_alpha);
        report.mc_std_error = Some(est.std_error);
    }
    if routes.pde {
        report.value_pde = Some(pde_value(scenario)?);
    }
    report.certainty_equivalent = report
        .value_closed_form
        .or(report.value_mc)
        .or(report.value_pde)
        .map(|v| v.ln() / risk.alpha);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::Snapshots;

    fn example() -> (LQScalarModel, RiskParams, TimeGrid) {
        // π(t) = 1/(1 + 0.5(T − t)) with T = 1
        (
            LQScalarModel::new(0.0, 1.0, 1.0),
            RiskParams::new(0.5, 0.0).unwrap(),
            TimeGrid::new(1.0, 1000).unwrap(),
        )
    }

    #[test]
    fn linear_feedback_gain() {
        let (m, risk, grid) = example();
        let ric = solve_scalar_riccati(&m, &risk, &grid, 0.0).unwrap();
        match optimal_feedback(&ric, &m, &risk, ChiCorrection::None).unwrap() {
            Policy::LinearGain(k) => assert!((k[0] - 2.0 / 3.0).abs() < 1e-10),
            p => panic!("unexpected {p:?}"),
        }
        let m0 = LQScalarModel::new(0.0, 0.0, 1.0);
        let ric = solve_scalar_riccati(&m0, &risk, &grid, 0.0).unwrap();
        match optimal_feedback(&ric, &m0, &risk, ChiCorrection::None).unwrap() {
            Policy::LinearGain(k) => assert!(k.iter().all(|&g| g == 0.0)),
            p => panic!("unexpected {p:?}"),
        }
    }

    #[test]
    fn small_alpha_gain_matches_lqr() {
        let m = LQScalarModel { q: 1.0, ..LQScalarModel::new(0.3, 1.0, 1.0) };
        let grid = TimeGrid::new(1.0, 1000).unwrap();
        let lqr = solve_scalar_riccati(&m, &RiskParams::risk_neutral(0.0), &grid, 0.0).unwrap();
        let risk = RiskParams::new(1e-9, 0.0).unwrap();
        let ric = solve_scalar_riccati(&m, &risk, &grid, 0.0).unwrap();
        let k = ric.feedback_gain(&m).unwrap();
        let k0 = lqr.feedback_gain(&m).unwrap();
        assert!(k.iter().zip(&k0).all(|(a, b)| (a - b).abs() < 1e-6));
    }

    #[test]
    fn approx_policy_reduces_at_zero_beta() {
        let (m, risk, grid) = example();
        let ric = solve_scalar_riccati(&m, &risk, &grid, 0.0).unwrap();
        let p = optimal_feedback(&ric, &m, &risk, ChiCorrection::Approx { lambda_t: 2.0 }).unwrap();
        assert!((p.control(0, 0.0, 1.5, 0.0, 0.0) + 1.0).abs() < 1e-10);
    }

    #[test]
    fn lambda_cases() {
        let (m, risk, grid) = example();
        let ric = solve_scalar_riccati(&m, &risk, &grid, 0.0).unwrap();
        let (p0, r0) = (ric.pi[0], ric.rho[0]);
        let dirac = lambda_t_quadrature(&ric, &InitialLaw::Dirac { x0: 2.0 }, &risk).unwrap();
        assert!((dirac - (0.5 * (0.5 * p0 * 4.0 + r0)).exp()).abs() < 1e-12);

        // boundary of the integrability guard
        let s2 = 1.0 / (risk.alpha * p0);
        let near = InitialLaw::Gaussian { mean: 0.0, variance: 0.999 * s2 };
        assert!(lambda_t_quadrature(&ric, &near, &risk).unwrap().is_finite());
        let at = InitialLaw::Gaussian { mean: 0.0, variance: s2 };
        assert!(matches!(lambda_t_quadrature(&ric, &at, &risk), Err(Error::IntegrabilityViolation { .. })));
    }

    #[test]
    fn lambda_gaussian_matches_sample_quadrature() {
        let (m, risk, grid) = example();
        let ric = solve_scalar_riccati(&m, &risk, &grid, 0.0).unwrap();
        let gauss = InitialLaw::Gaussian { mean: 0.5, variance: 0.3 };
        let closed = lambda_t_quadrature(&ric, &gauss, &risk).unwrap();
        // Gauss–Hermite oracle via a fine midpoint rule on the density
        let (s, mu) = (0.3f64.sqrt(), 0.5);
        let h = 1e-3;
        let p0 = ric.pi[0];
        let quad: f64 = (-12_000..12_000)
            .map(|i| mu + (i as f64 + 0.5) * h)
            .map(|x| {
                let dens = (-(x - mu) * (x - mu) / (2.0 * s * s)).exp() / (s * (2.0 * std::f64::consts::PI).sqrt());
                dens * (risk.alpha * 0.5 * p0 * x * x).exp() * h
            })
            .sum::<f64>()
            * (risk.alpha * ric.rho[0]).exp();
        assert!((closed / quad - 1.0).abs() < 1e-9, "{closed} vs {quad}");
    }

    #[test]
    fn gaussian_benchmark_value() {
        let m = LQScalarModel::new(0.0, 0.0, 1.0);
        let risk = RiskParams::new(1.0, 0.0).unwrap();
        let grid = TimeGrid::new(0.5, 5000).unwrap();
        let sol = approx_value_small_beta(&m, &risk, &InitialLaw::Dirac { x0: 1.0 }, &grid).unwrap();
        let exact = std::f64::consts::E * 2f64.sqrt();
        assert!((sol.value - exact).abs() < 1e-6);
        assert_eq!(sol.residual_beta2, 0.0);
        assert_eq!(sol.source, ValueSource::ClosedFormApprox);
    }

    #[test]
    fn beta_shifts_value_by_mean_path() {
        let (m, _, grid) = example();
        let risk = RiskParams::new(0.5, 0.2).unwrap();
        let init = InitialLaw::Dirac { x0: 1.0 };
        let with = approx_value_small_beta(&m, &risk, &init, &grid).unwrap();
        let without = approx_value_small_beta(&m, &RiskParams::new(0.5, 0.0).unwrap(), &init, &grid).unwrap();
        // y(T) = 4/9 for this example, up to mean-ODE discretization error
        let expected = without.value * (0.5 * 0.2 * 4.0 / 9.0f64).exp();
        assert!((with.value / expected - 1.0).abs() < 1e-8, "{} vs {expected}", with.value);
        let omega0: f64 = 4.0 / 9.0;
        assert!((with.residual_beta2 / (0.5 * 0.5 * 0.04 / (omega0 * omega0)) - 1.0).abs() < 1e-6);
    }

    fn smp_setup(beta: f64) -> (LQScalarModel, RiskParams, RiccatiSolution, Trajectory) {
        let m = LQScalarModel::new(0.0, 1.0, 0.5);
        let risk = RiskParams::new(0.5, beta).unwrap();
        let grid = TimeGrid::new(1.0, 100).unwrap();
        let ric = solve_scalar_riccati(&m, &risk, &grid, 0.0).unwrap().with_omega(&m).unwrap();
        let policy = optimal_feedback(&ric, &m, &risk, ChiCorrection::None).unwrap();
        let cfg = SimConfig::new(2000, 5).with_snapshots(Snapshots::Every(10));
        let traj = simulate_lq(&m, &risk, &policy, &InitialLaw::Dirac { x0: 1.0 }, &grid, &cfg).unwrap();
        (m, risk, ric, traj)
    }

    #[test]
    fn smp_residual_vanishes_with_exact_terminal_condition() {
        for beta in [0.0, 0.1] {
            let (m, risk, ric, traj) = smp_setup(beta);
            let d = smp_terminal_residual(&traj, &ric, &m, &risk, 1.3).unwrap();
            assert!(d.max_abs_residual <= 1e-12, "beta {beta}: {}", d.max_abs_residual);
            assert_eq!(d.p_path.len(), traj.snapshots.len());
        }
    }

    #[test]
    fn smp_residual_detects_perturbed_terminal_condition() {
        let (m, risk, mut ric, traj) = smp_setup(0.0);
        let n = ric.grid.n_steps();
        ric.pi[n] = 1.01;
        let d = smp_terminal_residual(&traj, &ric, &m, &risk, 1.0).unwrap();
        let xmax = traj.terminal().unwrap().x.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        assert!((d.max_abs_residual - 0.01 * xmax).abs() < 1e-12);
    }

    #[test]
    fn blow_up_report_has_no_values() {
        let scenario = Scenario {
            id: "blow".into(),
            model: LQScalarModel::new(0.0, 0.0, 1.0),
            risk: RiskParams::new(1.0, 0.0).unwrap(),
            init: InitialLaw::Dirac { x0: 1.0 },
            grid: TimeGrid::new(2.0, 20_000).unwrap(),
            mc: McSettings { n_particles: 10, seed: 1 },
            fpk: FpkSettings { n_x: 50, n_z: 10, x_bounds: (-5.0, 5.0), z_max_factor: 1.5 },
        };
        let r = value_report(&scenario, Routes::ALL).unwrap();
        assert!((r.blow_up.unwrap() - 1.0).abs() < 0.01);
        assert!(r.value_closed_form.is_none() && r.value_mc.is_none() && r.value_pde.is_none());
        let json = serde_json::to_value(&r).unwrap();
        assert!(json["value_mc"].is_null());
    }
}
