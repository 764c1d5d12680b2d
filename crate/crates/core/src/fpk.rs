//! Explicit finite-volume Fokker–Planck solvers.
//!
//! Densities are stored as cell probabilities (they sum to one), so mass
//! conservation is checked on plain sums. The x-direction uses first-order
//! upwind advection plus central diffusion with zero-flux walls. In the
//! augmented `(x, z)` problem each step is dimensionally split: an x-sweep
//! on every `z` level, then upwind transport in `z` with the nonnegative
//! running-cost velocity `f̂(x)`. Because the z-sweep never moves mass
//! across `x`, the x-marginal of the split scheme coincides with the 1-D
//! solve.
//!
//! The `z` grid is node-centred: level `j` sits at `z_j = j·dz` and the
//! initial `δ₀(z)` is level 0.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use crate::error::{Error, Result};
use crate::model::{InitialLaw, LQScalarModel, RiskParams, TimeGrid};
use crate::riccati::{solve_scalar_riccati, RiccatiSolution};
use crate::stats;

pub const CFL_LIMIT: f64 = 0.9;
pub const MASS_LEAK_TOLERANCE: f64 = 1e-6;
pub const TRUNCATION_TOLERANCE: f64 = 1e-6;

/// Uniform cell grid on `[x_min, x_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct XGrid {
    pub x_min: f64,
    pub x_max: f64,
    pub n_x: usize,
}

impl XGrid {
    pub fn new(x_min: f64, x_max: f64, n_x: usize) -> Result<Self> {
        if !(x_min.is_finite() && x_max.is_finite() && x_max > x_min) {
            return Err(Error::InvalidInput(format!("bad x bounds [{x_min}, {x_max}]")));
        }
        if n_x < 3 {
            return Err(Error::InvalidInput("need at least 3 x cells".into()));
        }
        Ok(Self { x_min, x_max, n_x })
    }

    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / self.n_x as f64
    }

    pub fn center(&self, i: usize) -> f64 {
        self.x_min + (i as f64 + 0.5) * self.dx()
    }

    /// Right face of cell `i`.
    pub fn face(&self, i: usize) -> f64 {
        self.x_min + (i + 1) as f64 * self.dx()
    }

    fn max_abs_face(&self) -> f64 {
        self.x_min.abs().max(self.x_max.abs())
    }
}

/// Spreads a point mass linearly over the two nearest cell centres, which
/// keeps its mean exact.
fn deposit(p: &mut [f64], grid: &XGrid, x: f64, weight: f64) {
    let s = (x - grid.x_min) / grid.dx() - 0.5;
    let n = grid.n_x;
    if s <= 0.0 {
        p[0] += weight;
    } else if s >= (n - 1) as f64 {
        p[n - 1] += weight;
    } else {
        let i = s.floor() as usize;
        let frac = s - i as f64;
        p[i] += weight * (1.0 - frac);
        p[i + 1] += weight * frac;
    }
}

/// Cell probabilities of the initial law, renormalized onto the grid.
pub fn discretize_initial(init: &InitialLaw, grid: &XGrid) -> Result<Vec<f64>> {
    init.validate()?;
    let mut p = vec![0.0; grid.n_x];
    match init {
        InitialLaw::Dirac { x0 } => deposit(&mut p, grid, *x0, 1.0),
        InitialLaw::Gaussian { mean, variance } => {
            let s = variance.sqrt();
            if s < 1e-3 * grid.dx() {
                deposit(&mut p, grid, *mean, 1.0);
            } else {
                let cdf = |x: f64| 0.5 * (1.0 + erf((x - mean) / (s * std::f64::consts::SQRT_2)));
                let mut lo = cdf(grid.x_min);
                for (i, pi) in p.iter_mut().enumerate() {
                    let hi = cdf(grid.face(i));
                    *pi = hi - lo;
                    lo = hi;
                }
            }
        }
        InitialLaw::Samples { values } => {
            let w = 1.0 / values.len() as f64;
            for &v in values {
                deposit(&mut p, grid, v, w);
            }
        }
    }
    let total: f64 = p.iter().sum();
    if !(total > 0.0) {
        return Err(Error::InvalidInput("initial law has no mass on the x grid".into()));
    }
    p.iter_mut().for_each(|v| *v /= total);
    Ok(p)
}

/// One explicit x-sweep on a row of cell probabilities. `drift(x)` is the
/// velocity at face `x`. `flux` is scratch of length `n − 1`.
fn x_sweep(p: &mut [f64], flux: &mut [f64], grid: &XGrid, drift_coef: f64, half_sigma2: f64, dt: f64) {
    let dx = grid.dx();
    let n = p.len();
    for i in 0..n - 1 {
        let u = drift_coef * grid.face(i);
        let adv = if u > 0.0 { u * p[i] } else { u * p[i + 1] };
        flux[i] = (adv - half_sigma2 * (p[i + 1] - p[i]) / dx) / dx;
    }
    p[0] -= dt * flux[0];
    for i in 1..n - 1 {
        p[i] -= dt * (flux[i] - flux[i - 1]);
    }
    p[n - 1] += dt * flux[n - 2];
}

fn check_cfl(dt: f64, max_speed: f64, sigma2: f64, dx: f64) -> Result<()> {
    let rate = max_speed / dx + sigma2 / (dx * dx);
    if dt * rate > CFL_LIMIT {
        return Err(Error::CflViolation { dt, dt_required: CFL_LIMIT / rate });
    }
    Ok(())
}

fn check_leak(boundary_mass: f64) -> Result<()> {
    if boundary_mass > MASS_LEAK_TOLERANCE {
        return Err(Error::MassLoss { leaked: boundary_mass });
    }
    Ok(())
}

/// Time-sampled 1-D density on an [`XGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct FpkXSolution {
    pub x_grid: XGrid,
    pub time_grid: TimeGrid,
    /// Cell probabilities at every node.
    pub probabilities: Vec<Vec<f64>>,
    pub mass_history: Vec<f64>,
}

impl FpkXSolution {
    /// Density values `p_i / dx` at node `k`.
    pub fn density(&self, k: usize) -> Vec<f64> {
        let dx = self.x_grid.dx();
        self.probabilities[k].iter().map(|p| p / dx).collect()
    }

    pub fn mean(&self, k: usize) -> f64 {
        moment_mean(&self.probabilities[k], &self.x_grid)
    }

    pub fn variance(&self, k: usize) -> f64 {
        let m = self.mean(k);
        self.probabilities[k]
            .iter()
            .enumerate()
            .map(|(i, p)| p * (self.x_grid.center(i) - m).powi(2))
            .sum()
    }
}

fn moment_mean(p: &[f64], grid: &XGrid) -> f64 {
    p.iter().enumerate().map(|(i, p)| p * grid.center(i)).sum()
}

/// Forward FPK for `dx = (a − b k(t)) x dt + σ dw`, where `k` is the
/// linear feedback gain (`v = −k x`) sampled on `grid`.
pub fn solve_fpk_x(
    model: &LQScalarModel,
    gain: &[f64],
    init: &InitialLaw,
    grid: &TimeGrid,
    x_grid: &XGrid,
) -> Result<FpkXSolution> {
    if gain.len() != grid.n_nodes() {
        return Err(Error::InvalidInput("gain sample count does not match the time grid".into()));
    }
    let drift: Vec<f64> = gain.iter().map(|k| model.a - model.b * k).collect();
    let sigma2 = model.sigma * model.sigma;
    let max_speed = stats::max(&drift.iter().map(|d| d.abs()).collect::<Vec<_>>()) * x_grid.max_abs_face();
    let dt = grid.dt();
    check_cfl(dt, max_speed, sigma2, x_grid.dx())?;

    let mut p = discretize_initial(init, x_grid)?;
    let mut flux = vec![0.0; x_grid.n_x - 1];
    let mut probabilities = Vec::with_capacity(grid.n_nodes());
    let mut mass_history = Vec::with_capacity(grid.n_nodes());
    probabilities.push(p.clone());
    mass_history.push(p.iter().sum());
    for &d in &drift[..grid.n_steps()] {
        x_sweep(&mut p, &mut flux, x_grid, d, 0.5 * sigma2, dt);
        check_leak(p[0] + p[x_grid.n_x - 1])?;
        mass_history.push(p.iter().sum());
        probabilities.push(p.clone());
    }
    Ok(FpkXSolution { x_grid: *x_grid, time_grid: *grid, probabilities, mass_history })
}

/// Discretized joint law `μ(x, z)` stored as cell probabilities, z-major:
/// entry `j·n_x + i` is cell `(x_i, z_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDensity2D {
    pub x_grid: XGrid,
    pub n_z: usize,
    pub dz: f64,
    pub t: f64,
    pub probabilities: Vec<f64>,
}

impl GridDensity2D {
    pub fn z_max(&self) -> f64 {
        (self.n_z - 1) as f64 * self.dz
    }

    pub fn z_node(&self, j: usize) -> f64 {
        j as f64 * self.dz
    }

    pub fn probability(&self, i: usize, j: usize) -> f64 {
        self.probabilities[j * self.x_grid.n_x + i]
    }

    /// Cell-average density `μ(x_i, z_j)`.
    pub fn mu(&self, i: usize, j: usize) -> f64 {
        self.probability(i, j) / (self.x_grid.dx() * self.dz)
    }

    pub fn total_mass(&self) -> f64 {
        self.probabilities.iter().sum()
    }

    pub fn min_value(&self) -> f64 {
        self.probabilities.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Cell probabilities of the x-marginal `m(x) = ∫ μ dz`.
    pub fn x_marginal(&self) -> Vec<f64> {
        let n_x = self.x_grid.n_x;
        let mut m = vec![0.0; n_x];
        for row in self.probabilities.chunks(n_x) {
            m.iter_mut().zip(row).for_each(|(a, b)| *a += b);
        }
        m
    }

    pub fn z_marginal(&self) -> Vec<f64> {
        self.probabilities.chunks(self.x_grid.n_x).map(|row| row.iter().sum()).collect()
    }

    pub fn x_mean(&self) -> f64 {
        moment_mean(&self.x_marginal(), &self.x_grid)
    }
}

/// Grid sizes for the augmented solve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FpkSettings {
    pub n_x: usize,
    pub n_z: usize,
    pub x_bounds: (f64, f64),
    /// `z_max = z_max_factor · T · max f̂` over the x grid and time.
    pub z_max_factor: f64,
}

impl FpkSettings {
    /// Bounds centred on the initial mean, wide enough for the
    /// exponentially tilted terminal law.
    pub fn default_for(model: &LQScalarModel, init: &InitialLaw, horizon: f64, n_x: usize, n_z: usize) -> Self {
        let spread = (init.variance() + model.sigma * model.sigma * horizon * (2.0 * model.a.max(0.0) * horizon).exp()).sqrt();
        let half = (10.0 * spread).max(4.0) + init.mean().abs();
        let c = init.mean();
        FpkSettings { n_x, n_z, x_bounds: (c - half, c + half), z_max_factor: 1.5 }
    }
}

/// Running-cost velocity `f̂(x) = ½(q + b²Π²/r) x²` of the closed loop
/// `v = −(b/r)Π x`.
fn z_speed_coef(model: &LQScalarModel, pi: f64) -> f64 {
    0.5 * (model.q + model.b * model.b * pi * pi / model.r)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FpkXzSolution {
    pub terminal: GridDensity2D,
    /// Total mass after every step, starting with the initial condition.
    pub mass_history: Vec<f64>,
    /// Smallest cell probability seen over the run.
    pub min_value: f64,
}

/// Augmented FPK in `(x, z)` under the closed loop `v = −(b/r)Π(t) x`.
pub fn solve_fpk_xz(
    model: &LQScalarModel,
    riccati: &RiccatiSolution,
    init: &InitialLaw,
    grid: &TimeGrid,
    settings: &FpkSettings,
) -> Result<FpkXzSolution> {
    let pi = riccati.pi_path()?;
    if riccati.grid.n_steps() != grid.n_steps() || riccati.grid.horizon() != grid.horizon() {
        return Err(Error::InvalidInput("Riccati solution lives on a different time grid".into()));
    }
    let x_grid = XGrid::new(settings.x_bounds.0, settings.x_bounds.1, settings.n_x)?;
    if settings.n_z < 2 {
        return Err(Error::InvalidInput("need at least 2 z levels".into()));
    }
    let n_x = x_grid.n_x;
    let n_z = settings.n_z;
    let dt = grid.dt();
    let sigma2 = model.sigma * model.sigma;
    let c = model.control_authority();

    let drift: Vec<f64> = pi.iter().map(|p| model.a - c * p).collect();
    let z_coef: Vec<f64> = pi.iter().map(|&p| z_speed_coef(model, p)).collect();
    let x_far = x_grid.max_abs_face();
    let max_z_speed = stats::max(&z_coef) * x_far * x_far;
    let z_max = if max_z_speed > 0.0 {
        settings.z_max_factor * grid.horizon() * max_z_speed
    } else {
        1.0
    };
    let dz = z_max / (n_z - 1) as f64;

    let max_x_speed = drift.iter().fold(0.0f64, |m, d| m.max(d.abs())) * x_far;
    check_cfl(dt, max_x_speed, sigma2, x_grid.dx())?;
    if dt * max_z_speed / dz > CFL_LIMIT {
        return Err(Error::CflViolation { dt, dt_required: CFL_LIMIT * dz / max_z_speed });
    }

    let mut p = vec![0.0; n_x * n_z];
    p[..n_x].copy_from_slice(&discretize_initial(init, &x_grid)?);
    let mut flux = vec![0.0; n_x - 1];
    let mut z_flux = vec![0.0; n_z];
    let mut mass_history = Vec::with_capacity(grid.n_nodes());
    mass_history.push(stats::sum(&p));
    let mut min_value = p.iter().copied().fold(f64::INFINITY, f64::min);
    // highest z level holding mass; levels above it are identically zero
    let mut top = 0usize;

    for k in 0..grid.n_steps() {
        for row in p.chunks_mut(n_x).take(top + 1) {
            x_sweep(row, &mut flux, &x_grid, drift[k], 0.5 * sigma2, dt);
        }
        if z_coef[k] > 0.0 {
            for i in 0..n_x {
                let w = z_coef[k] * x_grid.center(i).powi(2);
                if w == 0.0 {
                    continue;
                }
                for j in 0..n_z - 1 {
                    z_flux[j] = w * p[j * n_x + i] / dz;
                }
                p[i] -= dt * z_flux[0];
                for j in 1..n_z - 1 {
                    p[j * n_x + i] -= dt * (z_flux[j] - z_flux[j - 1]);
                }
                p[(n_z - 1) * n_x + i] += dt * z_flux[n_z - 2];
            }
            top = n_z - 1;
        }
        let boundary: f64 = p
            .chunks(n_x)
            .map(|row| row[0] + row[n_x - 1])
            .sum();
        check_leak(boundary)?;
        min_value = p.iter().copied().fold(min_value, f64::min);
        mass_history.push(stats::sum(&p));
    }

    Ok(FpkXzSolution {
        terminal: GridDensity2D { x_grid, n_z, dz, t: grid.horizon(), probabilities: p },
        mass_history,
        min_value,
    })
}

/// Time grid meeting both CFL limits (with a safety margin) for the
/// augmented solve.
pub fn fpk_time_grid(model: &LQScalarModel, risk: &RiskParams, horizon: f64, settings: &FpkSettings) -> Result<TimeGrid> {
    let probe = solve_scalar_riccati(model, risk, &TimeGrid::new(horizon, 1000)?, 0.0)?;
    let pi = probe.pi_path()?;
    let x_grid = XGrid::new(settings.x_bounds.0, settings.x_bounds.1, settings.n_x)?;
    let x_far = x_grid.max_abs_face();
    let c = model.control_authority();
    let max_x_speed = pi.iter().fold(0.0f64, |m, p| m.max((model.a - c * p).abs())) * x_far;
    let dx = x_grid.dx();
    let rate_x = max_x_speed / dx + model.sigma * model.sigma / (dx * dx);
    // the z limit is dt·max f̂/dz = dt·(n_z − 1)/(factor·T), independent of f̂
    let rate_z = (settings.n_z - 1) as f64 / (settings.z_max_factor * horizon);
    let rate = rate_x.max(rate_z);
    TimeGrid::with_max_step(horizon, 0.8 * CFL_LIMIT / rate)
}

/// Result of the terminal functional `∫∫ μ(x, z, T) e^{α(z + h(x, m̂))}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TerminalMoment {
    pub value: f64,
    /// Share of the integrand carried by x-boundary cells and the top z
    /// level.
    pub boundary_fraction: f64,
    pub truncation_warning: bool,
}

/// Log-integrand `α(z_j + h(x_i, m̂))` for every cell, z-major.
pub fn terminal_exponents(density: &GridDensity2D, model: &LQScalarModel, risk: &RiskParams) -> Vec<f64> {
    let x_mean = density.x_mean();
    let n_x = density.x_grid.n_x;
    (0..density.n_z)
        .flat_map(|j| {
            let z = density.z_node(j);
            (0..n_x).map(move |i| (i, z))
        })
        .map(|(i, z)| risk.alpha * (z + model.terminal_cost(density.x_grid.center(i), x_mean, risk.beta)))
        .collect()
}

/// Max-shifted quadrature of the terminal exponential moment.
pub fn terminal_exponential_moment(density: &GridDensity2D, model: &LQScalarModel, risk: &RiskParams) -> Result<TerminalMoment> {
    risk.require_positive_alpha()?;
    let expo = terminal_exponents(density, model, risk);
    let n_x = density.x_grid.n_x;
    let shift = expo
        .iter()
        .zip(&density.probabilities)
        .filter(|(_, p)| **p > 0.0)
        .map(|(e, _)| *e)
        .fold(f64::NEG_INFINITY, f64::max);
    if !shift.is_finite() {
        return Err(Error::InvalidInput("density carries no mass".into()));
    }
    let mut total = 0.0;
    let mut boundary = 0.0;
    for (idx, (e, p)) in expo.iter().zip(&density.probabilities).enumerate() {
        let w = p.max(0.0) * (e - shift).exp();
        total += w;
        let (i, j) = (idx % n_x, idx / n_x);
        if i == 0 || i == n_x - 1 || j == density.n_z - 1 {
            boundary += w;
        }
    }
    let boundary_fraction = boundary / total;
    Ok(TerminalMoment {
        value: shift.exp() * total,
        boundary_fraction,
        truncation_warning: boundary_fraction > TRUNCATION_TOLERANCE,
    })
}

/// `L¹` distance between two cell-probability vectors.
pub fn l1_distance(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum()
}
