//! Backward Riccati integration for the LEQG and mean-field LQ problems.
//!
//! Matrix form, integrated from `Π(T) = Q_T`:
//!
//! ```text
//! Π' = −ΠA − AᵀΠ + Π(BR⁻¹Bᵀ − α ΣΣᵀ)Π − Q
//! ```
//!
//! The scalar form is the 1x1 case plus an optional `−αβσ²γ` forcing term.
//! Both use classical RK4 on the uniform grid and flag a blow-up as soon as
//! an entry exceeds [`BLOW_UP_THRESHOLD`] or stops being finite.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{LQMatrixModel, LQScalarModel, RiskParams, TimeGrid};

pub const BLOW_UP_THRESHOLD: f64 = 1e8;

/// Finite escape time of a backward Riccati solve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BlowUp {
    /// First node (scanning backward from `T`) whose value exceeded the
    /// threshold.
    pub node: usize,
    pub t_node: f64,
    /// Escape time from linear extrapolation of `1/‖Π‖` through the last
    /// two finite nodes.
    pub t_estimate: f64,
}

/// Time-sampled Riccati solution. Matrix samples are stored row-major,
/// `dim²` entries per node. Nodes at or before a blow-up hold `NaN`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RiccatiSolution {
    pub grid: TimeGrid,
    pub dim: usize,
    pub pi: Vec<f64>,
    pub rho: Vec<f64>,
    pub omega: Option<Vec<f64>>,
    pub blow_up: Option<BlowUp>,
}

impl RiccatiSolution {
    pub fn is_usable(&self) -> bool {
        self.blow_up.is_none()
    }

    /// Errors with [`Error::BlowUpInput`] when the solution is unusable.
    pub fn require_usable(&self) -> Result<()> {
        match self.blow_up {
            None => Ok(()),
            Some(b) => Err(Error::BlowUpInput { t: b.t_node }),
        }
    }

    /// Scalar samples `π(t_k)`, available only for usable 1x1 solutions.
    pub fn pi_path(&self) -> Result<&[f64]> {
        self.require_usable()?;
        if self.dim != 1 {
            return Err(Error::InvalidInput("scalar path requested from a matrix solution".into()));
        }
        Ok(&self.pi)
    }

    pub fn pi_matrix(&self, k: usize) -> Option<DMatrix<f64>> {
        if self.blow_up.is_some_and(|b| k <= b.node) {
            return None;
        }
        let d2 = self.dim * self.dim;
        Some(DMatrix::from_row_slice(self.dim, self.dim, &self.pi[k * d2..(k + 1) * d2]))
    }

    /// Feedback gain `(b/r) π(t)` at every node.
    pub fn feedback_gain(&self, model: &LQScalarModel) -> Result<Vec<f64>> {
        let ratio = model.b / model.r;
        Ok(self.pi_path()?.iter().map(|p| ratio * p).collect())
    }

    /// Attaches `ω` computed by [`solve_omega`].
    pub fn with_omega(mut self, model: &LQScalarModel) -> Result<Self> {
        self.omega = Some(solve_omega(&self, model)?);
        Ok(self)
    }
}

fn check_finite(vals: &[f64], what: &str) -> Result<()> {
    if vals.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteInput(what.into()))
    }
}

/// Shared backward sweep. `step` advances the flattened state by `h`
/// (negative), `trace_a` gives `tr(aΠ)` for the ρ quadrature.
fn integrate_backward<S, T>(grid: TimeGrid, dim: usize, terminal: Vec<f64>, step: S, trace_a: T) -> RiccatiSolution
where
    S: Fn(&[f64], f64) -> Vec<f64>,
    T: Fn(&[f64]) -> f64,
{
    let n = grid.n_steps();
    let d2 = dim * dim;
    let dt = grid.dt();
    let mut pi = vec![f64::NAN; (n + 1) * d2];
    let mut rho = vec![f64::NAN; n + 1];
    pi[n * d2..].copy_from_slice(&terminal);
    rho[n] = 0.0;

    let norm = |p: &[f64]| p.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut state = terminal;
    let mut tr_next = trace_a(&state);
    let mut blow_up = None;

    for k in (0..n).rev() {
        let next = step(&state, -dt);
        let size = norm(&next);
        if !size.is_finite() || next.iter().any(|v| !v.is_finite()) || size > BLOW_UP_THRESHOLD {
            let t_node = grid.node(k);
            let s1 = 1.0 / norm(&pi[(k + 1) * d2..(k + 2) * d2]);
            let t_estimate = if k + 2 <= n {
                let s2 = 1.0 / norm(&pi[(k + 2) * d2..(k + 3) * d2]);
                let (t1, t2) = (grid.node(k + 1), grid.node(k + 2));
                // 1/‖Π‖ is linear in t near a quadratic escape
                if s2 != s1 {
                    t1 - s1 * (t1 - t2) / (s1 - s2)
                } else {
                    t_node
                }
            } else {
                t_node
            };
            blow_up = Some(BlowUp { node: k, t_node, t_estimate });
            break;
        }
        let tr = trace_a(&next);
        rho[k] = rho[k + 1] + 0.25 * dt * (tr + tr_next);
        tr_next = tr;
        pi[k * d2..(k + 1) * d2].copy_from_slice(&next);
        state = next;
    }

    RiccatiSolution { grid, dim, pi, rho, omega: None, blow_up }
}

fn rk4<F>(y: &[f64], h: f64, f: F) -> Vec<f64>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let axpy = |a: &[f64], s: f64, b: &[f64]| a.iter().zip(b).map(|(x, y)| x + s * y).collect::<Vec<_>>();
    let k1 = f(y);
    let k2 = f(&axpy(y, 0.5 * h, &k1));
    let k3 = f(&axpy(y, 0.5 * h, &k2));
    let k4 = f(&axpy(y, h, &k3));
    y.iter()
        .enumerate()
        .map(|(i, v)| v + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect()
}

/// Matrix LEQG Riccati with `Π ← ½(Π + Πᵀ)` after every step.
pub fn solve_matrix_riccati(model: &LQMatrixModel, risk: &RiskParams, grid: &TimeGrid) -> Result<RiccatiSolution> {
    let n = model.state_dim();
    for m in [model.A(), model.B(), model.Q(), model.R(), model.QT(), model.Sigma()] {
        check_finite(m.as_slice(), "matrix model")?;
    }
    check_finite(&[risk.alpha], "alpha")?;
    let r_inv = model
        .R()
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::InvalidInput("R is singular".into()))?;
    let s = model.B() * r_inv * model.B().transpose() - model.a_diff() * risk.alpha;
    let a = model.A().clone();
    let q = model.Q().clone();
    let a_diff = model.a_diff().clone();

    let to_mat = |v: &[f64]| DMatrix::from_row_slice(n, n, v);
    let to_vec = |m: &DMatrix<f64>| -> Vec<f64> { m.transpose().as_slice().to_vec() };

    let rhs = |v: &[f64]| {
        let p = to_mat(v);
        let d = -(&p * &a) - a.transpose() * &p + &p * &s * &p - &q;
        to_vec(&d)
    };
    let step = |v: &[f64], h: f64| {
        let next = to_mat(&rk4(v, h, rhs));
        to_vec(&((&next + next.transpose()) * 0.5))
    };
    let trace_a = |v: &[f64]| (&a_diff * to_mat(v)).trace();

    let qt = model.QT();
    let terminal = to_vec(&((qt + qt.transpose()) * 0.5));
    Ok(integrate_backward(*grid, n, terminal, step, trace_a))
}

/// Scalar Riccati
/// `π' = −2aπ + (b²/r − ασ²)π² − q − αβσ²γ`, `π(T) = q_T`.
///
/// `gamma = 0` recovers the 1x1 case of the matrix equation. The
/// `γ` forcing is experimental: its meaning is not pinned down.
pub fn solve_scalar_riccati(
    model: &LQScalarModel,
    risk: &RiskParams,
    grid: &TimeGrid,
    gamma: f64,
) -> Result<RiccatiSolution> {
    check_finite(
        &[model.a, model.b, model.sigma, model.r, model.q, model.q_t, risk.alpha, risk.beta, gamma],
        "scalar model",
    )?;
    if model.r <= 0.0 {
        return Err(Error::InvalidInput("r must be > 0".into()));
    }
    let s2 = model.sigma * model.sigma;
    let quad = model.control_authority() - risk.alpha * s2;
    let forcing = -model.q - risk.alpha * risk.beta * s2 * gamma;
    let a = model.a;
    let f = move |p: f64| -2.0 * a * p + quad * p * p + forcing;
    let step = move |v: &[f64], h: f64| {
        let p = v[0];
        let k1 = f(p);
        let k2 = f(p + 0.5 * h * k1);
        let k3 = f(p + 0.5 * h * k2);
        let k4 = f(p + h * k3);
        vec![p + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)]
    };
    Ok(integrate_backward(*grid, 1, vec![model.q_t], step, move |v| s2 * v[0]))
}

/// `ω(t) = exp(∫_t^T (a − (b²/r)π(s)) ds)` by the trapezoidal rule.
pub fn solve_omega(riccati: &RiccatiSolution, model: &LQScalarModel) -> Result<Vec<f64>> {
    let pi = riccati.pi_path()?;
    let grid = riccati.grid;
    let dt = grid.dt();
    let c = model.control_authority();
    let integrand: Vec<f64> = pi.iter().map(|p| model.a - c * p).collect();
    let n = grid.n_steps();
    let mut omega = vec![1.0; n + 1];
    let mut acc = 0.0;
    for k in (0..n).rev() {
        acc += 0.5 * dt * (integrand[k] + integrand[k + 1]);
        omega[k] = acc.exp();
    }
    Ok(omega)
}

/// Optional correction term of the mean ODE.
#[derive(Debug, Clone, PartialEq)]
pub enum MeanCorrection {
    None,
    /// Adds `−β (b²/r) ω(t) c(t)` with `c(t) ≈ χ(0)·E[χ⁻¹(t)]`.
    ChiRatio { beta: f64, ratio: Vec<f64> },
}

/// Mean path `y' = (a − (b²/r)π) y [− β (b²/r) ω c]`, `y(0) = x̄₀`,
/// integrated forward by RK4. Midpoint coefficients are interpolated
/// linearly between nodes.
pub fn solve_mean_ode(
    riccati: &RiccatiSolution,
    model: &LQScalarModel,
    x0_mean: f64,
    correction: &MeanCorrection,
) -> Result<Vec<f64>> {
    let pi = riccati.pi_path()?;
    let grid = riccati.grid;
    let n = grid.n_steps();
    let dt = grid.dt();
    let c = model.control_authority();
    let gain: Vec<f64> = pi.iter().map(|p| model.a - c * p).collect();

    let forcing: Vec<f64> = match correction {
        MeanCorrection::None => vec![0.0; n + 1],
        MeanCorrection::ChiRatio { beta, ratio } => {
            if ratio.len() != n + 1 {
                return Err(Error::InvalidInput("chi ratio path length does not match the grid".into()));
            }
            let omega = match &riccati.omega {
                Some(o) => o.clone(),
                None => solve_omega(riccati, model)?,
            };
            omega.iter().zip(ratio).map(|(w, r)| -beta * c * w * r).collect()
        }
    };

    let mut y = vec![0.0; n + 1];
    y[0] = x0_mean;
    for k in 0..n {
        let (g0, g1) = (gain[k], gain[k + 1]);
        let (f0, f1) = (forcing[k], forcing[k + 1]);
        let gm = 0.5 * (g0 + g1);
        let fm = 0.5 * (f0 + f1);
        let yk = y[k];
        let k1 = g0 * yk + f0;
        let k2 = gm * (yk + 0.5 * dt * k1) + fm;
        let k3 = gm * (yk + 0.5 * dt * k2) + fm;
        let k4 = g1 * (yk + dt * k3) + f1;
        y[k + 1] = yk + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    Ok(y)
}
