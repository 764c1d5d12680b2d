//! Hamiltonians of the augmented problem.
//!
//! The augmented Hamiltonian is `H̃(x, stat, q, ρ) = inf_v { ρ f + q g }`
//! where `(q, ρ)` stand for `(D_x u, D_z u)`. For `ρ > 0` it reduces to the
//! risk-neutral one through `H̃(x, stat, q, ρ) = ρ H(x, stat, q / ρ)`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{GenericModel, LQScalarModel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HamiltonianResult {
    pub value: f64,
    pub v_star: f64,
}

fn check_rho(rho: f64) -> Result<()> {
    if rho > 0.0 && rho.is_finite() {
        Ok(())
    } else {
        Err(Error::NonpositiveRho(rho))
    }
}

/// Closed form for `f = ½(q_c x² + r v²)`, `g = a x + b v`:
/// `v* = −(b/r) q/ρ`, value `ρ·½q_c x² + a x q − ½(b²/r) q²/ρ`.
pub fn lq_hamiltonian(model: &LQScalarModel, x: f64, q: f64, rho: f64) -> Result<HamiltonianResult> {
    check_rho(rho)?;
    let v_star = -(model.b / model.r) * q / rho;
    let value = rho * 0.5 * model.q * x * x + model.a * x * q
        - 0.5 * model.control_authority() * q * q / rho;
    Ok(HamiltonianResult { value, v_star })
}

const SEED_POINTS: usize = 16;
const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Prefers the lower objective; exact ties go to the smaller `|v|`.
fn better(a: (f64, f64), b: (f64, f64)) -> bool {
    a.1 < b.1 || (a.1 == b.1 && a.0.abs() < b.0.abs())
}

/// Minimizes `v ↦ ρ f(x, stat, v) + q g(x, stat, v)` over `v_bounds`.
///
/// A 16-point scan picks the best seed, then golden-section search runs in
/// the bracket formed by its neighbours until the bracket is below `tol`.
pub fn numeric_hamiltonian(
    model: &GenericModel,
    x: f64,
    stat: f64,
    q: f64,
    rho: f64,
    v_bounds: (f64, f64),
    tol: f64,
) -> Result<HamiltonianResult> {
    check_rho(rho)?;
    let (lo, hi) = v_bounds;
    if !(lo.is_finite() && hi.is_finite() && hi > lo) {
        return Err(Error::EmptyBounds { lo, hi });
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidInput(format!("tol must be > 0, got {tol}")));
    }
    let objective = |v: f64| rho * (model.f)(x, stat, v) + q * (model.g)(x, stat, v);

    let step = (hi - lo) / (SEED_POINTS - 1) as f64;
    let seed = |i: usize| if i == SEED_POINTS - 1 { hi } else { lo + i as f64 * step };
    let mut best_i = 0;
    let mut best = (lo, objective(lo));
    for i in 1..SEED_POINTS {
        let v = seed(i);
        let cand = (v, objective(v));
        if better(cand, best) {
            best = cand;
            best_i = i;
        }
    }

    let mut a = seed(best_i.saturating_sub(1));
    let mut b = seed((best_i + 1).min(SEED_POINTS - 1));
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = objective(c);
    let mut fd = objective(d);
    while (b - a).abs() > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = objective(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = objective(d);
        }
    }
    let mid = 0.5 * (a + b);
    let refined = (mid, objective(mid));
    let (v_star, value) = if better(refined, best) || refined.1 == best.1 { refined } else { best };
    Ok(HamiltonianResult { value, v_star })
}

/// `ρ · H(x, stat, q/ρ)`.
pub fn tilde_reduce<H>(h: H, x: f64, stat: f64, q: f64, rho: f64) -> Result<f64>
where
    H: Fn(f64, f64, f64) -> f64,
{
    check_rho(rho)?;
    Ok(rho * h(x, stat, q / rho))
}
