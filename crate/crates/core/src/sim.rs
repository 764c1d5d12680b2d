//! Interacting-particle simulation of the augmented state `(x, z)`.
//!
//! `x` follows Euler–Maruyama, `z` accumulates the running cost by the
//! left-endpoint rule, and the law statistic is computed from the whole
//! ensemble at the start of each step. Each particle owns a ChaCha stream
//! keyed by `(master seed, particle index)`, so results do not depend on
//! how particles are split across threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{GenericModel, InitialLaw, LQScalarModel, Policy, RiskParams, TimeGrid};
use crate::stats::{self, ExpMoment, CHUNK};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SeedLineage {
    pub master_seed: u64,
    /// Particle `i` draws from stream `first_stream + i`.
    pub first_stream: u64,
}

impl SeedLineage {
    pub fn rng(&self, particle: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(self.first_stream + particle as u64);
        rng
    }
}

/// The ensemble at one grid node.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble {
    pub node: usize,
    pub t: f64,
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    pub seed_lineage: SeedLineage,
}

impl ParticleEnsemble {
    pub fn n_particles(&self) -> usize {
        self.x.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SummaryRow {
    pub t: f64,
    pub mean_x: f64,
    pub var_x: f64,
    pub mean_z: f64,
}

/// Which node snapshots to keep. Node 0 and the terminal node are always
/// kept.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Snapshots {
    All,
    Every(usize),
    TerminalOnly,
}

impl Snapshots {
    fn keeps(&self, k: usize, n: usize) -> bool {
        k == 0
            || k == n
            || match *self {
                Snapshots::All => true,
                Snapshots::Every(s) => s > 0 && k % s == 0,
                Snapshots::TerminalOnly => false,
            }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub n_particles: usize,
    pub seed: u64,
    pub snapshots: Snapshots,
}

impl SimConfig {
    pub fn new(n_particles: usize, seed: u64) -> Self {
        Self { n_particles, seed, snapshots: Snapshots::TerminalOnly }
    }

    pub fn with_snapshots(mut self, snapshots: Snapshots) -> Self {
        self.snapshots = snapshots;
        self
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub grid: TimeGrid,
    pub seed_lineage: SeedLineage,
    /// Recorded ensembles in increasing node order.
    pub snapshots: Vec<ParticleEnsemble>,
    /// Moments at every node.
    pub summary: Vec<SummaryRow>,
}

impl Trajectory {
    pub fn terminal(&self) -> Result<&ParticleEnsemble> {
        match self.snapshots.last() {
            Some(e) if e.node == self.grid.n_steps() && !e.x.is_empty() => Ok(e),
            _ => Err(Error::EmptyTrajectory),
        }
    }
}

fn initial_state(init: &InitialLaw, rng: &mut ChaCha8Rng) -> f64 {
    match init {
        InitialLaw::Dirac { x0 } => *x0,
        InitialLaw::Gaussian { mean, variance } => {
            let xi: f64 = rng.sample(StandardNormal);
            mean + variance.sqrt() * xi
        }
        InitialLaw::Samples { values } => values[rng.random_range(0..values.len())],
    }
}

fn summarize(t: f64, x: &[f64], z: &[f64]) -> SummaryRow {
    SummaryRow { t, mean_x: stats::mean(x), var_x: stats::variance(x), mean_z: stats::mean(z) }
}

fn first_non_finite(x: &[f64], z: &[f64]) -> Option<usize> {
    x.iter().zip(z).position(|(a, b)| !a.is_finite() || !b.is_finite())
}

/// Simulates `n_particles` copies of the controlled McKean–Vlasov system.
pub fn simulate_particles(
    model: &GenericModel,
    policy: &Policy,
    init: &InitialLaw,
    grid: &TimeGrid,
    config: &SimConfig,
) -> Result<Trajectory> {
    let n = config.n_particles;
    if n < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 particles, got {n}")));
    }
    init.validate()?;
    policy.check_grid(grid)?;

    let lineage = SeedLineage { master_seed: config.seed, first_stream: 0 };
    let mut rngs: Vec<ChaCha8Rng> = (0..n).map(|i| lineage.rng(i)).collect();
    let mut x: Vec<f64> = rngs.par_iter_mut().map(|rng| initial_state(init, rng)).collect();
    let mut z = vec![0.0; n];

    let steps = grid.n_steps();
    let dt = grid.dt();
    let sqrt_dt = dt.sqrt();
    let mut snapshots = Vec::new();
    let mut summary = Vec::with_capacity(steps + 1);
    let snap = |k: usize, x: &[f64], z: &[f64]| ParticleEnsemble {
        node: k,
        t: grid.node(k),
        x: x.to_vec(),
        z: z.to_vec(),
        seed_lineage: lineage,
    };

    summary.push(summarize(0.0, &x, &z));
    if config.snapshots.keeps(0, steps) {
        snapshots.push(snap(0, &x, &z));
    }

    for k in 0..steps {
        let t = grid.node(k);
        let stat = model.law_stat.evaluate(&x);
        x.par_chunks_mut(CHUNK)
            .zip(z.par_chunks_mut(CHUNK))
            .zip(rngs.par_chunks_mut(CHUNK))
            .for_each(|((xc, zc), rc)| {
                for ((xi, zi), rng) in xc.iter_mut().zip(zc.iter_mut()).zip(rc.iter_mut()) {
                    let xi0 = *xi;
                    let v = policy.control(k, t, xi0, *zi, stat);
                    let xi_noise: f64 = rng.sample(StandardNormal);
                    *zi += (model.f)(xi0, stat, v) * dt;
                    *xi = xi0 + (model.g)(xi0, stat, v) * dt + (model.sigma)(xi0) * sqrt_dt * xi_noise;
                }
            });
        if let Some(particle) = first_non_finite(&x, &z) {
            return Err(Error::NonFiniteState { step: k + 1, particle });
        }
        summary.push(summarize(grid.node(k + 1), &x, &z));
        if config.snapshots.keeps(k + 1, steps) {
            snapshots.push(snap(k + 1, &x, &z));
        }
    }

    Ok(Trajectory { grid: *grid, seed_lineage: lineage, snapshots, summary })
}

/// [`simulate_particles`] for the scalar LQ model with terminal cost
/// `½ q_T x² + β·mean(x)`.
pub fn simulate_lq(
    model: &LQScalarModel,
    risk: &RiskParams,
    policy: &Policy,
    init: &InitialLaw,
    grid: &TimeGrid,
    config: &SimConfig,
) -> Result<Trajectory> {
    simulate_particles(&model.to_generic(risk.beta), policy, init, grid, config)
}

/// Monte Carlo estimate of `J^α = E exp(α C)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CostEstimate {
    pub j_alpha: f64,
    pub log_j_alpha: f64,
    /// `log_j_alpha / alpha`.
    pub certainty_equivalent: f64,
    /// Standard error of `j_alpha`.
    pub std_error: f64,
    pub n: usize,
}

impl CostEstimate {
    /// From a sample of accumulated costs `C_i = z_i(T) + h(x_i(T), stat)`.
    pub fn from_costs(costs: &[f64], alpha: f64) -> Result<Self> {
        if costs.is_empty() {
            return Err(Error::EmptyTrajectory);
        }
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidInput(format!("alpha must be > 0, got {alpha}")));
        }
        let exponents: Vec<f64> = costs.iter().map(|c| alpha * c).collect();
        Ok(Self::from_moment(&stats::exp_moment(&exponents), alpha))
    }

    fn from_moment(m: &ExpMoment, alpha: f64) -> Self {
        let log_j = m.log_value();
        CostEstimate {
            j_alpha: m.value(),
            log_j_alpha: log_j,
            certainty_equivalent: log_j / alpha,
            std_error: m.std_error(),
            n: m.n,
        }
    }
}

/// Per-particle accumulated cost `z(T) + h(x(T), stat(T))`, with the law
/// statistic taken from the terminal ensemble.
pub fn terminal_costs(traj: &Trajectory, model: &GenericModel) -> Result<Vec<f64>> {
    let term = traj.terminal()?;
    let stat = model.law_stat.evaluate(&term.x);
    Ok(term.x.iter().zip(&term.z).map(|(&x, &z)| z + (model.h)(x, stat)).collect())
}

pub fn estimate_risk_sensitive_cost(traj: &Trajectory, model: &GenericModel, risk: &RiskParams) -> Result<CostEstimate> {
    risk.require_positive_alpha()?;
    CostEstimate::from_costs(&terminal_costs(traj, model)?, risk.alpha)
}

/// `χ(0) = α E[φ_T]` with `φ_T = exp(α(z(T) + h))`.
pub fn estimate_chi0(traj: &Trajectory, model: &GenericModel, risk: &RiskParams) -> Result<f64> {
    Ok(risk.alpha * estimate_risk_sensitive_cost(traj, model, risk)?.j_alpha)
}

/// `χ(0)·E[χ⁻¹(t)]` on every node under the zeroth-order rule
/// `E[χ⁻¹(t)] ≈ 1/χ(0)`, i.e. the constant path 1.
///
/// By Jensen the true ratio is at least 1, so this is a lower bound. It is
/// exact when the dynamics carry no noise.
pub fn estimate_chi_inverse_path(traj: &Trajectory, _model: &GenericModel, _risk: &RiskParams) -> Vec<f64> {
    vec![1.0; traj.grid.n_nodes()]
}
