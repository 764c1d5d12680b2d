//! Risk-sensitive mean-field-type control.
//!
//! The crate provides the numerical pieces needed to compute and
//! cross-check risk-sensitive values `J^α = E exp(α[∫f dt + h])` for
//! McKean–Vlasov dynamics:
//!
//! - [`riccati`]: backward Riccati solves (matrix LEQG, scalar mean-field
//!   pair `π, ω`, the mean path) with blow-up detection;
//! - [`hamiltonian`]: augmented Hamiltonians and their `χ`-reduction;
//! - [`sim`]: particle Monte Carlo on the augmented state `(x, z)`;
//! - [`fpk`]: finite-volume Fokker–Planck solvers in `x` and `(x, z)`;
//! - [`lq_value`]: the closed-form and small-`β` value pipeline;
//! - [`validation`]: martingale, positivity, `α → 0` and three-route checks;
//! - [`io`]: CSV, JSON-line and binary artifacts.
//!
//! Costs follow the half convention `f = ½(q x² + r v²)`,
//! `h = ½ q_T x² + β·mean(x)`, so the scalar Riccati equation reads
//! `π' = −2aπ + (b²/r − ασ²)π² − q`.

pub mod error;
pub mod fpk;
pub mod hamiltonian;
pub mod io;
pub mod lq_value;
pub mod model;
pub mod riccati;
pub mod sim;
pub mod stats;
pub mod validation;

pub use error::{Error, Result};
pub use model::{
    risk_seeking_transform, validate_model, GenericModel, InitialLaw, LQMatrixModel, LQModelRef, LQScalarModel,
    LawStatistic, Policy, RiskParams, TimeGrid, ValidationOutcome,
};
pub use fpk::{FpkSettings, GridDensity2D, XGrid};
pub use lq_value::{ChiCorrection, MFLQSolution, McSettings, Routes, Scenario, ValueReport, ValueSource};
pub use riccati::{BlowUp, RiccatiSolution};
pub use sim::{CostEstimate, SimConfig, Snapshots, Trajectory};
pub use validation::CheckReport;
