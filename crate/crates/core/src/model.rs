//! Domain types shared by the numerical modules.
//!
//! Quadratic costs follow the half convention throughout:
//! running cost `f = ½(xᵀQx + vᵀRv)` and terminal cost `h = ½xᵀQ_T x`
//! (plus `β·E[x(T)]` in the scalar mean-field problem). With this
//! convention the ansatz `u = exp(α(z + ½xᵀΠx + ρ))` turns the dual
//! HJB into
//!
//! ```text
//! Π' + ΠA + AᵀΠ − Π(BR⁻¹Bᵀ − αΣΣᵀ)Π + Q = 0,   Π(T) = Q_T,
//! ρ(t) = ½ ∫_t^T tr(ΣΣᵀ Π(s)) ds.
//! ```
//!
//! Dropping the halves would double the `α` coefficient in front of the
//! diffusion term, which is why the half convention is used everywhere.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Risk-sensitivity index `alpha` and mean-field weight `beta`.
///
/// `alpha > 0` is risk averse. Risk-seeking problems are handled by
/// [`risk_seeking_transform`] followed by `|alpha|`. The Riccati solvers
/// also accept `alpha = 0` (see [`RiskParams::risk_neutral`]) to produce
/// risk-neutral baselines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RiskParams {
    pub alpha: f64,
    #[serde(default)]
    pub beta: f64,
}

impl RiskParams {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::InvalidInput(format!("alpha must be > 0, got {alpha}")));
        }
        if !beta.is_finite() {
            return Err(Error::NonFiniteInput("beta".into()));
        }
        Ok(Self { alpha, beta })
    }

    /// `alpha = 0`; only meaningful for the Riccati solvers.
    pub fn risk_neutral(beta: f64) -> Self {
        Self { alpha: 0.0, beta }
    }

    pub(crate) fn require_positive_alpha(&self) -> Result<()> {
        if self.alpha.is_finite() && self.alpha > 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("alpha must be > 0, got {}", self.alpha)))
        }
    }
}

/// Scalar linear-quadratic model
/// `dx = (a x + b v) dt + σ dw`, `f = ½(q x² + r v²)`, `h = ½ q_T x²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LQScalarModel {
    pub a: f64,
    pub b: f64,
    pub sigma: f64,
    #[serde(default = "one")]
    pub r: f64,
    #[serde(default)]
    pub q: f64,
    #[serde(rename = "qT", default = "one")]
    pub q_t: f64,
}

fn one() -> f64 {
    1.0
}

impl LQScalarModel {
    /// `r = 1, q = 0, q_T = 1`: the mean-field example problem.
    pub fn new(a: f64, b: f64, sigma: f64) -> Self {
        Self { a, b, sigma, r: 1.0, q: 0.0, q_t: 1.0 }
    }

    /// `b²/r`, the control authority entering every Riccati equation.
    pub fn control_authority(&self) -> f64 {
        self.b * self.b / self.r
    }

    /// Running cost `½(q x² + r v²)`.
    pub fn running_cost(&self, x: f64, v: f64) -> f64 {
        0.5 * (self.q * x * x + self.r * v * v)
    }

    /// Terminal cost `½ q_T x² + β·stat`.
    pub fn terminal_cost(&self, x: f64, stat: f64, beta: f64) -> f64 {
        0.5 * self.q_t * x * x + beta * stat
    }

    /// The same problem expressed through callbacks, with the empirical
    /// mean as the law statistic.
    pub fn to_generic(&self, beta: f64) -> GenericModel {
        let m = *self;
        GenericModel::new(
            move |x, _stat, v| m.running_cost(x, v),
            move |x, _stat, v| m.a * x + m.b * v,
            move |_x| m.sigma,
            move |x, stat| m.terminal_cost(x, stat, beta),
        )
        .with_law_stat(LawStatistic::Mean)
    }

    fn is_finite(&self) -> bool {
        [self.a, self.b, self.sigma, self.r, self.q, self.q_t]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Matrix LEQG model. The diffusion matrix `a = ΣΣᵀ` is always
/// recomputed from `Σ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MatrixModelRepr", into = "MatrixModelRepr")]
pub struct LQMatrixModel {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    q_t: DMatrix<f64>,
    sigma: DMatrix<f64>,
    a_diff: DMatrix<f64>,
}

#[allow(non_snake_case)]
impl LQMatrixModel {
    /// Checks only shapes; definiteness is reported by [`validate_model`].
    pub fn new(
        A: DMatrix<f64>,
        B: DMatrix<f64>,
        Q: DMatrix<f64>,
        R: DMatrix<f64>,
        QT: DMatrix<f64>,
        Sigma: DMatrix<f64>,
    ) -> Result<Self> {
        let n = A.nrows();
        let d = B.ncols();
        let shape_err = |name: &str, m: &DMatrix<f64>, r: usize, c: usize| {
            Error::InvalidInput(format!(
                "{name} has shape {}x{}, expected {r}x{c}",
                m.nrows(),
                m.ncols()
            ))
        };
        if n == 0 || A.ncols() != n {
            return Err(shape_err("A", &A, n.max(1), n.max(1)));
        }
        if B.nrows() != n || d == 0 {
            return Err(shape_err("B", &B, n, d.max(1)));
        }
        for (name, m, r, c) in [
            ("Q", &Q, n, n),
            ("R", &R, d, d),
            ("QT", &QT, n, n),
            ("Sigma", &Sigma, n, n),
        ] {
            if m.nrows() != r || m.ncols() != c {
                return Err(shape_err(name, m, r, c));
            }
        }
        let a_diff = &Sigma * Sigma.transpose();
        Ok(Self { a: A, b: B, q: Q, r: R, q_t: QT, sigma: Sigma, a_diff })
    }

    /// Embeds a scalar model as a 1x1 matrix model.
    pub fn from_scalar(m: &LQScalarModel) -> Self {
        let s = |v: f64| DMatrix::from_element(1, 1, v);
        Self::new(s(m.a), s(m.b), s(m.q), s(m.r), s(m.q_t), s(m.sigma))
            .expect("1x1 shapes are consistent")
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }
    pub fn control_dim(&self) -> usize {
        self.b.ncols()
    }
    pub fn A(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn B(&self) -> &DMatrix<f64> {
        &self.b
    }
    pub fn Q(&self) -> &DMatrix<f64> {
        &self.q
    }
    pub fn R(&self) -> &DMatrix<f64> {
        &self.r
    }
    pub fn QT(&self) -> &DMatrix<f64> {
        &self.q_t
    }
    pub fn Sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }
    /// `ΣΣᵀ`.
    pub fn a_diff(&self) -> &DMatrix<f64> {
        &self.a_diff
    }

    fn is_finite(&self) -> bool {
        [&self.a, &self.b, &self.q, &self.r, &self.q_t, &self.sigma]
            .iter()
            .all(|m| m.iter().all(|v| v.is_finite()))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[allow(non_snake_case)]
struct MatrixModelRepr {
    A: Vec<Vec<f64>>,
    B: Vec<Vec<f64>>,
    Q: Vec<Vec<f64>>,
    R: Vec<Vec<f64>>,
    QT: Vec<Vec<f64>>,
    Sigma: Vec<Vec<f64>>,
}

/// Row-major nested vectors to a dense matrix.
pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if nrows == 0 || ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::InvalidInput("matrix rows must be non-empty and of equal length".into()));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

impl TryFrom<MatrixModelRepr> for LQMatrixModel {
    type Error = Error;
    fn try_from(r: MatrixModelRepr) -> Result<Self> {
        LQMatrixModel::new(
            matrix_from_rows(&r.A)?,
            matrix_from_rows(&r.B)?,
            matrix_from_rows(&r.Q)?,
            matrix_from_rows(&r.R)?,
            matrix_from_rows(&r.QT)?,
            matrix_from_rows(&r.Sigma)?,
        )
    }
}

impl From<LQMatrixModel> for MatrixModelRepr {
    fn from(m: LQMatrixModel) -> Self {
        MatrixModelRepr {
            A: matrix_to_rows(&m.a),
            B: matrix_to_rows(&m.b),
            Q: matrix_to_rows(&m.q),
            R: matrix_to_rows(&m.r),
            QT: matrix_to_rows(&m.q_t),
            Sigma: matrix_to_rows(&m.sigma),
        }
    }
}

/// Uniform grid `t_k = k·T/n_steps`, `k = 0..=n_steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridRepr", into = "GridRepr")]
pub struct TimeGrid {
    horizon: f64,
    n_steps: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridRepr {
    #[serde(rename = "T")]
    horizon: f64,
    n_steps: usize,
}

impl TryFrom<GridRepr> for TimeGrid {
    type Error = Error;
    fn try_from(r: GridRepr) -> Result<Self> {
        TimeGrid::new(r.horizon, r.n_steps)
    }
}

impl From<TimeGrid> for GridRepr {
    fn from(g: TimeGrid) -> Self {
        GridRepr { horizon: g.horizon, n_steps: g.n_steps }
    }
}

impl TimeGrid {
    pub fn new(horizon: f64, n_steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidInput(format!("horizon must be > 0, got {horizon}")));
        }
        if n_steps < 2 {
            return Err(Error::InvalidInput(format!("n_steps must be >= 2, got {n_steps}")));
        }
        Ok(Self { horizon, n_steps })
    }

    /// Grid with step at most `dt_max`.
    pub fn with_max_step(horizon: f64, dt_max: f64) -> Result<Self> {
        let n = (horizon / dt_max).ceil().max(2.0) as usize;
        Self::new(horizon, n)
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }
    pub fn n_steps(&self) -> usize {
        self.n_steps
    }
    pub fn n_nodes(&self) -> usize {
        self.n_steps + 1
    }
    pub fn dt(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }

    /// Computed from the index, never accumulated.
    pub fn node(&self, k: usize) -> f64 {
        if k == self.n_steps {
            self.horizon
        } else {
            k as f64 * self.horizon / self.n_steps as f64
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.n_steps).map(|k| self.node(k))
    }

    /// Nearest node index for a time in `[0, T]`.
    pub fn index_of(&self, t: f64) -> usize {
        let k = (t / self.dt()).round();
        (k.max(0.0) as usize).min(self.n_steps)
    }
}

/// Law of `x(0)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialLaw {
    Gaussian { mean: f64, variance: f64 },
    Dirac { x0: f64 },
    Samples { values: Vec<f64> },
}

impl InitialLaw {
    pub fn validate(&self) -> Result<()> {
        match self {
            InitialLaw::Gaussian { mean, variance } => {
                if !mean.is_finite() || !variance.is_finite() {
                    return Err(Error::NonFiniteInput("initial law".into()));
                }
                if *variance < 0.0 {
                    return Err(Error::InvalidInput("initial variance must be >= 0".into()));
                }
            }
            InitialLaw::Dirac { x0 } => {
                if !x0.is_finite() {
                    return Err(Error::NonFiniteInput("initial law".into()));
                }
            }
            InitialLaw::Samples { values } => {
                if values.is_empty() {
                    return Err(Error::InvalidInput("initial samples must be non-empty".into()));
                }
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFiniteInput("initial samples".into()));
                }
            }
        }
        Ok(())
    }

    pub fn mean(&self) -> f64 {
        match self {
            InitialLaw::Gaussian { mean, .. } => *mean,
            InitialLaw::Dirac { x0 } => *x0,
            InitialLaw::Samples { values } => values.iter().sum::<f64>() / values.len() as f64,
        }
    }

    pub fn variance(&self) -> f64 {
        match self {
            InitialLaw::Gaussian { variance, .. } => *variance,
            InitialLaw::Dirac { .. } => 0.0,
            InitialLaw::Samples { values } => {
                let m = self.mean();
                values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / values.len() as f64
            }
        }
    }
}

pub type ControlFn = Arc<dyn Fn(f64, f64, f64, f64) -> f64 + Send + Sync>;

/// Feedback policy `v(t, x, z)`, possibly depending on the law statistic.
#[derive(Clone)]
pub enum Policy {
    /// `v = −k(t) x`, one gain per grid node.
    LinearGain(Vec<f64>),
    /// `v = −k(t) x − c(t)`.
    AffineMeanField { gain: Vec<f64>, offset: Vec<f64> },
    /// `(t, x, z, stat) ↦ v`.
    Callback(ControlFn),
}

impl fmt::Debug for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Policy::LinearGain(k) => f.debug_tuple("LinearGain").field(&k.len()).finish(),
            Policy::AffineMeanField { gain, .. } => {
                f.debug_struct("AffineMeanField").field("nodes", &gain.len()).finish()
            }
            Policy::Callback(_) => f.write_str("Callback(..)"),
        }
    }
}

impl Policy {
    pub fn zero(grid: &TimeGrid) -> Self {
        Policy::LinearGain(vec![0.0; grid.n_nodes()])
    }

    pub fn check_grid(&self, grid: &TimeGrid) -> Result<()> {
        let n = grid.n_nodes();
        let bad = match self {
            Policy::LinearGain(k) => k.len() != n,
            Policy::AffineMeanField { gain, offset } => gain.len() != n || offset.len() != n,
            Policy::Callback(_) => false,
        };
        if bad {
            return Err(Error::InvalidInput(format!(
                "policy sample count does not match the {n} grid nodes"
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn control(&self, k: usize, t: f64, x: f64, z: f64, stat: f64) -> f64 {
        match self {
            Policy::LinearGain(gain) => -gain[k] * x,
            Policy::AffineMeanField { gain, offset } => -gain[k] * x - offset[k],
            Policy::Callback(cb) => cb(t, x, z, stat),
        }
    }

    /// Same policy with every gain multiplied by `factor`.
    pub fn scaled_gain(&self, factor: f64) -> Option<Policy> {
        match self {
            Policy::LinearGain(k) => Some(Policy::LinearGain(k.iter().map(|g| g * factor).collect())),
            Policy::AffineMeanField { gain, offset } => Some(Policy::AffineMeanField {
                gain: gain.iter().map(|g| g * factor).collect(),
                offset: offset.clone(),
            }),
            Policy::Callback(_) => None,
        }
    }
}

pub type CostFn = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;
pub type TerminalFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
pub type DiffusionFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type StatFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Scalar statistic of the empirical law fed to the coefficients.
#[derive(Clone, Default)]
pub enum LawStatistic {
    /// The coefficients receive 0 and no statistic is computed.
    #[default]
    None,
    /// Empirical mean, reduced in a fixed order.
    Mean,
    Custom(StatFn),
}

impl fmt::Debug for LawStatistic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LawStatistic::None => f.write_str("None"),
            LawStatistic::Mean => f.write_str("Mean"),
            LawStatistic::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

impl LawStatistic {
    pub fn evaluate(&self, x: &[f64]) -> f64 {
        match self {
            LawStatistic::None => 0.0,
            LawStatistic::Mean => crate::stats::mean(x),
            LawStatistic::Custom(f) => f(x),
        }
    }
}

/// Coefficients given as callbacks; the measure argument enters through a
/// single scalar statistic.
#[derive(Clone)]
pub struct GenericModel {
    /// Running cost `f(x, stat, v)`.
    pub f: CostFn,
    /// Drift `g(x, stat, v)`.
    pub g: CostFn,
    pub sigma: DiffusionFn,
    /// Terminal cost `h(x, stat)`.
    pub h: TerminalFn,
    pub law_stat: LawStatistic,
}

impl fmt::Debug for GenericModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GenericModel").field("law_stat", &self.law_stat).finish_non_exhaustive()
    }
}

impl GenericModel {
    pub fn new(
        f: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static,
        g: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static,
        sigma: impl Fn(f64) -> f64 + Send + Sync + 'static,
        h: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            f: Arc::new(f),
            g: Arc::new(g),
            sigma: Arc::new(sigma),
            h: Arc::new(h),
            law_stat: LawStatistic::None,
        }
    }

    pub fn with_law_stat(mut self, stat: LawStatistic) -> Self {
        self.law_stat = stat;
        self
    }
}

/// Turns a risk-seeking problem (`alpha < 0`) into a risk-averse one:
/// `f → −f`, `h → −h`. The caller then uses `|alpha|`.
pub fn risk_seeking_transform(model: &GenericModel) -> GenericModel {
    let f = model.f.clone();
    let h = model.h.clone();
    GenericModel {
        f: Arc::new(move |x, s, v| -f(x, s, v)),
        g: model.g.clone(),
        sigma: model.sigma.clone(),
        h: Arc::new(move |x, s| -h(x, s)),
        law_stat: model.law_stat.clone(),
    }
}

/// Either LQ model flavour, for [`validate_model`].
#[derive(Debug, Clone, Copy)]
pub enum LQModelRef<'a> {
    Scalar(&'a LQScalarModel),
    Matrix(&'a LQMatrixModel),
}

impl<'a> From<&'a LQScalarModel> for LQModelRef<'a> {
    fn from(m: &'a LQScalarModel) -> Self {
        LQModelRef::Scalar(m)
    }
}

impl<'a> From<&'a LQMatrixModel> for LQModelRef<'a> {
    fn from(m: &'a LQMatrixModel) -> Self {
        LQModelRef::Matrix(m)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationOutcome {
    pub violations: Vec<String>,
    pub warnings: Vec<String>,
}

impl ValidationOutcome {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn into_result(self) -> Result<Vec<String>> {
        if self.violations.is_empty() {
            Ok(self.warnings)
        } else {
            Err(Error::InvalidInput(self.violations.join("; ")))
        }
    }
}

const SYM_TOL: f64 = 1e-10;

fn is_symmetric(m: &DMatrix<f64>) -> bool {
    let scale = m.amax().max(1.0);
    (m - m.transpose()).amax() <= SYM_TOL * scale
}

fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigenvalues().min()
}

/// Diagnostic check of a model against its invariants. Never fails; the
/// outcome lists violations and warnings.
pub fn validate_model<'a>(
    model: impl Into<LQModelRef<'a>>,
    risk: &RiskParams,
    grid: &TimeGrid,
) -> ValidationOutcome {
    let mut out = ValidationOutcome::default();
    if !(risk.alpha.is_finite() && risk.alpha > 0.0) {
        out.violations.push(format!("alpha must be > 0, got {}", risk.alpha));
    }
    if !risk.beta.is_finite() {
        out.violations.push("beta is not finite".into());
    }
    if !(grid.horizon() > 0.0 && grid.n_steps() >= 2) {
        out.violations.push("time grid is degenerate".into());
    }

    match model.into() {
        LQModelRef::Scalar(m) => {
            if !m.is_finite() {
                out.violations.push("model contains non-finite coefficients".into());
                return out;
            }
            if m.sigma <= 0.0 {
                out.violations.push("sigma must be > 0".into());
            }
            if m.r <= 0.0 {
                out.violations.push("R not positive definite".into());
            }
            if m.q < 0.0 {
                out.violations.push("Q not positive semidefinite".into());
            }
            if m.q_t < 0.0 {
                out.violations.push("QT not positive semidefinite".into());
            }
            if m.r > 0.0 {
                let margin = m.control_authority() - risk.alpha * m.sigma * m.sigma;
                if margin < 0.0 {
                    out.warnings.push(format!(
                        "b^2/r - alpha*sigma^2 = {margin} < 0: the Riccati equation may blow up"
                    ));
                }
            }
        }
        LQModelRef::Matrix(m) => {
            if !m.is_finite() {
                out.violations.push("model contains non-finite coefficients".into());
                return out;
            }
            if !is_symmetric(m.R()) || m.R().clone().cholesky().is_none() {
                out.violations.push("R not positive definite".into());
            }
            for (name, q) in [("Q", m.Q()), ("QT", m.QT())] {
                if !is_symmetric(q) || min_eigenvalue(q) < -SYM_TOL * q.amax().max(1.0) {
                    out.violations.push(format!("{name} not positive semidefinite"));
                }
            }
            if let Some(r_inv) = m.R().clone().try_inverse() {
                let s = m.B() * r_inv * m.B().transpose() - m.a_diff() * risk.alpha;
                if min_eigenvalue(&s) < 0.0 {
                    out.warnings.push(
                        "B R^-1 B^T - alpha a is indefinite: the Riccati equation may blow up".into(),
                    );
                }
            }
        }
    }
    out
}
