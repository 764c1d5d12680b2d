use thiserror::Error;

/// Errors raised by the numerical routines.
///
/// Riccati blow-up is not an error: it is an outcome recorded on
/// [`crate::riccati::RiccatiSolution`]. Consumers that need a finite
/// solution report [`Error::BlowUpInput`] instead.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite input: {0}")]
    NonFiniteInput(String),

    #[error("rho must be positive, got {0}")]
    NonpositiveRho(f64),

    #[error("control bounds [{lo}, {hi}] are empty or degenerate")]
    EmptyBounds { lo: f64, hi: f64 },

    #[error("Riccati input has a blow-up at t = {t}")]
    BlowUpInput { t: f64 },

    #[error("particle {particle} became non-finite at step {step}")]
    NonFiniteState { step: usize, particle: usize },

    #[error("trajectory is empty or does not reach the horizon")]
    EmptyTrajectory,

    #[error("CFL condition violated: need dt <= {dt_required:.6e}, got {dt:.6e}")]
    CflViolation { dt: f64, dt_required: f64 },

    #[error("boundary cells hold {leaked:.3e} of the mass; enlarge the domain")]
    MassLoss { leaked: f64 },

    #[error("initial law not integrable: alpha * pi(0) * s0^2 = {product} >= 1")]
    IntegrabilityViolation { product: f64 },

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
