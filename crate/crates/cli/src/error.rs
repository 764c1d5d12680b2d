use serde::Serialize;

/// Exit-code class of a failure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    CheckFailed,
    Input,
    Numerical,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::CheckFailed => 1,
            ErrorKind::Input => 2,
            ErrorKind::Numerical => 3,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CliError {
    #[serde(rename = "error")]
    pub kind: ErrorKind,
    pub message: String,
}

impl CliError {
    pub fn input(message: impl Into<String>) -> Self {
        CliError { kind: ErrorKind::Input, message: message.into() }
    }

    pub fn check_failed(message: impl Into<String>) -> Self {
        CliError { kind: ErrorKind::CheckFailed, message: message.into() }
    }

    /// One line of JSON for standard error.
    pub fn to_json_line(&self) -> String {
        let flat = CliError {
            kind: self.kind,
            message: self.message.split('\n').map(str::trim).filter(|l| !l.is_empty()).collect::<Vec<_>>().join("; "),
        };
        serde_json::to_string(&flat).expect("plain struct serializes")
    }
}

impl From<riskmf::Error> for CliError {
    fn from(e: riskmf::Error) -> Self {
        use riskmf::Error as E;
        let kind = match e {
            E::InvalidInput(_)
            | E::NonFiniteInput(_)
            | E::NonpositiveRho(_)
            | E::EmptyBounds { .. }
            | E::IntegrabilityViolation { .. }
            | E::Io(_) => ErrorKind::Input,
            E::BlowUpInput { .. }
            | E::NonFiniteState { .. }
            | E::EmptyTrajectory
            | E::CflViolation { .. }
            | E::MassLoss { .. } => ErrorKind::Numerical,
        };
        CliError { kind, message: e.to_string() }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::input(format!("I/O error: {e}"))
    }
}
