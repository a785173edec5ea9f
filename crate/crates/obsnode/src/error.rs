use std::path::Path;

use obsnode_core::evaluate::EvalError;
use obsnode_core::identify::IdentifyError;
use obsnode_core::obsnode::ModelError;
use obsnode_core::odeint::OdeError;
use obsnode_core::simulate::SimError;
use obsnode_core::train::TrainError;

/// A failed command. The variant decides the process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad arguments, config files or missing inputs (exit 2).
    #[error("{0}")]
    Usage(String),
    /// Input data that parses but cannot be used (exit 3).
    #[error("{0}")]
    Data(String),
    /// Blow-ups, non-finite values, failed numerical checks (exit 4).
    #[error("{0}")]
    Numeric(String),
}

pub type Result<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Data(_) => "data",
            CliError::Numeric(_) => "numeric",
        }
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        CliError::Data(msg.into())
    }

    /// Missing inputs are usage errors; anything else the OS reports while
    /// reading is a data error.
    pub fn read(path: &Path, err: std::io::Error) -> Self {
        let msg = format!("cannot read {}: {err}", path.display());
        match err.kind() {
            std::io::ErrorKind::NotFound | std::io::ErrorKind::PermissionDenied => CliError::Usage(msg),
            _ => CliError::Data(msg),
        }
    }

    pub fn write(path: &Path, err: std::io::Error) -> Self {
        CliError::Usage(format!("cannot write {}: {err}", path.display()))
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Config(_) => CliError::Usage(e.to_string()),
            SimError::Rejection | SimError::NonFinite { .. } => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<OdeError> for CliError {
    fn from(e: OdeError) -> Self {
        CliError::Numeric(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Config(_) => CliError::Usage(e.to_string()),
            ModelError::Dimension { .. } | ModelError::EmptyHistory => CliError::Data(e.to_string()),
            ModelError::Ode(_) | ModelError::Autodiff(_) => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        if e.is_numeric() {
            return CliError::Numeric(e.to_string());
        }
        match e {
            TrainError::Config(_) => CliError::Usage(e.to_string()),
            TrainError::Model(m) => m.into(),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Config(_) => CliError::Usage(e.to_string()),
            EvalError::Csv { .. } => CliError::Data(e.to_string()),
            EvalError::Model(m) => m.into(),
            EvalError::Sim(s) => s.into(),
        }
    }
}

impl From<IdentifyError> for CliError {
    fn from(e: IdentifyError) -> Self {
        match e {
            IdentifyError::Invalid(_) | IdentifyError::TooLarge { .. } | IdentifyError::Query(_) => {
                CliError::Usage(e.to_string())
            }
            IdentifyError::ZeroProbability | IdentifyError::NotBisimilar(..) => CliError::Numeric(e.to_string()),
        }
    }
}
