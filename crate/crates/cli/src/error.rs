use thiserror::Error;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{0}")]
    Parse(String),

    #[error("{0}")]
    Validation(String),

    #[error("{0}")]
    Infeasible(String),

    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Parse(_) => 3,
            CliError::Validation(_) => 4,
            CliError::Infeasible(_) => 5,
            CliError::Io(_) => 1,
        }
    }

    pub fn io(path: &std::path::Path, e: std::io::Error) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }
}

impl From<covbal::Error> for CliError {
    fn from(e: covbal::Error) -> Self {
        use covbal::Error as E;
        let msg = e.to_string();
        match e {
            E::Infeasible(_) | E::EnumerationCap { .. } => CliError::Infeasible(msg),
            E::ReferenceFormat(_) => CliError::Parse(msg),
            _ => CliError::Validation(msg),
        }
    }
}
