use modalreg::ModalError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("line {line}: expected {expected} columns, found {found}")]
    Dimension { line: u64, expected: usize, found: usize },

    #[error("line {line}, column {column:?}: value is not finite")]
    NonFinite { line: u64, column: String },

    #[error("{0}")]
    Method(String),

    #[error("{0}")]
    Usage(String),

    #[error("missing --seed: study commands take all randomness from an explicit seed")]
    MissingSeed,

    #[error("{path}: {message}")]
    Io { path: String, message: String },

    #[error(transparent)]
    Model(#[from] ModalError),
}

impl CliError {
    pub fn code(&self) -> &'static str {
        match self {
            CliError::Parse { .. } => "E_PARSE",
            CliError::Dimension { .. } => "E_DIMENSION",
            CliError::NonFinite { .. } => "E_NONFINITE",
            CliError::Method(_) => "E_METHOD",
            CliError::Usage(_) => "E_USAGE",
            CliError::MissingSeed => "E_SEED",
            CliError::Io { .. } => "E_IO",
            CliError::Model(e) => e.code(),
        }
    }

    /// 1 for bad input or configuration, 2 for numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Model(e) if e.is_numerical() => 2,
            _ => 1,
        }
    }

    pub fn io(path: &std::path::Path, err: impl std::fmt::Display) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            message: err.to_string(),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_split_input_from_numerics() {
        assert_eq!(CliError::Method("x".into()).exit_code(), 1);
        assert_eq!(CliError::Model(ModalError::InvalidInput("x".into())).exit_code(), 1);
        assert_eq!(CliError::Model(ModalError::SingularDesign { condition: 1e13 }).exit_code(), 2);
        assert_eq!(CliError::Model(ModalError::AllFitsFailed).code(), "E_ALL_FITS_FAILED");
    }
}
