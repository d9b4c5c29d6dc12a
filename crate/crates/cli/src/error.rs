use std::path::PathBuf;

use thiserror::Error;

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("{0}: {1}")]
    Io(PathBuf, #[source] std::io::Error),

    #[error(transparent)]
    Core(#[from] smtjsim::Error),
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_BREAKDOWN: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use smtjsim::Error as E;
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Io(..) => EXIT_IO,
            CliError::Core(e) if e.is_breakdown() => EXIT_BREAKDOWN,
            CliError::Core(E::NumericalFailure(_) | E::InvalidGenerator(_) | E::UndefinedCorrelation(_)) => {
                EXIT_NUMERICAL
            }
            CliError::Core(_) => EXIT_CONFIG,
        }
    }
}
