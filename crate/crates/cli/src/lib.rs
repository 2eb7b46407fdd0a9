//! Front end for `rescon-core`: scenario files, bundled presets, artifact
//! writers and the reproduction suite behind the `rescon` binary.

use rescon_core::sim::ConfigError;
use thiserror::Error;

pub mod commands;
pub mod output;
pub mod presets;
pub mod reproduce;
pub mod scenario_file;
pub mod svg;

pub const EXIT_INPUT: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;
pub const EXIT_ACCEPTANCE: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    /// Unreadable or schema-invalid input, unwritable output.
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Acceptance(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => EXIT_INPUT,
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Acceptance(_) => EXIT_ACCEPTANCE,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Input(e.to_string())
    }
}
