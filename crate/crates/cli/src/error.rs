use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] dae_transport_core::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CliError>;

/// Stable process exit statuses.
pub mod exit {
    pub const SUCCESS: u8 = 0;
    pub const CONFIG: u8 = 1;
    pub const CHECK_FAILED: u8 = 2;
    pub const SINGULARITY: u8 = 3;
    /// A verification check or an output write crashed.
    pub const RUNTIME: u8 = 4;
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => exit::CONFIG,
            CliError::Core(dae_transport_core::Error::Singularity { .. }) => exit::SINGULARITY,
            CliError::Core(_) => exit::CONFIG,
            CliError::Io(_) => exit::RUNTIME,
        }
    }
}
