use std::fmt;

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_BACKEND: u8 = 3;

/// An error carrying the process exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

pub type CliResult<T> = Result<T, CliError>;

pub fn usage(message: impl fmt::Display) -> CliError {
    CliError {
        code: EXIT_USAGE,
        message: message.to_string(),
    }
}

pub fn data(message: impl fmt::Display) -> CliError {
    CliError {
        code: EXIT_DATA,
        message: message.to_string(),
    }
}

pub fn backend(message: impl fmt::Display) -> CliError {
    CliError {
        code: EXIT_BACKEND,
        message: message.to_string(),
    }
}

impl From<gramrac_core::pipeline::PipelineError> for CliError {
    fn from(e: gramrac_core::pipeline::PipelineError) -> Self {
        use gramrac_core::pipeline::PipelineError as P;
        match e {
            P::Config(_) | P::ConfigMismatch { .. } => usage(e),
            _ => data(e),
        }
    }
}
