use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{module}: {source}")]
    Module {
        module: &'static str,
        #[source]
        source: hypodense::Error,
    },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0} verification criteria failed")]
    VerificationFailed(usize),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Module { .. } => 3,
            CliError::Io { .. } => 1,
            CliError::VerificationFailed(_) => 4,
        }
    }
}

/// Tags a library error with the module that raised it.
pub fn in_module(module: &'static str) -> impl Fn(hypodense::Error) -> CliError {
    move |source| CliError::Module { module, source }
}
