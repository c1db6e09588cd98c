//! IO, configuration and command-line layer of the roadwatch congestion
//! monitor. The computation itself lives in `roadwatch-core`.

pub mod commands;
pub mod config;
pub mod engine;
pub mod sink;
pub mod wire;

pub use roadwatch_core as core;

/// A command failure, split by exit code: configuration problems exit 2,
/// everything else 1.
#[derive(Debug)]
pub enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Config(_) => 2,
            Failure::Runtime(_) => 1,
        }
    }

    pub fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Config(e) | Failure::Runtime(e) => e,
        }
    }
}

impl From<config::ConfigError> for Failure {
    fn from(e: config::ConfigError) -> Self {
        Failure::Config(e.into())
    }
}
