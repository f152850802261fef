//! Config-driven identification experiments: data generation, linear
//! approximation, Monte-Carlo training sweeps over initialization schemes,
//! and the tables behind boxplots and training curves.

pub mod config;
pub mod data;
pub mod pipeline;
pub mod report;

/// Failure of a command, classified for the process exit code.
#[derive(Debug)]
pub enum Failure {
    Config(anyhow::Error),
    Data(anyhow::Error),
    AllDiverged(String),
    Io(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Config(_) => 1,
            Failure::Data(_) | Failure::Io(_) => 2,
            Failure::AllDiverged(_) => 3,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Config(e) => write!(f, "configuration error: {e:#}"),
            Failure::Data(e) => write!(f, "data error: {e:#}"),
            Failure::AllDiverged(msg) => f.write_str(msg),
            Failure::Io(e) => write!(f, "output error: {e:#}"),
        }
    }
}

impl std::error::Error for Failure {}
