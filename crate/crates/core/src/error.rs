use thiserror::Error;

/// Errors produced by the estimation library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid system parameters: {0}")]
    InvalidParams(String),

    #[error("invalid control: {0}")]
    InvalidControl(String),

    #[error("decision vector outside the control box: {0}")]
    OutOfBox(String),

    #[error("no regularizer active")]
    NoRegularizer,

    #[error("adaptive integration failed: {0}")]
    IntegrationFailure(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("optimization failed for direction {0}")]
    DirectionFailed(String),

    #[error("no feasible initial point reaches the target along direction {0}")]
    CsInfeasible(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unknown run id {0}")]
    UnknownRun(String),

    #[error("unknown stage {0}")]
    UnknownStage(usize),

    #[error("evidence replay mismatch at node {node}: stored {stored}, recomputed {recomputed}")]
    ReplayMismatch {
        node: usize,
        stored: f64,
        recomputed: f64,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("failed to parse {path}: {message}")]
    Parse { path: String, message: String },
}
