//! Error types shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    /// A mathematical precondition was violated by the caller.
    #[error("domain error: {0}")]
    Domain(String),

    /// A run configuration is internally inconsistent or infeasible.
    #[error("configuration error: {0}")]
    Config(String),

    /// The mover planner could not realize a requested transport.
    #[error("planner failure at pair {pair_index}: {detail}")]
    Planner { pair_index: usize, detail: String },

    /// A requested computation exceeds a configured budget.
    #[error("resource limit exceeded: {0}")]
    Resource(String),

    /// A mandatory per-stage certificate check failed.
    #[error("stage {stage} aborted: {check} failed ({detail})")]
    Stage {
        stage: u64,
        check: String,
        detail: String,
    },
}

pub type Result<T> = std::result::Result<T, CoreError>;
