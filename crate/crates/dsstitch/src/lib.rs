//! File formats, benchmark runner, SVG plotting and the `dsstitch` command
//! line on top of [`dsstitch_core`].

use std::path::Path;

pub use dsstitch_core as core;

pub mod bench;
pub mod config;
pub mod formats;
pub mod pipeline;
pub mod plot;

pub type AppResult<T> = Result<T, AppError>;

#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error("{0}")]
    Usage(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },

    #[error("invalid file: {0}")]
    Format(String),

    /// A method ran but did not succeed.
    #[error("{0}")]
    Failed(String),

    #[error("{0}")]
    Core(#[from] dsstitch_core::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl AppError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// Process exit code: 1 when a method legitimately failed on valid
    /// input, 2 for usage and input errors.
    pub fn exit_code(&self) -> i32 {
        use dsstitch_core::Error as E;
        match self {
            AppError::Core(
                E::NoPath
                | E::NoGoalEdges
                | E::EmptySelection
                | E::OptimizationDiverged
                | E::StabilityUnsatisfied { .. }
                | E::SegmentReversalConflict { .. },
            )
            | AppError::Failed(_) => 1,
            _ => 2,
        }
    }
}
