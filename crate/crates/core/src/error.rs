use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("too few points: need at least {needed}, got {got}")]
    TooFewPoints { needed: usize, got: usize },

    #[error("demonstration `{0}` has no usable trajectory")]
    EmptyDemonstration(String),

    #[error(
        "demonstration `{demo}`: trajectory ends {distance:.4} from the attractor (tolerance {tolerance:.4})"
    )]
    AttractorInconsistent {
        demo: String,
        distance: f64,
        tolerance: f64,
    },

    #[error("duplicate demonstration id `{0}`")]
    DuplicateId(String),

    #[error("unknown demonstration `{0}`")]
    UnknownDemonstration(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("timestamps must be strictly increasing")]
    NonMonotoneTime,

    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),

    #[error("degenerate data: all points coincide")]
    DegenerateData,

    #[error("covariance is not positive definite")]
    SingularCovariance,

    #[error("invalid parameter: {0}")]
    InvalidParameter(&'static str),

    #[error("optimization diverged (non-finite objective)")]
    OptimizationDiverged,

    #[error("stability verification failed (worst margin {margin:e})")]
    StabilityUnsatisfied { margin: f64 },

    #[error("no vertex direction reaches the goal")]
    NoGoalEdges,

    #[error("no path from start to goal")]
    NoPath,

    #[error("empty vertex selection")]
    EmptySelection,

    #[error("vertex {vertex} and its reversal share segment {segment}")]
    SegmentReversalConflict { segment: usize, vertex: usize },

    #[error("vertex {0} does not exist")]
    UnknownVertex(usize),
}
