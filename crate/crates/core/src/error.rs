use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown occupation title `{0}`")]
    UnknownTitle(String),

    #[error("split ratios must be non-negative and sum to 1 (got {0:?})")]
    RatioSum([f64; 3]),

    #[error("occupation `{occupation}` has {count} records; at least {required} are required")]
    InsufficientRecords {
        occupation: String,
        count: usize,
        required: usize,
    },

    #[error("no occupation has enough records per gender to be retained")]
    EmptySubsample,

    #[error("vocabulary is empty after applying min_freq={0}")]
    EmptyVocabulary(usize),

    #[error("malformed embedding header: {0}")]
    MalformedHeader(String),

    #[error("line {line}: expected {expected} values, found {found}")]
    DimensionMismatch {
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("duplicate token `{0}` in embedding file")]
    DuplicateToken(String),

    #[error("feature dimension {found} does not match model dimension {expected}")]
    FeatureDimension { expected: usize, found: usize },

    #[error("training data must contain at least two classes")]
    SingleClass,

    #[error("class {0} has no training examples")]
    EmptyClass(String),

    #[error("loss became non-finite: {0}")]
    NonFiniteLoss(String),

    #[error("no token in the input has an embedding")]
    EmptySequence,

    #[error("input vectors have mismatched lengths ({0} vs {1})")]
    Alignment(usize, usize),

    #[error("degenerate variance: {0}")]
    DegenerateVariance(&'static str),

    #[error("at least {required} points are required, found {found}")]
    TooFewPoints { required: usize, found: usize },

    #[error("zero denominator in true-positive composition")]
    ZeroDenominator,

    #[error("infeasible TPR pair: TPR_g={tpr}, gap={gap}")]
    InfeasibleTpr { tpr: f64, gap: f64 },

    #[error("no feasible TPR value in grid at step {0}")]
    EmptyFeasibleGrid(usize),

    #[error("split is empty")]
    EmptySplit,

    #[error("histogram is empty")]
    EmptyHistogram,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("malformed data: {0}")]
    Data(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::RatioSum(_)
            | Error::InvalidArgument(_)
            | Error::UnknownTitle(_) => 2,
            Error::NonFiniteLoss(_)
            | Error::DegenerateVariance(_)
            | Error::ZeroDenominator
            | Error::InfeasibleTpr { .. }
            | Error::EmptyFeasibleGrid(_) => 4,
            _ => 3,
        }
    }
}
