use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("too few points: {found} survived validation, need at least {needed}")]
    TooFewPoints { found: usize, needed: usize },

    #[error("non-positive bitrate {0} kbps")]
    NonPositiveBitrate(f64),

    #[error("invalid distortion {value} for {metric}")]
    InvalidDistortion { value: f64, metric: &'static str },

    #[error("invalid operating point: {0}")]
    InvalidOperatingPoint(String),

    #[error("singular fit: {0}")]
    SingularFit(String),

    #[error("evaluation at {x} outside fit domain [{lo}, {hi}]")]
    OutsideDomain { x: f64, lo: f64, hi: f64 },

    #[error("sampling grid is empty: domain narrower than 1 kbps")]
    EmptyGrid,

    #[error("pareto envelope needs at least one curve")]
    NoCurves,

    #[error("curves use different metrics")]
    MetricMismatch,

    #[error("distortion ranges do not overlap (span {span})")]
    NoOverlap { span: f64 },

    #[error("invalid optimizer bounds [{lo}, {hi}]")]
    InvalidBounds { lo: f64, hi: f64 },

    #[error("optimizer tolerance must be positive, got {0}")]
    InvalidTolerance(f64),

    #[error("evaluation budget is zero")]
    BudgetZero,

    #[error("QP {0} outside [0, 51]")]
    QpOutOfRange(i32),

    #[error("encoder process failed: {0}")]
    ProcessFailed(String),

    #[error("could not extract {field} from encoder stats: {detail}")]
    StatsParseError { field: &'static str, detail: String },

    #[error("k = {0} requested but the command template has no {{k}} placeholder")]
    KUnsupported(f64),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("no synthetic model for clip {0}")]
    UnknownClip(String),

    #[error("per-clip encode budget of {budget} exhausted")]
    BudgetExhausted { budget: usize },

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("no clips")]
    NoClips,

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

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
