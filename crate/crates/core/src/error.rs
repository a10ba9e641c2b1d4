use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SlnError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("thread {thread_id}: field `{field}`: {message}")]
    Malformed {
        thread_id: String,
        field: String,
        message: String,
    },
    #[error("line {line}: {message}")]
    BadRecord { line: usize, message: String },
    #[error("empty corpus: no learner posts remain after filtering")]
    EmptyCorpus,
    #[error("duplicate post id {0}")]
    DuplicatePost(String),
    #[error("post {post_id} at {timestamp} lies outside the course window [{start}, {end}]")]
    OutsideWindow {
        post_id: String,
        timestamp: i64,
        start: i64,
        end: i64,
    },
    #[error("unknown learner {0}")]
    UnknownLearner(String),
    #[error("unknown pair ({0}, {1})")]
    UnknownPair(String, String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("training data contains a single class")]
    SingleClass,
    #[error("{positives} formed pairs cannot fill {k} folds; use a smaller k")]
    TooFewPositives { positives: usize, k: usize },
    #[error("feature columns {found:?} do not match the model's {expected:?}")]
    FeatureOrder { expected: Vec<String>, found: Vec<String> },
    #[error("unsupported file: {0}")]
    Format(String),
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<SlnError>,
    },
    #[error(transparent)]
    Nn(#[from] nnkit::NnError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, SlnError>;

pub(crate) trait IoContext<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T>;
}

impl<T> IoContext<T> for std::io::Result<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T> {
        self.map_err(|source| SlnError::Io {
            path: path.into(),
            source,
        })
    }
}

/// Stable machine-readable kind, used in CLI error reports.
impl SlnError {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Io { .. } => "io",
            Self::Malformed { .. } | Self::BadRecord { .. } => "parse",
            Self::EmptyCorpus => "empty_corpus",
            Self::DuplicatePost(_) => "duplicate_post",
            Self::OutsideWindow { .. } => "outside_window",
            Self::UnknownLearner(_) | Self::UnknownPair(..) => "unknown_entity",
            Self::InvalidArgument(_) => "invalid_argument",
            Self::SingleClass => "single_class",
            Self::TooFewPositives { .. } => "too_few_positives",
            Self::FeatureOrder { .. } => "feature_order",
            Self::Format(_) => "format",
            Self::Stage { source, .. } => source.kind(),
            Self::Nn(_) => "numeric",
            Self::Json(_) => "json",
            Self::Csv(_) => "csv",
        }
    }
}
