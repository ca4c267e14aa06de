use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate vector: norm {norm:e} is below {floor:e}")]
    DegenerateVector { norm: f64, floor: f64 },

    #[error("optimizer state: {0}")]
    State(String),

    #[error("non-finite value during evaluation: {0}")]
    Evaluation(String),

    #[error("vocabulary: {0}")]
    Vocabulary(String),

    #[error("invalid record: {0}")]
    Validation(String),

    #[error("{file}:{line}: {message}")]
    Parse {
        file: String,
        line: usize,
        message: String,
    },

    #[error("invalid synthetic spec: {0}")]
    Spec(String),

    #[error("cannot stratify: {0}")]
    Stratification(String),

    #[error("timestamp ordering: t_j = {tj} is after t_T = {tt}")]
    Ordering { tj: f64, tt: f64 },

    #[error("task kind: {0}")]
    TaskKind(String),

    #[error("config: {0}")]
    Config(String),

    #[error("training diverged: non-finite loss on task `{task}` at step {step}")]
    Divergence { task: String, step: usize },

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("degenerate record: {0}")]
    DegenerateRecord(String),

    #[error("incompatible checkpoint: {0}")]
    Compatibility(String),

    #[error("lookup: {0}")]
    Lookup(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Dimension {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
