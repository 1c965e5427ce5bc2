use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("action {0} is outside the action universe of `{1}`")]
    ActionOutsideUniverse(String, String),

    #[error("numerical fault: {0}")]
    Numerical(String),

    #[error("bound violated at t={t}, x={x}, action={action}: |b|+|f|={lhs} > Phi={phi}")]
    BoundViolation {
        t: f64,
        x: String,
        action: usize,
        lhs: f64,
        phi: f64,
    },

    #[error("{path}: {message}")]
    Parse { path: String, message: String },

    #[error("configuration invalid:\n{}", .0.join("\n"))]
    Config(Vec<String>),

    #[error("unknown coefficient family `{0}`")]
    UnknownCatalogEntry(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
