use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not positive definite (non-positive pivot at index {pivot})")]
    NotPositiveDefinite { pivot: usize },

    #[error("eigendecomposition did not converge after {sweeps} sweeps (off-diagonal residual {residual:e})")]
    NoConvergence { sweeps: usize, residual: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },

    #[error("invalid component count {k} for {rows} rows")]
    InvalidComponentCount { k: usize, rows: usize },

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("insufficient data: need at least {needed} rows, found {found}")]
    InsufficientData { needed: usize, found: usize },

    #[error("zero diagonal entry at index {index}; repair the matrix before fitting")]
    DegenerateDiagonal { index: usize },

    #[error("shrinkage parameter {0} outside [0, 1]")]
    InvalidShrinkage(f64),

    #[error("duplicate item id `{0}`")]
    DuplicateItem(String),

    #[error("metric {metric} is incompatible with a {mode} index: {hint}")]
    IncompatibleMetric {
        metric: String,
        mode: String,
        hint: String,
    },

    #[error("unknown category `{0}`")]
    UnknownCategory(String),

    #[error("corrupt index: {0}")]
    CorruptIndex(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("item `{item_id}`: {source}")]
    Item {
        item_id: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Attach the offending item id to an error raised while processing it.
    pub fn for_item(self, item_id: &str) -> Self {
        Error::Item {
            item_id: item_id.to_string(),
            source: Box::new(self),
        }
    }
}
