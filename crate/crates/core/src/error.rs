use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("simplex {simplex:?} is missing its face {face:?}")]
    MissingFace { simplex: Vec<usize>, face: Vec<usize> },

    #[error("simplex {simplex:?} at order {order} is not a strictly ascending list of {expected} vertices")]
    UnsortedSimplex {
        order: usize,
        simplex: Vec<usize>,
        expected: usize,
    },

    #[error("order {order} is not sorted lexicographically at position {position}")]
    UnsortedOrder { order: usize, position: usize },

    #[error("simplex {simplex:?} is listed more than once at order {order}")]
    DuplicateSimplex { order: usize, simplex: Vec<usize> },

    #[error("simplex {simplex:?} references a vertex outside 0..{n0}")]
    VertexOutOfRange { simplex: Vec<usize>, n0: usize },

    #[error("a simplicial complex needs at least one vertex")]
    NoVertices,

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("order {k} is out of range 0..={max}")]
    OrderOutOfRange { k: usize, max: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("eigensolver failed to converge")]
    ConvergenceFailure,

    #[error("basis carries no Hodge subspace labels")]
    UnlabeledBasis,

    #[error("autoregressive response vanishes at eigenvalue {eigenvalue} (index {index})")]
    SingularArResponse { index: usize, eigenvalue: f64 },

    #[error("invalid filter parameters: {0}")]
    InvalidFilter(String),

    #[error("subspace basis is not orthonormal (deviation {deviation:e})")]
    NonOrthonormalSubspace { deviation: f64 },

    #[error("power spectral density must be strictly positive on the subspace")]
    NonpositivePsd,

    #[error("noise variance must be positive, got {0}")]
    NonpositiveNoiseVariance(f64),

    #[error("invalid selection mask: {0}")]
    InvalidMask(String),

    #[error("reference has zero norm")]
    ZeroReference,

    #[error("operator spectrum is degenerate (largest eigenvalue is not positive)")]
    DegenerateSpectrum,

    #[error("configuration error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(field: &str, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.to_string(),
            message: message.into(),
        }
    }
}
