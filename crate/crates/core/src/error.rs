use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("load error: {0}")]
    Load(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("G = {0} is at or below the Nyquist limit of 2 points per wavelength")]
    BelowNyquist(f64),

    #[error("weight fit at G = {g} did not converge (objective {objective:e})")]
    FitNonConvergence { g: f64, objective: f64 },

    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    #[error("source at ({x}, {y}, {z}) m lies inside the PML layer", x = .0[0], y = .0[1], z = .0[2])]
    SourceInPml([f64; 3]),

    #[error("non-finite coefficient in row {0}")]
    NonFinite(usize),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("singular pivot at unknown {index} (|pivot| = {magnitude:e})")]
    SingularPivot { index: usize, magnitude: f64 },

    #[error("subdomain {id}: {source}")]
    Subdomain {
        id: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("right-hand side has zero norm")]
    ZeroRhs,

    #[error("coarse solve failed to reach its tolerance (backward error {0:e})")]
    CoarseSolve(f64),

    #[error("Born series did not converge after {iterations} iterations (backward error {backward_error:e})")]
    CbsNonConvergence { iterations: usize, backward_error: f64 },

    #[error("error metric undefined: {0}")]
    UndefinedMetric(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn in_subdomain(self, id: usize) -> Error {
        Error::Subdomain {
            id,
            source: Box::new(self),
        }
    }
}
