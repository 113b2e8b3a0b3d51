use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unsupported simplex level {0}")]
    UnsupportedLevel(usize),

    #[error("degenerate simplex {0:?}: repeated vertex")]
    DegenerateSimplex(Vec<usize>),

    #[error("duplicate simplices after canonicalization: {0:?}")]
    DuplicateSimplices(Vec<Vec<usize>>),

    #[error("complex is not closed: {0}")]
    NotClosed(String),

    #[error("need at least 3 points, got {0}")]
    TooFewPoints(usize),

    #[error("triangulation degenerate: {0}")]
    DegenerateTriangulation(String),

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("eigensolver did not converge after {sweeps} sweeps (off-diagonal norm {off:e})")]
    NoConvergence { sweeps: usize, off: f64 },

    #[error("dimension mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    Domain(String),

    #[error("matrix norm {0:e} too large for the exponential")]
    NormOverflow(f64),

    #[error("explicit Euler step {dt} is unstable; need dt < {threshold}")]
    UnstableStep { dt: f64, threshold: f64 },

    #[error("spectra for level {0} were not precomputed")]
    MissingSpectra(usize),

    #[error("operation not supported: {0}")]
    Unsupported(String),

    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("stale cache: {0}")]
    StaleCache(String),

    #[error("{0}")]
    Undefined(String),

    #[error("could not generate walks: {0}")]
    WalkBudget(String),

    #[error("invalid config: {}", .0.join("; "))]
    Config(Vec<String>),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
