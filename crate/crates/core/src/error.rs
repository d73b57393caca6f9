use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("ray {index} has (near) zero norm")]
    ZeroRay { index: usize },

    #[error("cone is not proper (rank {rank} < dimension {dim})")]
    NotProper { rank: usize, dim: usize },

    #[error("cone is not pointed: certification LP is unbounded")]
    NotPointed,

    #[error("matrix family is empty")]
    EmptyFamily,

    #[error("no strictly dominant eigenvalue for vertices {vertices:?}")]
    SpectralFail { vertices: Vec<usize> },

    #[error("orientation of vertex {vertex} is degenerate (inner product with first left eigenvector is zero)")]
    OrientationDegenerate { vertex: usize },

    #[error("cone initialization failed after {restarts} restarts")]
    InitFail { restarts: usize },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("seed value {seed} is not certified")]
    SeedInfeasible { seed: f64 },

    #[error("slope {slope} of {name} at {point} lies outside [{lo}, {hi}]")]
    SlopeViolation {
        name: String,
        point: f64,
        slope: f64,
        lo: f64,
        hi: f64,
    },

    #[error("trajectory escaped (norm > 1e9) at t = {time}")]
    Blowup { time: f64 },
}
