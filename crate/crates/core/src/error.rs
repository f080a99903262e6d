use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point (t={t}, x={x}) lies outside the {n_t}x{n_x} lattice")]
    OutOfBounds { t: usize, x: usize, n_t: usize, n_x: usize },

    #[error("invalid lattice: {0}")]
    InvalidLattice(String),

    #[error("invalid slab: {0}")]
    InvalidSlab(String),

    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("dimension mismatch: expected {expected} values, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("support touches the temporal boundary: {0}")]
    BoundarySupport(String),

    #[error("geometric precondition violated: {0}")]
    Geometry(String),

    #[error("resource budget exceeded: estimated {estimated} tensor entries, limit {limit}")]
    Budget { estimated: u64, limit: u64 },

    #[error("series inverse requires a unit leading coefficient")]
    NonUnitLeading,

    #[error("invalid input: {0}")]
    Input(String),

    #[error("kernel cache: {0}")]
    Cache(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
