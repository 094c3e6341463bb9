use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("fields live on different grids")]
    GridMismatch,

    #[error("non-finite value at grid point {index}")]
    NonFinite { index: usize },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid region: {0}")]
    InvalidRegion(String),

    #[error("test function does not vanish on the boundary (point {index}, value {value})")]
    BoundaryNonzero { index: usize, value: f64 },

    #[error("energy is not finite at grid point {index}")]
    NonFiniteEnergy { index: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("malformed field dump: {0}")]
    Format(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
