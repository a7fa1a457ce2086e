use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("singular diffusion at x = {x:?}: Σ = {value} below ellipticity floor {floor}")]
    SingularDiffusion { x: Vec<f64>, value: f64, floor: f64 },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("scheme {scheme} does not support {what}")]
    Unsupported { scheme: &'static str, what: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("series too short: {len} samples for {batches} batches")]
    SeriesTooShort { len: usize, batches: usize },

    #[error("quadrature did not converge: {0}")]
    Quadrature(String),

    #[error("cannot merge estimates: {0}")]
    Merge(String),

    #[error("no valid rows: {0}")]
    NoValidRows(String),

    #[error("config line {line}: {msg}")]
    Config { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
