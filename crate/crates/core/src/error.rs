use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("unsupported spatial dimension {0} (expected 2 or 3)")]
    UnsupportedDim(usize),
    #[error("matrix is not symmetric (relative asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("singular isotropic map (m = {m}, p = {p}, dim = {dim})")]
    SingularMap { m: f64, p: f64, dim: usize },
    #[error("invalid relaxation spec: {0}")]
    Relaxation(String),
    #[error("nonpositive parameter: {0}")]
    Nonpositive(String),
    #[error("inadmissible parameters: {0}")]
    Inadmissible(String),
    #[error("not an interior point: {0}")]
    NotInterior(String),
    #[error("grid too small: {nx}x{nz} (need at least 8x8)")]
    GridTooSmall { nx: usize, nz: usize },
    #[error("time step {dt} exceeds the stability limit {limit}")]
    Cfl { dt: f64, limit: f64 },
    #[error("instability detected at step {step}")]
    Instability { step: usize },
    #[error("wavelet undersampled: f0*dt = {0} > 0.1")]
    Undersampled(f64),
    #[error("source violates the vanishing-derivative condition: {0}")]
    Smoothness(String),
    #[error("integrator failure: {0}")]
    Integrator(String),
    #[error("mismatched inputs: {0}")]
    Mismatch(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("bad file format: {0}")]
    Format(String),
    #[error("i/o error on {path}: {source}")]
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
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
