use std::path::PathBuf;

/// Errors surfaced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("matrix is not symmetric: {0}")]
    NotSymmetric(String),
    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),
    #[error("graph error: {0}")]
    Graph(String),
    #[error("formation geometry error: {0}")]
    Geometry(String),
    #[error("plant error: {0}")]
    Plant(String),
    #[error("pitch singularity: |theta| = {theta:.6} rad is outside the Euler-rate transform domain")]
    PitchSingularity { theta: f64 },
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("gain certificate refused: {0}")]
    CertificateRefused(String),
    #[error("certificate error: {0}")]
    Certificate(String),
    #[error("gain synthesis error: {0}")]
    GainSynthesis(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("window error: {0}")]
    Window(String),
    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("trace parse error at {path}:{line}: {message}")]
    TraceParse {
        path: String,
        line: usize,
        message: String,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
