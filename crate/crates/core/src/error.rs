use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("size mismatch for {what}: expected {expected}, found {found}")]
    SizeMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid label map: {0}")]
    InvalidLabels(String),

    #[error("transformation is not orientation preserving (min det {min_det:e})")]
    Infeasible { min_det: f64 },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("point ({x}, {y}, {z}) lies outside the domain")]
    OutsideDomain { x: f64, y: f64, z: f64 },

    #[error("malformed file {path}: {reason}")]
    Format { path: String, reason: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    File {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(what: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::SizeMismatch {
            what,
            expected,
            found,
        })
    }
}
