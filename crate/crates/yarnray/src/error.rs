use std::path::PathBuf;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("degenerate curve: {0}")]
    DegenerateCurve(String),

    #[error("invalid geometry parameters: {0}")]
    InvalidGeometry(String),

    #[error("{path}:{line}: {msg}")]
    CurveFile {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("scene error: {0}")]
    Scene(String),

    #[error("scene parse error in {path}: {msg}")]
    SceneParse { path: PathBuf, msg: String },

    #[error("image error: {0}")]
    Image(String),

    #[error("texture cache: {0}")]
    TextureCache(String),

    #[error("fit error: {0}")]
    Fit(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
