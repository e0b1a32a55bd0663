use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error at line {line}: {message}")]
    Format { line: usize, message: String },

    #[error("unsupported topology at line {line}: face with {vertices} vertices (triangles only)")]
    UnsupportedTopology { line: usize, vertices: usize },

    #[error("degenerate geometry: face {face}")]
    DegenerateGeometry { face: usize },

    #[error("texture absent: {0}")]
    TextureAbsent(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("constant map: correlation undefined")]
    ConstantMap,

    #[error("no fixations hit the mesh")]
    NoFixationHits,

    #[error("image error: {0}")]
    Image(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("unknown {family} strategy '{name}' (known: {known})")]
    UnknownStrategy {
        family: &'static str,
        name: String,
        known: String,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short stable identifier used in machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Format { .. } => "format",
            Error::UnsupportedTopology { .. } => "unsupported-topology",
            Error::DegenerateGeometry { .. } => "degenerate-geometry",
            Error::TextureAbsent(_) => "texture-absent",
            Error::Config(_) => "config",
            Error::Numeric(_) => "numeric",
            Error::LengthMismatch { .. } => "length-mismatch",
            Error::ConstantMap => "constant-map",
            Error::NoFixationHits => "no-fixation-hits",
            Error::Image(_) => "image",
            Error::Checkpoint(_) => "checkpoint",
            Error::UnknownStrategy { .. } => "unknown-strategy",
        }
    }
}
