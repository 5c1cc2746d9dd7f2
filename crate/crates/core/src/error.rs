use std::path::PathBuf;

use thiserror::Error;

use crate::projectback::ProjectBackReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("OBJ parse error at line {line}: {message}")]
    ObjParse { line: usize, message: String },

    #[error("mesh not texture-mappable: {0}")]
    NotTextureMappable(String),

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("invalid viewpoint: {0}")]
    InvalidViewpoint(String),

    #[error("degenerate up vector: elevation {elevation_deg}° looks straight along the up axis")]
    DegenerateUpVector { elevation_deg: f64 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("timestep mismatch: {left} vs {right}")]
    TimestepMismatch { left: usize, right: usize },

    #[error("CTXB decode error: {0}")]
    Ctxb(String),

    #[error("image codec error: {0}")]
    Image(String),

    #[error("no supervision: every view weight is zero")]
    NoSupervision,

    #[error("optimization diverged after {} iterations (loss {:.6e})", report.iterations, report.final_loss)]
    Diverged { report: ProjectBackReport },

    #[error("generator transport error (retryable): {0}")]
    Transport(String),

    #[error("generator protocol error: {0}")]
    Protocol(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Transport errors are the only ones worth retrying.
    pub fn is_retryable(&self) -> bool {
        matches!(self, Error::Transport(_))
    }
}
