use std::io;
use std::path::{Path, PathBuf};

use forge_core::record::RecordError;

/// Exit codes of the `forge` binary.
pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_STAGE: i32 = 2;
pub const EXIT_QUARANTINE: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum ForgeError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: malformed record: {msg}")]
    Malformed { path: PathBuf, line: usize, msg: String },
    #[error("{path}:{line}: {source}")]
    InvalidRecord {
        path: PathBuf,
        line: usize,
        #[source]
        source: RecordError,
    },
    #[error("{path}: {msg}")]
    Integrity { path: PathBuf, msg: String },
    #[error("config: {0}")]
    Config(String),
    #[error("stage {stage}: {msg}")]
    Stage { stage: String, msg: String },
    #[error("{0} record(s) quarantined")]
    QuarantineNonEmpty(usize),
}

impl ForgeError {
    pub fn io(path: impl AsRef<Path>) -> impl FnOnce(io::Error) -> ForgeError {
        let path = path.as_ref().to_path_buf();
        move |source| ForgeError::Io { path, source }
    }

    pub fn stage(stage: &str, msg: impl ToString) -> ForgeError {
        ForgeError::Stage {
            stage: stage.to_string(),
            msg: msg.to_string(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            ForgeError::Config(_) => EXIT_CONFIG,
            ForgeError::QuarantineNonEmpty(_) => EXIT_QUARANTINE,
            _ => EXIT_STAGE,
        }
    }
}

pub type Result<T, E = ForgeError> = std::result::Result<T, E>;
