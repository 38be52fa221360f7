//! Manual review of per-frame alignment estimates.
//!
//! A [`ReviewSession`] keeps the estimates, the effective label of every
//! frame and the review queue. Labels go to an append-only JSON-Lines log
//! that is synced before a submission is acknowledged; reopening the log
//! restores the session. [`start_review`] exposes the session over HTTP.

pub mod labels;
pub mod server;
pub mod session;

use std::path::{Path, PathBuf};

pub use labels::{effective_labels, read_labels, LabelLog, ReviewLabel, Verdict};
pub use server::{router, start_review, ReviewHandle, DEFAULT_BIND};
pub use session::{export_validated, validated, FrameView, LabelAck, LabelRequest, Progress, ReviewInputs, ReviewSession};

#[derive(Debug, thiserror::Error)]
pub enum ReviewError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {reason}")]
    Log { path: PathBuf, line: usize, reason: String },
    #[error("unknown frame {0}")]
    UnknownFrame(String),
    #[error("malformed verdict {0:?}; expected \"accepted\" or \"rejected\"")]
    BadVerdict(String),
    #[error("{0}")]
    BadParameter(String),
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: String, source: std::io::Error },
    #[error(transparent)]
    Core(#[from] aerialign_core::Error),
}

impl ReviewError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

pub type ReviewResult<T> = Result<T, ReviewError>;
