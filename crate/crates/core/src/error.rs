use std::path::PathBuf;

use crate::aoi::{NodeId, Slot};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("no samples")]
    NoSamples,

    #[error("no active nodes")]
    NoActiveNodes,

    #[error("configuration error: {0}")]
    Config(String),

    #[error("node {node} failed to decide in slot {slot}: {reason}")]
    Decision { node: NodeId, slot: Slot, reason: String },

    #[error("never succeeds: per-slot success probability is zero")]
    NeverSucceeds,

    #[error("missing placeholder: {0}")]
    MissingPlaceholder(String),

    #[error("unknown scenario: {0}")]
    UnknownScenario(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Backend(#[from] crate::backend::BackendError),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
