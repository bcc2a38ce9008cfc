use thiserror::Error;

use crate::hierarchy::HierarchyError;
use crate::metrics::MetricsError;
use crate::numcore::NumError;

/// Errors raised while building, running or training the model.
#[derive(Debug, Error)]
pub enum ModelError {
    #[error("feature dimension mismatch for object {id:?}: model expects {expected}, got {got}")]
    Dimension { id: String, expected: usize, got: usize },
    #[error("action distribution needs at least one candidate")]
    EmptyCandidates,
    #[error("action {0} is not among the current candidates")]
    IllegalAction(String),
    #[error("episode has already finished")]
    EpisodeOver,
    #[error("gold labels of object {0:?} are not consistent with the hierarchy")]
    InconsistentGold(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("checkpoint does not match: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Hierarchy(#[from] HierarchyError),
}
