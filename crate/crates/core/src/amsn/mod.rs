//! Agent memory: short-term buffers, the episodic vector store, the semantic
//! knowledge graph, and procedural runbooks.

mod buffer;
mod episodic;
pub mod kg;
mod runbook;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::Alert;
use crate::sim::ActionResult;

pub use buffer::{BufferItem, ShortTermBuffer};
pub use episodic::{
    cosine, embed, embed_features, embedding_dim, EmbeddingConfig, Episode, EpisodeAction,
    EpisodicStore, ForgetCriteria, Outcome, StoredEpisode, Tombstone,
};
pub use kg::{
    default_policies, Asserted, Class, KnowledgeGraph, Ontology, PolicyDef, Provenance, Rejection,
    Signature, Triple, TriplePattern,
};
pub use runbook::{seed_runbooks, PolicyFilter, Runbook, RunbookStore};

/// What the orchestrator keeps in the short-term buffer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum WorkingItem {
    Alert(Alert),
    Action(ActionResult),
    Note { text: String },
}

#[cfg(test)]
pub(crate) use episodic::tests::episode as test_episode;

#[derive(Debug, Error)]
pub enum AmsnError {
    #[error("attribute `{0}` is outside the vocabulary")]
    UnknownAttribute(String),
    #[error("feature vector has dimension {found}, store expects {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("episode `{0}` already stored")]
    DuplicateEpisode(String),
    #[error("invalid episode: {0}")]
    InvalidEpisode(String),
    #[error("pattern binds no position")]
    UnboundPattern,
    #[error("triple rejected: {0}")]
    Rejected(Rejection),
    #[error("`{id}` is a {existing}, cannot redeclare as {requested}")]
    ClassConflict {
        id: String,
        existing: Class,
        requested: Class,
    },
    #[error("unknown runbook `{0}`")]
    UnknownRunbook(String),
    #[error("invalid runbook: {0}")]
    InvalidRunbook(String),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
