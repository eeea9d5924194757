//! Lattice learning: formal contexts over episodes, concept enumeration,
//! implication mining, and the check/inject/retire cycle against the
//! knowledge graph.

mod context;
mod lattice;
mod pipeline;
mod rules;

use thiserror::Error;

pub use context::{FormalContext, NamedConcept};
pub use lattice::{
    bottom, enumerate_concepts, enumerate_concepts_counted, join, lattice_leq,
    lattice_leq_by_intent, meet, top, ClosureCounter, FormalConcept,
};
pub use pipeline::{
    bound_to_decommissioned, build_context, check_consistency, evidence_index, inject_rules,
    retire_rules, run_ill, EvidenceIndex, IllConfig, IllRun, Inconsistency, Rejected,
    RetireCriterion,
};
pub use rules::{
    count, is_label, mine_rules, mine_rules_counted, write_rules_jsonl, Counts, MiningStats, Rule,
    RuleStatus, CAUSE_PREFIX, MAX_ATTRIBUTES, RESOLVED_PREFIX,
};

use crate::amsn::{AmsnError, Rejection};

#[derive(Debug, Error)]
pub enum IllError {
    #[error("no episodes to build a context from")]
    EmptyInput,
    #[error("attribute `{0}` is outside the vocabulary")]
    UnknownAttribute(String),
    #[error("unknown object `{0}`")]
    UnknownObject(String),
    #[error("duplicate {0}")]
    Duplicate(String),
    #[error("incidence does not match {objects} objects × {attributes} attributes")]
    Shape { objects: usize, attributes: usize },
    #[error("invalid threshold: {0}")]
    InvalidThreshold(String),
    #[error("context has {0} attributes, more than the supported maximum")]
    TooManyAttributes(usize),
    #[error("rule `{0}` has not passed the consistency check")]
    Unchecked(String),
    #[error("triple rejected: {0}")]
    Rejected(Rejection),
    #[error(transparent)]
    Memory(#[from] AmsnError),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
