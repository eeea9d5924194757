//! Closed-loop incident agent over a deterministic simulated cluster.

pub mod ace;
pub mod amsn;
pub mod ill;
pub mod ingest;
pub mod orchestrator;
pub mod reasoner;
pub mod rng;
pub mod runner;
pub mod sim;
pub mod types;
pub mod vocab;

pub use types::{ActionKind, Category, EntityId, EventKind, FaultKind, Metric, MilliUnits, Tick};
pub use vocab::Vocabulary;
