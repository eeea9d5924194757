//! Episode records, their transparent embedding, and the episodic store.

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap};
use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};

use super::AmsnError;
use crate::sim::ActionResult;
use crate::types::{Category, EntityId, FaultKind, Tick};
use crate::vocab::Vocabulary;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeAction {
    pub runbook: Option<String>,
    pub result: ActionResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub resolved: bool,
    #[serde(default)]
    pub ticks_to_resolve: Option<u64>,
    #[serde(default)]
    pub escalation_reason: Option<String>,
}

/// One incident lifecycle, from detection to resolution or escalation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub id: String,
    pub start_tick: Tick,
    pub end_tick: Tick,
    pub affected_service: EntityId,
    pub symptom_attributes: BTreeSet<String>,
    /// Entities cited by the episode's alerts, plus their hosting nodes.
    pub evidence_entities: BTreeSet<EntityId>,
    pub max_severity: u8,
    /// Ground truth, recorded after the fact for scoring only.
    #[serde(default)]
    pub root_cause_label: Option<FaultKind>,
    /// Cause of the hypothesis whose remediation resolved the episode.
    #[serde(default)]
    pub confirmed_cause: Option<FaultKind>,
    pub actions: Vec<EpisodeAction>,
    pub outcome: Outcome,
    #[serde(default)]
    pub feature_vector: Vec<f64>,
}

impl Episode {
    pub fn resolving_action(&self) -> Option<&EpisodeAction> {
        self.actions.iter().find(|a| a.result.succeeded())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingConfig {
    /// Durations are divided by this and clamped to 1.
    pub max_duration_ticks: u64,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig {
            max_duration_ticks: 50,
        }
    }
}

/// Attribute one-hots, then duration, max severity, category one-hots.
pub fn embedding_dim(vocab: &Vocabulary) -> usize {
    vocab.len() + 2 + Category::ALL.len()
}

pub fn embed(
    ep: &Episode,
    vocab: &Vocabulary,
    cfg: &EmbeddingConfig,
) -> Result<Vec<f64>, AmsnError> {
    embed_features(
        &ep.symptom_attributes,
        ep.end_tick.saturating_sub(ep.start_tick),
        ep.max_severity,
        vocab,
        cfg,
    )
}

/// Embedding of an open incident or a query built from its parts.
pub fn embed_features(
    symptoms: &BTreeSet<String>,
    duration: u64,
    max_severity: u8,
    vocab: &Vocabulary,
    cfg: &EmbeddingConfig,
) -> Result<Vec<f64>, AmsnError> {
    let mut v = vec![0.0; embedding_dim(vocab)];
    let mut categories = BTreeSet::new();
    for attr in symptoms {
        let idx = vocab
            .index_of(attr)
            .ok_or_else(|| AmsnError::UnknownAttribute(attr.clone()))?;
        v[idx] = 1.0;
        if let Some(c) = vocab.category_of(attr) {
            categories.insert(c);
        }
    }
    let base = vocab.len();
    v[base] = (duration as f64 / cfg.max_duration_ticks.max(1) as f64).min(1.0);
    v[base + 1] = f64::from(max_severity.min(3)) / 3.0;
    for (i, c) in Category::ALL.iter().enumerate() {
        if categories.contains(c) {
            v[base + 2 + i] = 1.0;
        }
    }
    Ok(v)
}

/// Cosine similarity; 0 when either vector has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na.sqrt() * nb.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tombstone {
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredEpisode {
    pub episode: Episode,
    #[serde(default)]
    pub tombstone: Option<Tombstone>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ForgetCriteria {
    /// Episodes that ended more than `max_age` ticks before `now`.
    Ttl { max_age: u64, now: Tick },
    /// Episodes whose evidence references any of these entities.
    Entities(BTreeSet<EntityId>),
    /// Episodes whose evidence is nonempty and lies entirely inside the set.
    ExclusivelyEntities(BTreeSet<EntityId>),
    /// Episodes with these ids.
    Incidents(BTreeSet<String>),
}

impl ForgetCriteria {
    fn matches(&self, ep: &Episode) -> bool {
        match self {
            ForgetCriteria::Ttl { max_age, now } => ep.end_tick.saturating_add(*max_age) < *now,
            ForgetCriteria::Entities(set) => ep.evidence_entities.iter().any(|e| set.contains(e)),
            ForgetCriteria::ExclusivelyEntities(set) => {
                !ep.evidence_entities.is_empty() && ep.evidence_entities.is_subset(set)
            }
            ForgetCriteria::Incidents(ids) => ids.contains(&ep.id),
        }
    }

    fn describe(&self) -> String {
        match self {
            ForgetCriteria::Ttl { max_age, now } => format!("ttl {max_age} at tick {now}"),
            ForgetCriteria::Entities(set) => {
                format!(
                    "entities {}",
                    set.iter().cloned().collect::<Vec<_>>().join(",")
                )
            }
            ForgetCriteria::ExclusivelyEntities(set) => {
                format!(
                    "only entities {}",
                    set.iter().cloned().collect::<Vec<_>>().join(",")
                )
            }
            ForgetCriteria::Incidents(ids) => {
                format!(
                    "incidents {}",
                    ids.iter().cloned().collect::<Vec<_>>().join(",")
                )
            }
        }
    }
}

/// Exhaustive-scan vector store. Tombstoned episodes stay for audit but are
/// invisible to search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodicStore {
    dim: usize,
    entries: Vec<StoredEpisode>,
}

#[derive(Debug, Clone, Copy)]
struct Ranked<'a> {
    sim: f64,
    episode: &'a Episode,
}

impl Ranked<'_> {
    /// Greater is better: higher similarity, then newer end tick, then smaller id.
    fn rank_cmp(&self, other: &Self) -> Ordering {
        self.sim
            .total_cmp(&other.sim)
            .then(self.episode.end_tick.cmp(&other.episode.end_tick))
            .then_with(|| other.episode.id.cmp(&self.episode.id))
    }
}

impl PartialEq for Ranked<'_> {
    fn eq(&self, other: &Self) -> bool {
        self.rank_cmp(other) == Ordering::Equal
    }
}

impl Eq for Ranked<'_> {}

impl PartialOrd for Ranked<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Ranked<'_> {
    // reversed so the BinaryHeap root is the worst kept candidate
    fn cmp(&self, other: &Self) -> Ordering {
        other.rank_cmp(self)
    }
}

pub const EPISODIC_FORMAT: &str = "opsloop-episodic";

#[derive(Debug, Serialize, Deserialize)]
struct ExportHeader {
    format: String,
    version: u32,
    dim: usize,
}

impl EpisodicStore {
    pub fn new(dim: usize) -> Self {
        EpisodicStore {
            dim,
            entries: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn insert(&mut self, episode: Episode) -> Result<(), AmsnError> {
        if episode.feature_vector.len() != self.dim {
            return Err(AmsnError::DimensionMismatch {
                expected: self.dim,
                found: episode.feature_vector.len(),
            });
        }
        if episode.end_tick < episode.start_tick {
            return Err(AmsnError::InvalidEpisode(format!(
                "{} ends before it starts",
                episode.id
            )));
        }
        if episode.symptom_attributes.is_empty() {
            return Err(AmsnError::InvalidEpisode(format!(
                "{} has no symptoms",
                episode.id
            )));
        }
        if self.entries.iter().any(|e| e.episode.id == episode.id) {
            return Err(AmsnError::DuplicateEpisode(episode.id));
        }
        self.entries.push(StoredEpisode {
            episode,
            tombstone: None,
        });
        Ok(())
    }

    /// Every episode ever inserted, tombstoned ones included.
    pub fn total_count(&self) -> usize {
        self.entries.len()
    }

    pub fn entries(&self) -> &[StoredEpisode] {
        &self.entries
    }

    pub fn active(&self) -> impl Iterator<Item = &Episode> {
        self.entries
            .iter()
            .filter(|e| e.tombstone.is_none())
            .map(|e| &e.episode)
    }

    pub fn active_count(&self) -> usize {
        self.active().count()
    }

    pub fn get(&self, id: &str) -> Option<&StoredEpisode> {
        self.entries.iter().find(|e| e.episode.id == id)
    }

    /// Top-`k` active episodes by cosine similarity to `query`.
    pub fn search(&self, query: &[f64], k: usize) -> Vec<(&Episode, f64)> {
        if k == 0 {
            return Vec::new();
        }
        let mut heap: BinaryHeap<Ranked<'_>> = BinaryHeap::with_capacity(k + 1);
        for ep in self.active() {
            heap.push(Ranked {
                sim: cosine(query, &ep.feature_vector),
                episode: ep,
            });
            if heap.len() > k {
                heap.pop();
            }
        }
        // ascending under the reversed Ord = best first
        heap.into_sorted_vec()
            .into_iter()
            .map(|r| (r.episode, r.sim))
            .collect()
    }

    /// Tombstones every active episode matching `criteria`; returns the count.
    pub fn forget(&mut self, criteria: &ForgetCriteria) -> usize {
        let mut n = 0;
        for entry in &mut self.entries {
            if entry.tombstone.is_none() && criteria.matches(&entry.episode) {
                entry.tombstone = Some(Tombstone {
                    reason: criteria.describe(),
                });
                n += 1;
            }
        }
        n
    }

    pub fn export_jsonl<W: Write>(&self, out: &mut W) -> io::Result<()> {
        let header = ExportHeader {
            format: EPISODIC_FORMAT.to_string(),
            version: 1,
            dim: self.dim,
        };
        serde_json::to_writer(&mut *out, &header)?;
        out.write_all(b"\n")?;
        for e in &self.entries {
            serde_json::to_writer(&mut *out, e)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn import_jsonl<R: BufRead>(input: R) -> Result<Self, AmsnError> {
        let mut lines = input.lines();
        let header: ExportHeader = match lines.next() {
            Some(line) => {
                serde_json::from_str(&line?).map_err(|e| AmsnError::Format(e.to_string()))?
            }
            None => return Err(AmsnError::Format("empty episodic export".into())),
        };
        if header.format != EPISODIC_FORMAT || header.version != 1 {
            return Err(AmsnError::Format(format!(
                "unsupported header {} v{}",
                header.format, header.version
            )));
        }
        let mut store = EpisodicStore::new(header.dim);
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: StoredEpisode =
                serde_json::from_str(&line).map_err(|e| AmsnError::Format(e.to_string()))?;
            let tombstone = entry.tombstone.clone();
            store.insert(entry.episode)?;
            store.entries.last_mut().expect("just inserted").tombstone = tombstone;
        }
        Ok(store)
    }
}
