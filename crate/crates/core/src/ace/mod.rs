//! Budgeted context assembly.
//!
//! Candidates from every memory tier are laid out in a fixed section order
//! and admitted greedily. Within a section the first item that would exceed
//! the section cap closes that section; across the pack the first item that
//! would exceed the pack budget closes the pack. Everything after a closing
//! point is traced as excluded, which keeps truncation monotone in the
//! budget.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::amsn::kg::rel;
use crate::amsn::{
    embed_features, AmsnError, EmbeddingConfig, EpisodicStore, KnowledgeGraph, PolicyFilter,
    Runbook, RunbookStore, ShortTermBuffer, Triple, WorkingItem,
};
use crate::ill::{Rule, RuleStatus};
use crate::ingest::Alert;
use crate::types::{ActionKind, EntityId, FaultKind, MilliUnits, Tick};
use crate::vocab::Vocabulary;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SectionKind {
    Task,
    Policies,
    ShortTerm,
    Episodic,
    KgSubgraph,
    Rules,
    Runbooks,
}

impl SectionKind {
    pub const ALL: [SectionKind; 7] = [
        SectionKind::Task,
        SectionKind::Policies,
        SectionKind::ShortTerm,
        SectionKind::Episodic,
        SectionKind::KgSubgraph,
        SectionKind::Rules,
        SectionKind::Runbooks,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            SectionKind::Task => "task",
            SectionKind::Policies => "policies",
            SectionKind::ShortTerm => "short_term",
            SectionKind::Episodic => "episodic",
            SectionKind::KgSubgraph => "kg_subgraph",
            SectionKind::Rules => "rules",
            SectionKind::Runbooks => "runbooks",
        }
    }
}

impl fmt::Display for SectionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error)]
pub enum AceError {
    #[error("task section needs {needed} units, budget allows {available}")]
    TaskDoesNotFit { needed: u64, available: u64 },
    #[error("invalid budget policy: {0}")]
    InvalidPolicy(String),
    #[error(transparent)]
    Memory(#[from] AmsnError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetPolicy {
    pub pack_budget: u64,
    pub section_caps: BTreeMap<SectionKind, u64>,
}

impl Default for BudgetPolicy {
    fn default() -> Self {
        BudgetPolicy {
            pack_budget: 256,
            section_caps: BTreeMap::from([
                (SectionKind::Task, 128),
                (SectionKind::Policies, 16),
                (SectionKind::ShortTerm, 32),
                (SectionKind::Episodic, 32),
                (SectionKind::KgSubgraph, 128),
                (SectionKind::Rules, 32),
                (SectionKind::Runbooks, 16),
            ]),
        }
    }
}

impl BudgetPolicy {
    pub fn validate(&self) -> Result<(), AceError> {
        if self.pack_budget == 0 {
            return Err(AceError::InvalidPolicy(
                "pack_budget must be positive".into(),
            ));
        }
        for s in SectionKind::ALL {
            match self.section_caps.get(&s) {
                Some(0) | None => {
                    return Err(AceError::InvalidPolicy(format!(
                        "section `{s}` needs a positive cap"
                    )));
                }
                Some(_) => {}
            }
        }
        Ok(())
    }

    pub fn cap(&self, s: SectionKind) -> u64 {
        self.section_caps.get(&s).copied().unwrap_or(0)
    }
}

pub const WEIGHT_MIN: u8 = 5;
pub const WEIGHT_MAX: u8 = 20;
pub const WEIGHT_DEFAULT: u8 = 10;

/// Section weights in tenths, clamped to `[0.5, 2.0]`. A weight scales the
/// section cap; the task section is never scaled.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AceState {
    pub weights: BTreeMap<SectionKind, u8>,
}

impl Default for AceState {
    fn default() -> Self {
        AceState {
            weights: SectionKind::ALL
                .iter()
                .map(|s| (*s, WEIGHT_DEFAULT))
                .collect(),
        }
    }
}

impl AceState {
    pub fn weight(&self, s: SectionKind) -> f64 {
        f64::from(self.weight_tenths(s)) / 10.0
    }

    pub fn weight_tenths(&self, s: SectionKind) -> u8 {
        self.weights.get(&s).copied().unwrap_or(WEIGHT_DEFAULT)
    }

    pub fn effective_cap(&self, policy: &BudgetPolicy, s: SectionKind) -> u64 {
        if s == SectionKind::Task {
            return policy.cap(s);
        }
        policy.cap(s) * u64::from(self.weight_tenths(s)) / 10
    }

    /// Sections cited by a successful diagnosis gain one step; a failure
    /// leaves the weights alone.
    pub fn update_feedback(&mut self, success: bool, cited: &BTreeSet<SectionKind>) {
        if !success {
            return;
        }
        for s in cited {
            let w = self.weights.entry(*s).or_insert(WEIGHT_DEFAULT);
            *w = (*w + 1).clamp(WEIGHT_MIN, WEIGHT_MAX);
        }
    }
}

/// The incident as the orchestrator hands it to assembly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IncidentDescriptor {
    pub incident: String,
    pub tick: Tick,
    pub affected_service: EntityId,
    pub affected_entities: BTreeSet<EntityId>,
    pub symptoms: BTreeSet<String>,
    pub max_severity: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeDigest {
    pub id: String,
    pub similarity: f64,
    pub symptoms: BTreeSet<String>,
    pub confirmed_cause: Option<FaultKind>,
    pub resolved_by: Option<ActionKind>,
    pub resolved: bool,
    pub actions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "item", rename_all = "snake_case")]
pub enum ItemContent {
    Descriptor(IncidentDescriptor),
    Alert(Alert),
    Policy(Triple),
    Working(WorkingItem),
    Episode(EpisodeDigest),
    Triple(Triple),
    Rule(Rule),
    Runbook(Runbook),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub section: SectionKind,
    pub key: String,
    pub priority: u8,
    pub rank: usize,
    pub cost: u64,
    pub content: ItemContent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackItem {
    pub key: String,
    pub priority: u8,
    pub cost: u64,
    pub content: ItemContent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Section {
    pub kind: SectionKind,
    pub cost: u64,
    pub items: Vec<PackItem>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Exclusion {
    SectionCap,
    PackBudget,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub section: SectionKind,
    pub key: String,
    pub cost: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub excluded: Option<Exclusion>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextPack {
    pub sections: Vec<Section>,
    pub total_cost: u64,
    pub budget: u64,
    pub trace: Vec<TraceEntry>,
    /// Memory records read while collecting candidates.
    pub touched: u64,
}

impl ContextPack {
    pub fn section(&self, kind: SectionKind) -> &Section {
        self.sections
            .iter()
            .find(|s| s.kind == kind)
            .expect("every section is present")
    }

    pub fn items(&self) -> impl Iterator<Item = (SectionKind, &PackItem)> {
        self.sections
            .iter()
            .flat_map(|s| s.items.iter().map(move |i| (s.kind, i)))
    }

    pub fn item_count(&self) -> usize {
        self.sections.iter().map(|s| s.items.len()).sum()
    }

    pub fn find(&self, key: &str) -> Option<(SectionKind, &PackItem)> {
        self.items().find(|(_, i)| i.key == key)
    }

    pub fn contains_key(&self, key: &str) -> bool {
        self.find(key).is_some()
    }

    pub fn descriptor(&self) -> Option<&IncidentDescriptor> {
        self.section(SectionKind::Task)
            .items
            .iter()
            .find_map(|i| match &i.content {
                ItemContent::Descriptor(d) => Some(d),
                _ => None,
            })
    }

    pub fn alerts(&self) -> impl Iterator<Item = (&str, &Alert)> {
        self.section(SectionKind::Task)
            .items
            .iter()
            .filter_map(|i| match &i.content {
                ItemContent::Alert(a) => Some((i.key.as_str(), a)),
                _ => None,
            })
    }

    pub fn triples(&self) -> impl Iterator<Item = (&str, &Triple)> {
        self.section(SectionKind::KgSubgraph)
            .items
            .iter()
            .filter_map(|i| match &i.content {
                ItemContent::Triple(t) => Some((i.key.as_str(), t)),
                _ => None,
            })
    }

    pub fn rules(&self) -> impl Iterator<Item = (&str, &Rule)> {
        self.section(SectionKind::Rules)
            .items
            .iter()
            .filter_map(|i| match &i.content {
                ItemContent::Rule(r) => Some((i.key.as_str(), r)),
                _ => None,
            })
    }

    pub fn runbooks(&self) -> impl Iterator<Item = &Runbook> {
        self.section(SectionKind::Runbooks)
            .items
            .iter()
            .filter_map(|i| match &i.content {
                ItemContent::Runbook(r) => Some(r),
                _ => None,
            })
    }

    /// ACE tariff: one unit per assembly plus a tenth per included item.
    pub fn compute_cost(&self) -> MilliUnits {
        MilliUnits::units(1) + MilliUnits(100) * self.item_count() as u64
    }
}

pub fn alert_key(a: &Alert) -> String {
    format!("alert:{}:{}", a.entity, a.attribute)
}

pub fn triple_key(t: &Triple) -> String {
    format!("triple:{}|{}|{}", t.subject, t.predicate, t.object)
}

/// Greedy packing of pre-ranked candidates. Pure: the result depends only
/// on the arguments.
pub fn pack(
    candidates: Vec<Candidate>,
    policy: &BudgetPolicy,
    state: &AceState,
) -> Result<ContextPack, AceError> {
    policy.validate()?;
    let mut by_section: BTreeMap<SectionKind, Vec<Candidate>> = BTreeMap::new();
    for c in candidates {
        by_section.entry(c.section).or_default().push(c);
    }
    let task_cost: u64 = by_section
        .get(&SectionKind::Task)
        .map(|v| v.iter().map(|c| c.cost).sum())
        .unwrap_or(0);
    let task_room = policy
        .pack_budget
        .min(state.effective_cap(policy, SectionKind::Task));
    if task_cost > task_room {
        return Err(AceError::TaskDoesNotFit {
            needed: task_cost,
            available: task_room,
        });
    }

    let mut sections = Vec::with_capacity(SectionKind::ALL.len());
    let mut trace = Vec::new();
    let mut total = 0u64;
    let mut pack_closed = false;
    for kind in SectionKind::ALL {
        let mut items = by_section.remove(&kind).unwrap_or_default();
        items.sort_by(|a, b| b.priority.cmp(&a.priority).then(a.rank.cmp(&b.rank)));
        let cap = state.effective_cap(policy, kind);
        let mut used = 0u64;
        let mut section_closed = false;
        let mut section = Section {
            kind,
            cost: 0,
            items: Vec::new(),
        };
        for c in items {
            let excluded = if pack_closed {
                Some(Exclusion::PackBudget)
            } else if section_closed || used + c.cost > cap {
                section_closed = true;
                Some(Exclusion::SectionCap)
            } else if total + c.cost > policy.pack_budget {
                pack_closed = true;
                Some(Exclusion::PackBudget)
            } else {
                None
            };
            trace.push(TraceEntry {
                section: kind,
                key: c.key.clone(),
                cost: c.cost,
                excluded,
            });
            if excluded.is_none() {
                used += c.cost;
                total += c.cost;
                section.cost += c.cost;
                section.items.push(PackItem {
                    key: c.key,
                    priority: c.priority,
                    cost: c.cost,
                    content: c.content,
                });
            }
        }
        sections.push(section);
    }
    Ok(ContextPack {
        sections,
        total_cost: total,
        budget: policy.pack_budget,
        trace,
        touched: 0,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AceConfig {
    /// Episodic neighbours to retrieve.
    pub k: usize,
    /// Subgraph radius around each affected entity.
    pub radius: usize,
    pub budget: BudgetPolicy,
}

impl Default for AceConfig {
    fn default() -> Self {
        AceConfig {
            k: 5,
            radius: 2,
            budget: BudgetPolicy::default(),
        }
    }
}

/// Read-only handles on the memory tiers.
#[derive(Clone, Copy)]
pub struct MemoryView<'a> {
    pub buffer: &'a ShortTermBuffer<WorkingItem>,
    pub episodic: &'a EpisodicStore,
    pub kg: &'a KnowledgeGraph,
    pub runbooks: &'a RunbookStore,
    pub policy: &'a PolicyFilter,
    pub vocab: &'a Vocabulary,
    pub embedding: &'a EmbeddingConfig,
}

/// Collects ranked candidates from every tier for `desc`, returning them
/// with the number of memory records read.
pub fn collect_candidates(
    desc: &IncidentDescriptor,
    alerts: &[Alert],
    mem: MemoryView<'_>,
    cfg: &AceConfig,
) -> Result<(Vec<Candidate>, u64), AceError> {
    let mut out = Vec::new();
    let mut touched = 0u64;
    let mut push = |section, key: String, priority, rank, cost, content| {
        out.push(Candidate {
            section,
            key,
            priority,
            rank,
            cost,
            content,
        })
    };

    push(
        SectionKind::Task,
        format!("task:{}", desc.incident),
        3,
        0,
        1,
        ItemContent::Descriptor(desc.clone()),
    );
    for (i, a) in alerts.iter().enumerate() {
        push(
            SectionKind::Task,
            alert_key(a),
            3,
            i + 1,
            1,
            ItemContent::Alert(a.clone()),
        );
    }

    for (i, t) in mem.kg.policy_triples().into_iter().enumerate() {
        touched += 1;
        push(
            SectionKind::Policies,
            format!("policy:{}|{}", t.subject, t.object),
            2,
            i,
            1,
            ItemContent::Policy(t.clone()),
        );
    }

    let mut working: Vec<_> = mem.buffer.items_for_incident(&desc.incident).collect();
    touched += working.len() as u64;
    working.sort_by_key(|w| std::cmp::Reverse(w.seq));
    for (i, w) in working.into_iter().enumerate() {
        push(
            SectionKind::ShortTerm,
            format!("stm:{}", w.seq),
            w.priority,
            i,
            1,
            ItemContent::Working(w.item.clone()),
        );
    }

    if cfg.k > 0 && mem.episodic.active_count() > 0 {
        let query = embed_features(
            &desc.symptoms,
            0,
            desc.max_severity,
            mem.vocab,
            mem.embedding,
        )?;
        touched += mem.episodic.active_count() as u64;
        for (i, (ep, sim)) in mem.episodic.search(&query, cfg.k).into_iter().enumerate() {
            let digest = EpisodeDigest {
                id: ep.id.clone(),
                similarity: sim,
                symptoms: ep.symptom_attributes.clone(),
                confirmed_cause: ep.confirmed_cause,
                resolved_by: ep.resolving_action().map(|a| a.result.action.kind),
                resolved: ep.outcome.resolved,
                actions: ep.actions.len(),
            };
            push(
                SectionKind::Episodic,
                format!("episode:{}", ep.id),
                1,
                i,
                1 + ep.actions.len() as u64,
                ItemContent::Episode(digest),
            );
        }
    }

    let mut sources: Vec<&str> = vec![desc.affected_service.as_str()];
    sources.extend(
        desc.affected_entities
            .iter()
            .map(String::as_str)
            .filter(|e| *e != desc.affected_service),
    );
    let mut seen = BTreeSet::new();
    let mut rank = 0;
    for src in sources {
        let sub = mem.kg.subgraph(src, cfg.radius);
        touched += sub.len() as u64;
        for t in sub {
            if t.predicate == rel::CONSTRAINED_BY || !seen.insert(t.key()) {
                continue;
            }
            push(
                SectionKind::KgSubgraph,
                triple_key(&t),
                1,
                rank,
                1,
                ItemContent::Triple(t),
            );
            rank += 1;
        }
    }

    let mut rules: Vec<&Rule> = mem
        .kg
        .rules_with_status(RuleStatus::Validated)
        .filter(|r| !r.antecedent.is_disjoint(&desc.symptoms))
        .collect();
    touched += mem.kg.rules().count() as u64;
    rules.sort_by(|a, b| {
        b.confidence
            .total_cmp(&a.confidence)
            .then_with(|| a.id.cmp(&b.id))
    });
    for (i, r) in rules.into_iter().enumerate() {
        push(
            SectionKind::Rules,
            r.id.clone(),
            2,
            i,
            1,
            ItemContent::Rule(r.clone()),
        );
    }

    touched += mem.runbooks.len() as u64;
    for (i, rb) in mem
        .runbooks
        .suggest(&desc.symptoms, mem.policy)
        .into_iter()
        .enumerate()
    {
        push(
            SectionKind::Runbooks,
            format!("runbook:{}", rb.id),
            2,
            i,
            1,
            ItemContent::Runbook(rb.clone()),
        );
    }
    Ok((out, touched))
}

pub fn assemble(
    desc: &IncidentDescriptor,
    alerts: &[Alert],
    mem: MemoryView<'_>,
    cfg: &AceConfig,
    state: &AceState,
) -> Result<ContextPack, AceError> {
    let (candidates, touched) = collect_candidates(desc, alerts, mem, cfg)?;
    let mut p = pack(candidates, &cfg.budget, state)?;
    p.touched = touched;
    Ok(p)
}
