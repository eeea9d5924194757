use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::context::FormalContext;
use super::rules::{count, mine_rules_counted, Rule, RuleStatus, CAUSE_PREFIX, RESOLVED_PREFIX};
use super::IllError;
use crate::amsn::kg::rel;
use crate::amsn::{Class, Episode, EpisodicStore, KnowledgeGraph, Provenance, Triple};
use crate::types::{ActionKind, EntityId, FaultKind, Tick};
use crate::vocab::Vocabulary;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IllConfig {
    pub min_support: f64,
    pub min_confidence: f64,
    /// Validated rules whose recomputed confidence falls below this retire.
    pub confidence_floor: f64,
    /// Validated rules unconfirmed for this many episodes retire.
    pub max_unconfirmed_episodes: u64,
    /// New episodes needed before the next run.
    pub cadence: u64,
}

impl Default for IllConfig {
    fn default() -> Self {
        IllConfig {
            min_support: 0.2,
            min_confidence: 0.8,
            confidence_floor: 0.5,
            max_unconfirmed_episodes: 50,
            cadence: 5,
        }
    }
}

/// Attribute order: vocabulary order, then `resolved_by_*` in action
/// order, then `cause_*` in fault order. Only attributes carried by at
/// least one episode are kept.
pub fn build_context(episodes: &[&Episode], vocab: &Vocabulary) -> Result<FormalContext, IllError> {
    if episodes.is_empty() {
        return Err(IllError::EmptyInput);
    }
    let rows: Vec<(String, BTreeSet<String>)> = episodes
        .iter()
        .map(|ep| {
            let mut attrs = BTreeSet::new();
            for a in &ep.symptom_attributes {
                if !vocab.contains(a) {
                    return Err(IllError::UnknownAttribute(a.clone()));
                }
                attrs.insert(a.clone());
            }
            if let Some(a) = ep.resolving_action() {
                attrs.insert(a.result.action.kind.resolved_label());
            }
            if let Some(k) = ep.confirmed_cause {
                attrs.insert(k.cause_label());
            }
            Ok((ep.id.clone(), attrs))
        })
        .collect::<Result<_, IllError>>()?;

    let universe = vocab
        .attributes
        .iter()
        .map(|a| a.name.clone())
        .chain(ActionKind::ALL.iter().map(|a| a.resolved_label()))
        .chain(FaultKind::ALL.iter().map(|k| k.cause_label()));
    let present: BTreeSet<&String> = rows.iter().flat_map(|(_, a)| a).collect();
    let attributes: Vec<String> = universe.filter(|a| present.contains(a)).collect();
    let incidence: Vec<Vec<bool>> = rows
        .iter()
        .map(|(_, attrs)| attributes.iter().map(|a| attrs.contains(a)).collect())
        .collect();
    FormalContext::new(
        rows.into_iter().map(|(id, _)| id).collect(),
        attributes,
        &incidence,
    )
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum Inconsistency {
    UnknownTerm { term: String },
    NotAFaultKind { term: String },
    Decommissioned,
    Contradiction { existing: String },
}

impl fmt::Display for Inconsistency {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Inconsistency::UnknownTerm { term } => write!(f, "unknown term `{term}`"),
            Inconsistency::NotAFaultKind { term } => write!(f, "`{term}` is not a fault kind"),
            Inconsistency::Decommissioned => f.write_str("decommissioned"),
            Inconsistency::Contradiction { existing } => write!(f, "contradicts {existing}"),
        }
    }
}

/// Episode id → entities cited as evidence. Built over every stored episode,
/// tombstoned ones included, so provenance stays resolvable after forgetting.
pub type EvidenceIndex = BTreeMap<String, BTreeSet<EntityId>>;

pub fn evidence_index(store: &EpisodicStore) -> EvidenceIndex {
    store
        .entries()
        .iter()
        .map(|e| (e.episode.id.clone(), e.episode.evidence_entities.clone()))
        .collect()
}

/// True when every provenance episode's evidence lies entirely on
/// decommissioned hardware.
pub fn bound_to_decommissioned(rule: &Rule, kg: &KnowledgeGraph, evidence: &EvidenceIndex) -> bool {
    let footprint = kg.decommissioned_footprint();
    if footprint.is_empty() || rule.provenance.is_empty() {
        return false;
    }
    rule.provenance.iter().all(|ep| {
        evidence
            .get(ep)
            .is_some_and(|ents| !ents.is_empty() && ents.is_subset(&footprint))
    })
}

pub fn check_consistency(
    rule: &Rule,
    kg: &KnowledgeGraph,
    evidence: &EvidenceIndex,
) -> Result<(), Inconsistency> {
    for term in rule.attributes() {
        if let Some(kind) = term.strip_prefix(CAUSE_PREFIX) {
            if kg.class_of(kind) != Some(Class::FaultKind) {
                return Err(Inconsistency::NotAFaultKind { term: term.clone() });
            }
        } else if let Some(action) = term.strip_prefix(RESOLVED_PREFIX) {
            if kg.class_of(action) != Some(Class::Action) {
                return Err(Inconsistency::UnknownTerm { term: term.clone() });
            }
        } else if kg.class_of(term) != Some(Class::Attribute) {
            return Err(Inconsistency::UnknownTerm { term: term.clone() });
        }
    }
    if bound_to_decommissioned(rule, kg, evidence) {
        return Err(Inconsistency::Decommissioned);
    }
    if let Some(cause) = rule.cause() {
        let rival = kg.rules_with_status(RuleStatus::Validated).find(|r| {
            r.id != rule.id
                && r.antecedent == rule.antecedent
                && r.cause().is_some_and(|c| c != cause)
                && r.confidence > rule.confidence
        });
        if let Some(r) = rival {
            return Err(Inconsistency::Contradiction {
                existing: r.id.clone(),
            });
        }
    }
    Ok(())
}

/// Upserts checked rules as validated `Rule` nodes. Returns how many rules
/// were written.
pub fn inject_rules(
    rules: &[Rule],
    kg: &mut KnowledgeGraph,
    tick: Tick,
    seq: u64,
) -> Result<usize, IllError> {
    if let Some(r) = rules.iter().find(|r| !r.checked) {
        return Err(IllError::Unchecked(r.id.clone()));
    }
    for rule in rules {
        kg.declare(&rule.id, Class::Rule)?;
        let mut put = |s: &str, p: &str, o: &str| {
            kg.assert(Triple::new(s, p, o, Provenance::Ill, tick))
                .map_err(IllError::Rejected)
        };
        for a in &rule.antecedent {
            put(&rule.id, rel::ANTECEDENT, a)?;
        }
        if let Some(k) = rule.cause() {
            put(&rule.id, rel::INDICATES, k.as_str())?;
        }
        if let Some(a) = rule.remedy() {
            put(&rule.id, rel::RECOMMENDS, a.as_str())?;
            if let Some(k) = rule.cause() {
                put(k.as_str(), rel::REMEDIED_BY, a.as_str())?;
            }
        }
        let table = kg.rules_mut();
        match table.get_mut(&rule.id) {
            Some(existing) => {
                existing.support = rule.support;
                existing.confidence = rule.confidence;
                existing.support_count = rule.support_count;
                existing.antecedent_count = rule.antecedent_count;
                existing.object_count = rule.object_count;
                existing.provenance = rule.provenance.clone();
                existing.last_confirmed_tick = tick;
                existing.last_confirmed_seq = seq;
                existing.status = RuleStatus::Validated;
                existing.checked = true;
                existing.retired_reason = None;
            }
            None => {
                let mut r = rule.clone();
                r.status = RuleStatus::Validated;
                r.asserted_tick = tick;
                r.last_confirmed_tick = tick;
                r.last_confirmed_seq = seq;
                table.insert(r.id.clone(), r);
            }
        }
    }
    Ok(rules.len())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "criterion", rename_all = "snake_case")]
pub enum RetireCriterion {
    ReferencesDecommissioned,
    ConfidenceBelow { floor: f64 },
    Unconfirmed { max_episodes: u64, now_seq: u64 },
}

/// Moves matching validated rules to `retired`. Their triples stay in the
/// graph for audit but are hidden from subgraph views.
pub fn retire_rules(
    kg: &mut KnowledgeGraph,
    criteria: &[RetireCriterion],
    evidence: &EvidenceIndex,
) -> usize {
    let mut verdicts: Vec<(String, String)> = Vec::new();
    for rule in kg.rules_with_status(RuleStatus::Validated) {
        let reason = criteria.iter().find_map(|c| match c {
            RetireCriterion::ReferencesDecommissioned => {
                bound_to_decommissioned(rule, kg, evidence).then(|| "decommissioned".to_string())
            }
            RetireCriterion::ConfidenceBelow { floor } => (rule.confidence < *floor)
                .then(|| format!("confidence {:.3} below {floor}", rule.confidence)),
            RetireCriterion::Unconfirmed {
                max_episodes,
                now_seq,
            } => (now_seq.saturating_sub(rule.last_confirmed_seq) > *max_episodes).then(|| {
                format!(
                    "unconfirmed for {} episodes",
                    now_seq - rule.last_confirmed_seq
                )
            }),
        });
        if let Some(reason) = reason {
            verdicts.push((rule.id.clone(), reason));
        }
    }
    let table = kg.rules_mut();
    for (id, reason) in &verdicts {
        if let Some(r) = table.get_mut(id) {
            r.status = RuleStatus::Retired;
            r.retired_reason = Some(reason.clone());
        }
    }
    verdicts.len()
}

/// Recomputes support and confidence of validated rules not re-mined in
/// this run, against the current context. Rules whose antecedent no
/// longer occurs keep their old numbers.
fn refresh_unconfirmed(kg: &mut KnowledgeGraph, ctx: &FormalContext, confirmed: &BTreeSet<String>) {
    for rule in kg.rules_mut().values_mut() {
        if rule.status != RuleStatus::Validated || confirmed.contains(&rule.id) {
            continue;
        }
        let ante: Vec<&String> = rule.antecedent.iter().collect();
        let Ok(a) = ctx.attr_set(&ante) else { continue };
        let c = match ctx.attr_set(&rule.consequent.iter().collect::<Vec<_>>()) {
            Ok(c) => c,
            // consequent absent from every current episode
            Err(_) => {
                let counts = count(ctx, &a, &ctx.empty_attrs());
                if counts.antecedent > 0 {
                    rule.confidence = 0.0;
                    rule.support = 0.0;
                    rule.support_count = 0;
                    rule.antecedent_count = counts.antecedent;
                    rule.object_count = counts.objects;
                }
                continue;
            }
        };
        let counts = count(ctx, &a, &c);
        if counts.antecedent == 0 {
            continue;
        }
        rule.support = counts.support();
        rule.confidence = counts.confidence();
        rule.support_count = counts.both;
        rule.antecedent_count = counts.antecedent;
        rule.object_count = counts.objects;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejected {
    pub rule: String,
    pub reason: Inconsistency,
}

#[derive(Debug, Clone)]
pub struct IllRun {
    pub context: FormalContext,
    pub concepts: usize,
    pub mined: usize,
    pub injected: usize,
    pub rejected: Vec<Rejected>,
    pub retired: usize,
    pub closures: u64,
}

/// One distillation pass over the active episodes: build the context,
/// enumerate, mine, check, inject, then retire.
pub fn run_ill(
    store: &EpisodicStore,
    kg: &mut KnowledgeGraph,
    vocab: &Vocabulary,
    cfg: &IllConfig,
    tick: Tick,
    seq: u64,
) -> Result<IllRun, IllError> {
    let episodes: Vec<&Episode> = store.active().collect();
    let context = build_context(&episodes, vocab)?;
    let (candidates, stats) = mine_rules_counted(&context, cfg.min_support, cfg.min_confidence)?;
    let concepts = stats.concepts;
    let evidence = evidence_index(store);

    let mut accepted = Vec::new();
    let mut rejected = Vec::new();
    for mut rule in candidates.iter().cloned() {
        match check_consistency(&rule, kg, &evidence) {
            Ok(()) => {
                rule.checked = true;
                accepted.push(rule);
            }
            Err(reason) => rejected.push(Rejected {
                rule: rule.id.clone(),
                reason,
            }),
        }
    }
    let injected = inject_rules(&accepted, kg, tick, seq)?;
    let confirmed: BTreeSet<String> = accepted.iter().map(|r| r.id.clone()).collect();
    refresh_unconfirmed(kg, &context, &confirmed);
    let retired = retire_rules(
        kg,
        &[
            RetireCriterion::ReferencesDecommissioned,
            RetireCriterion::ConfidenceBelow {
                floor: cfg.confidence_floor,
            },
            RetireCriterion::Unconfirmed {
                max_episodes: cfg.max_unconfirmed_episodes,
                now_seq: seq,
            },
        ],
        &evidence,
    );
    Ok(IllRun {
        context,
        concepts,
        mined: candidates.len(),
        injected,
        rejected,
        retired,
        closures: stats.closures,
    })
}
