//! Diagnosis and planning over a context pack.
//!
//! [`GraphReasoner`] first looks for validated rules whose antecedent is
//! covered by the observed symptoms. If any match, their causes are the
//! hypotheses and no propagation runs. Otherwise alerts are scored by
//! distance from the affected service over the hosting and dependency
//! triples in the pack, and mapped to fault kinds through a symptom
//! signature table.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ace::{ContextPack, SectionKind};
use crate::amsn::kg::rel;
use crate::amsn::{PolicyFilter, RunbookStore};
use crate::ingest::Alert;
use crate::sim::RemediationAction;
use crate::types::{EntityId, FaultKind, MilliUnits};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ReasonerError {
    #[error("pack has no task descriptor")]
    MissingTask,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RootCauseHypothesis {
    pub fault_kind: FaultKind,
    pub suspect_entity: EntityId,
    pub score: f64,
    /// Pack item keys backing the hypothesis.
    pub evidence: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub via_rule: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagnosisPath {
    RuleShortcut,
    Propagation,
    Abstain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnosis {
    pub path: DiagnosisPath,
    pub hypotheses: Vec<RootCauseHypothesis>,
    pub compute: MilliUnits,
}

impl Diagnosis {
    pub fn top(&self) -> Option<&RootCauseHypothesis> {
        self.hypotheses.first()
    }

    pub fn abstained(&self) -> bool {
        self.hypotheses.is_empty()
    }

    /// Sections the hypotheses cite.
    pub fn cited_sections(&self, pack: &ContextPack) -> BTreeSet<SectionKind> {
        self.hypotheses
            .iter()
            .flat_map(|h| &h.evidence)
            .filter_map(|k| pack.find(k).map(|(s, _)| s))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannedRunbook {
    pub runbook: String,
    pub steps: Vec<RemediationAction>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionPlan {
    pub runbooks: Vec<PlannedRunbook>,
    /// Symptom attribute whose clearing ends the plan.
    pub stop_condition: Option<String>,
    pub escalation_after: u32,
}

impl ActionPlan {
    pub fn escalate_only(escalation_after: u32) -> Self {
        ActionPlan {
            runbooks: Vec::new(),
            stop_condition: None,
            escalation_after,
        }
    }

    pub fn is_escalate_only(&self) -> bool {
        self.runbooks.is_empty()
    }
}

pub trait Reasoner {
    fn diagnose(&self, pack: &ContextPack) -> Result<Diagnosis, ReasonerError>;

    /// Plan for `hypothesis`, skipping `(runbook, target)` pairs in `tried`.
    fn plan(
        &self,
        hypothesis: Option<&RootCauseHypothesis>,
        pack: &ContextPack,
        store: &RunbookStore,
        policy: &PolicyFilter,
        tried: &BTreeSet<(String, EntityId)>,
    ) -> ActionPlan;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReasonerConfig {
    pub decay: f64,
    pub rule_boost: f64,
    pub escalation_after: u32,
}

impl Default for ReasonerConfig {
    fn default() -> Self {
        ReasonerConfig {
            decay: 0.7,
            rule_boost: 2.0,
            escalation_after: 3,
        }
    }
}

/// Attributes that identify each fault family.
pub fn signature(kind: FaultKind) -> &'static [&'static str] {
    match kind {
        FaultKind::DnsErrorBurst => &["dns_error"],
        FaultKind::TorPacketLoss => &["packet_loss_high"],
        FaultKind::IngressThrottle => &["ingress_latency_high"],
        FaultKind::NoisyNeighbor => &["cpu_high", "disk_high"],
        FaultKind::NodeDecommission => &["node_decommissioned"],
    }
}

/// Hosting and dependency edges visible in a pack.
#[derive(Debug, Default)]
struct PackGraph<'a> {
    serves: BTreeMap<&'a str, &'a str>,
    runs_on: BTreeMap<&'a str, &'a str>,
    member_of: BTreeMap<&'a str, &'a str>,
    uplink: BTreeMap<&'a str, &'a str>,
    services: BTreeSet<&'a str>,
    adjacency: BTreeMap<&'a str, BTreeSet<&'a str>>,
}

impl<'a> PackGraph<'a> {
    fn from_pack(pack: &'a ContextPack) -> Self {
        let mut g = PackGraph::default();
        for (_, t) in pack.triples() {
            let (s, o) = (t.subject.as_str(), t.object.as_str());
            match t.predicate.as_str() {
                rel::SERVES => {
                    g.serves.insert(s, o);
                    g.services.insert(o);
                }
                rel::RUNS_ON => {
                    g.runs_on.insert(s, o);
                }
                rel::MEMBER_OF => {
                    g.member_of.insert(s, o);
                }
                rel::UPLINK => {
                    g.uplink.insert(s, o);
                }
                rel::DEPENDS_ON => {
                    g.services.insert(s);
                    g.services.insert(o);
                }
                _ => continue,
            }
            g.adjacency.entry(s).or_default().insert(o);
            g.adjacency.entry(o).or_default().insert(s);
        }
        g
    }

    /// Hop counts from `start`.
    fn distances(&self, start: &'a str) -> BTreeMap<&'a str, u32> {
        let mut dist = BTreeMap::from([(start, 0u32)]);
        let mut queue = VecDeque::from([start]);
        while let Some(cur) = queue.pop_front() {
            let d = dist[cur];
            for next in self.adjacency.get(cur).into_iter().flatten() {
                if !dist.contains_key(next) {
                    dist.insert(next, d + 1);
                    queue.push_back(next);
                }
            }
        }
        dist
    }

    /// The entity a fault of `kind` would be pinned on, given an alerted
    /// entity.
    fn suspect(&self, kind: FaultKind, entity: &'a str) -> Option<&'a str> {
        match kind {
            FaultKind::DnsErrorBurst | FaultKind::IngressThrottle => {
                if self.services.contains(entity) {
                    Some(entity)
                } else {
                    self.serves.get(entity).copied()
                }
            }
            FaultKind::TorPacketLoss => {
                let node = self.runs_on.get(entity)?;
                let rack = self.member_of.get(node)?;
                Some(self.uplink.get(rack).copied().unwrap_or(rack))
            }
            FaultKind::NoisyNeighbor | FaultKind::NodeDecommission => self
                .runs_on
                .get(entity)
                .copied()
                .or_else(|| self.member_of.contains_key(entity).then_some(entity)),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct GraphReasoner {
    pub config: ReasonerConfig,
}

impl GraphReasoner {
    pub fn new(config: ReasonerConfig) -> Self {
        GraphReasoner { config }
    }

    /// Rule-derived diagnosis. Taken only when the matching rules jointly
    /// explain every symptom; a symptom no rule accounts for sends the
    /// incident to propagation. `Err` carries the units spent matching.
    fn rule_shortcut(
        &self,
        pack: &ContextPack,
        graph: &PackGraph<'_>,
        symptoms: &BTreeSet<String>,
    ) -> Result<Diagnosis, MilliUnits> {
        let alerts: Vec<(&str, &Alert)> = pack.alerts().collect();
        let mut used = 0u64;
        let mut covered: BTreeSet<&str> = BTreeSet::new();
        let mut best: BTreeMap<(FaultKind, String), RootCauseHypothesis> = BTreeMap::new();
        for (key, rule) in pack.rules() {
            let Some(kind) = rule.cause() else { continue };
            if !rule.matches(symptoms) {
                continue;
            }
            used += 1;
            covered.extend(rule.antecedent.iter().map(String::as_str));
            let anchor = alerts
                .iter()
                .filter(|(_, a)| rule.antecedent.contains(&a.attribute))
                .min_by(|(_, a), (_, b)| {
                    b.severity
                        .cmp(&a.severity)
                        .then_with(|| a.entity.cmp(&b.entity))
                });
            let Some((alert_key, alert)) = anchor else {
                continue;
            };
            let suspect = graph
                .suspect(kind, &alert.entity)
                .unwrap_or(alert.entity.as_str())
                .to_string();
            let h = RootCauseHypothesis {
                fault_kind: kind,
                suspect_entity: suspect.clone(),
                score: rule.confidence * self.config.rule_boost,
                evidence: vec![key.to_string(), alert_key.to_string()],
                via_rule: Some(rule.id.clone()),
            };
            keep_max(&mut best, (kind, suspect), h);
        }
        let spent = MilliUnits::units(used);
        if used == 0 || best.is_empty() || symptoms.iter().any(|s| !covered.contains(s.as_str())) {
            return Err(spent);
        }
        Ok(Diagnosis {
            path: DiagnosisPath::RuleShortcut,
            hypotheses: ranked(best),
            compute: spent,
        })
    }

    fn propagate(&self, pack: &ContextPack, graph: &PackGraph<'_>, affected: &str) -> Diagnosis {
        let dist = graph.distances(affected);
        let visited = dist.len() as u64;
        let alerts: Vec<(&str, &Alert)> = pack.alerts().collect();
        let contribution = |a: &Alert| -> Option<f64> {
            let d = dist.get(a.entity.as_str())?;
            Some(f64::from(a.severity) * self.config.decay.powi(*d as i32))
        };

        let mut scores: BTreeMap<(FaultKind, String), (f64, Vec<String>)> = BTreeMap::new();
        let mut add = |kind: FaultKind, suspect: &str, c: f64, key: &str| {
            let e = scores
                .entry((kind, suspect.to_string()))
                .or_insert((0.0, Vec::new()));
            e.0 += c;
            e.1.push(key.to_string());
        };

        // nodes whose pods (or themselves) show both halves of the noisy signature
        let mut node_attrs: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
        for (_, a) in &alerts {
            if let Some(node) = graph.suspect(FaultKind::NoisyNeighbor, &a.entity) {
                node_attrs
                    .entry(node)
                    .or_default()
                    .insert(a.attribute.as_str());
            }
        }

        for (key, a) in &alerts {
            let Some(c) = contribution(a) else { continue };
            let kind = match a.attribute.as_str() {
                "dns_error" => FaultKind::DnsErrorBurst,
                "packet_loss_high" => FaultKind::TorPacketLoss,
                "ingress_latency_high" => FaultKind::IngressThrottle,
                "cpu_high" | "disk_high" => FaultKind::NoisyNeighbor,
                _ => continue,
            };
            let Some(suspect) = graph.suspect(kind, &a.entity) else {
                continue;
            };
            if kind == FaultKind::NoisyNeighbor {
                let seen = &node_attrs[suspect];
                if !(seen.contains("cpu_high") && seen.contains("disk_high")) {
                    continue;
                }
            }
            if kind == FaultKind::IngressThrottle && !graph.services.contains(a.entity.as_str()) {
                continue;
            }
            add(kind, suspect, c, key);
        }

        let best = scores
            .into_iter()
            .map(|((kind, suspect), (score, evidence))| {
                (
                    (kind, suspect.clone()),
                    RootCauseHypothesis {
                        fault_kind: kind,
                        suspect_entity: suspect,
                        score,
                        evidence,
                        via_rule: None,
                    },
                )
            })
            .collect();
        let hypotheses = ranked(best);
        Diagnosis {
            path: if hypotheses.is_empty() {
                DiagnosisPath::Abstain
            } else {
                DiagnosisPath::Propagation
            },
            hypotheses,
            compute: MilliUnits::units(visited),
        }
    }
}

fn keep_max(
    best: &mut BTreeMap<(FaultKind, String), RootCauseHypothesis>,
    key: (FaultKind, String),
    h: RootCauseHypothesis,
) {
    match best.get(&key) {
        Some(old) if old.score >= h.score => {}
        _ => {
            best.insert(key, h);
        }
    }
}

fn ranked(best: BTreeMap<(FaultKind, String), RootCauseHypothesis>) -> Vec<RootCauseHypothesis> {
    let mut v: Vec<_> = best.into_values().collect();
    v.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.suspect_entity.cmp(&b.suspect_entity))
            .then_with(|| a.fault_kind.cmp(&b.fault_kind))
    });
    v
}

impl Reasoner for GraphReasoner {
    fn diagnose(&self, pack: &ContextPack) -> Result<Diagnosis, ReasonerError> {
        let desc = pack.descriptor().ok_or(ReasonerError::MissingTask)?;
        let graph = PackGraph::from_pack(pack);
        match self.rule_shortcut(pack, &graph, &desc.symptoms) {
            Ok(d) => Ok(d),
            Err(spent) => {
                let mut d = self.propagate(pack, &graph, &desc.affected_service);
                d.compute += spent;
                Ok(d)
            }
        }
    }

    fn plan(
        &self,
        hypothesis: Option<&RootCauseHypothesis>,
        pack: &ContextPack,
        store: &RunbookStore,
        policy: &PolicyFilter,
        tried: &BTreeSet<(String, EntityId)>,
    ) -> ActionPlan {
        let n = self.config.escalation_after;
        let Some(h) = hypothesis else {
            return ActionPlan::escalate_only(n);
        };
        let sig: BTreeSet<String> = signature(h.fault_kind)
            .iter()
            .map(|s| s.to_string())
            .collect();
        let target = &h.suspect_entity;
        let fresh = |id: &str| !tried.contains(&(id.to_string(), target.clone()));
        let to_plan = |id: &str, steps: &[crate::types::ActionKind]| PlannedRunbook {
            runbook: id.to_string(),
            steps: steps
                .iter()
                .map(|k| RemediationAction::new(*k, target.clone()))
                .collect(),
        };
        let mut runbooks: Vec<PlannedRunbook> = pack
            .runbooks()
            .filter(|rb| !rb.trigger.is_disjoint(&sig) && fresh(&rb.id))
            .map(|rb| to_plan(&rb.id, &rb.steps))
            .collect();
        if runbooks.is_empty() {
            if let Some(rb) = store
                .seed_for(h.fault_kind, policy)
                .filter(|rb| fresh(&rb.id))
            {
                runbooks.push(to_plan(&rb.id, &rb.steps));
            }
        }
        if runbooks.is_empty() {
            return ActionPlan::escalate_only(n);
        }
        ActionPlan {
            runbooks,
            stop_condition: signature(h.fault_kind).first().map(|s| s.to_string()),
            escalation_after: n,
        }
    }
}
