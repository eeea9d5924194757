use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::topology::{ClusterTopology, EntityKind};
use super::SimError;
use crate::types::{ActionKind, EntityId, FaultKind, Tick};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultScenario {
    pub kind: FaultKind,
    pub target: EntityId,
    pub start_tick: Tick,
    /// `None` marks a persistent fault. Decommissions are always persistent.
    #[serde(default)]
    pub duration: Option<u64>,
    pub magnitude: f64,
}

impl FaultScenario {
    pub fn new(
        kind: FaultKind,
        target: impl Into<EntityId>,
        start_tick: Tick,
        duration: u64,
        magnitude: f64,
    ) -> Self {
        FaultScenario {
            kind,
            target: target.into(),
            start_tick,
            duration: Some(duration),
            magnitude,
        }
    }

    pub fn decommission(node: impl Into<EntityId>, start_tick: Tick) -> Self {
        FaultScenario {
            kind: FaultKind::NodeDecommission,
            target: node.into(),
            start_tick,
            duration: None,
            magnitude: 1.0,
        }
    }

    /// First tick at which the fault no longer contributes, if bounded.
    pub fn end_tick(&self) -> Option<Tick> {
        match self.kind {
            FaultKind::NodeDecommission => None,
            _ => self.duration.map(|d| self.start_tick + d),
        }
    }

    pub fn validate(&self, topo: &ClusterTopology) -> Result<(), SimError> {
        if !(self.magnitude > 0.0 && self.magnitude <= 1.0) {
            return Err(SimError::InvalidScenario(format!(
                "magnitude {} outside (0, 1]",
                self.magnitude
            )));
        }
        if self.duration == Some(0) {
            return Err(SimError::InvalidScenario(
                "duration must be ≥ 1 tick".into(),
            ));
        }
        let kind = topo
            .entity_kind(&self.target)
            .ok_or_else(|| SimError::UnknownEntity(self.target.clone()))?;
        if kind != target_kind(self.kind) {
            return Err(SimError::InvalidScenario(format!(
                "{} cannot target {:?} `{}`",
                self.kind, kind, self.target
            )));
        }
        Ok(())
    }
}

/// Entity type each fault family attaches to.
pub fn target_kind(kind: FaultKind) -> EntityKind {
    match kind {
        FaultKind::DnsErrorBurst | FaultKind::IngressThrottle => EntityKind::Service,
        FaultKind::TorPacketLoss => EntityKind::Switch,
        FaultKind::NoisyNeighbor | FaultKind::NodeDecommission => EntityKind::Node,
    }
}

/// The simulator's ground-truth remedy for each fault family. The agent never
/// reads this table; it only learns it through outcomes.
pub fn remedy_for(kind: FaultKind) -> ActionKind {
    match kind {
        FaultKind::DnsErrorBurst => ActionKind::FlushDnsCache,
        FaultKind::TorPacketLoss => ActionKind::RerouteService,
        FaultKind::IngressThrottle => ActionKind::ScaleReplicas,
        FaultKind::NoisyNeighbor => ActionKind::ThrottleTenant,
        FaultKind::NodeDecommission => ActionKind::DrainNode,
    }
}

/// Entities whose telemetry a fault perturbs.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BlastSet {
    pub pods: BTreeSet<EntityId>,
    pub services: BTreeSet<EntityId>,
}

pub fn blast_set(topo: &ClusterTopology, scenario: &FaultScenario) -> BlastSet {
    let mut blast = BlastSet::default();
    match scenario.kind {
        FaultKind::DnsErrorBurst => {
            for svc in topo.dependents_closure(&scenario.target) {
                if let Some(pods) = topo.services.get(&svc) {
                    blast.pods.extend(pods.iter().cloned());
                }
                blast.services.insert(svc);
            }
        }
        FaultKind::TorPacketLoss => {
            if let Some(rack) = topo.switches.get(&scenario.target) {
                blast.pods = topo.pods_in_rack(rack);
            }
        }
        FaultKind::IngressThrottle => {
            blast.services.insert(scenario.target.clone());
        }
        FaultKind::NoisyNeighbor => {
            blast.pods = topo.pods_on_node(&scenario.target);
        }
        FaultKind::NodeDecommission => {}
    }
    blast
}

/// Entities an action may name to reach the fault: the target itself, the
/// blast set, and the nodes, racks and services tied to it.
pub fn related_entities(topo: &ClusterTopology, scenario: &FaultScenario) -> BTreeSet<EntityId> {
    let blast = blast_set(topo, scenario);
    let mut related: BTreeSet<EntityId> = BTreeSet::from([scenario.target.clone()]);
    for pod in &blast.pods {
        if let Some(node) = topo.node_of_pod(pod) {
            related.insert(node.clone());
        }
        if let Some(svc) = topo.service_of_pod(pod) {
            related.insert(svc.clone());
        }
    }
    related.extend(blast.pods);
    related.extend(blast.services.iter().cloned());
    for svc in &blast.services {
        if let Some(pods) = topo.services.get(svc) {
            related.extend(pods.iter().cloned());
        }
    }
    if scenario.kind == FaultKind::TorPacketLoss {
        if let Some(rack) = topo.switches.get(&scenario.target) {
            related.insert(rack.clone());
            related.extend(topo.nodes_in_rack(rack));
        }
    }
    related
}

/// A scenario once injected into a running simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActiveFault {
    pub id: String,
    pub scenario: FaultScenario,
    /// Tick from which the fault stops contributing, once remedied.
    pub remedied_at: Option<Tick>,
}

impl ActiveFault {
    pub fn contributes_at(&self, tick: Tick) -> bool {
        let s = &self.scenario;
        if tick < s.start_tick {
            return false;
        }
        if let Some(end) = s.end_tick() {
            if tick >= end {
                return false;
            }
        }
        match self.remedied_at {
            Some(r) => tick < r,
            None => true,
        }
    }

    pub fn finished_by(&self, tick: Tick) -> bool {
        if self.scenario.kind == FaultKind::NodeDecommission {
            return tick > self.scenario.start_tick;
        }
        self.scenario.end_tick().is_some_and(|e| tick >= e)
            || self.remedied_at.is_some_and(|r| tick >= r)
    }
}
