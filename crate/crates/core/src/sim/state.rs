use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::fault::{blast_set, related_entities, remedy_for, ActiveFault, FaultScenario};
use super::topology::{ClusterTopology, EntityKind};
use super::SimError;
use crate::rng;
use crate::types::{ActionKind, EntityId, EventKind, FaultKind, Metric, Tick};

/// Metric constants for the simulated cluster. Tests compare against these
/// relative to baseline; the absolute values only need to leave headroom.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub baselines: BTreeMap<Metric, f64>,
    /// Perturbation at magnitude 1.0, added on top of baseline.
    pub headroom: BTreeMap<Metric, f64>,
    /// Uniform noise half-width as a fraction of baseline.
    pub noise_frac: f64,
    /// Ticks between a correct action and symptom clearance (at most 3).
    pub remedy_delay: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        use Metric::*;
        SimConfig {
            baselines: BTreeMap::from([
                (CpuUtil, 0.30),
                (MemUtil, 0.40),
                (DiskIo, 0.20),
                (NetLatencyMs, 20.0),
                (PacketLossRate, 0.001),
                (PodRestarts, 0.0),
                (IngressLatencyMs, 20.0),
            ]),
            headroom: BTreeMap::from([
                (CpuUtil, 0.70),
                (MemUtil, 0.60),
                (DiskIo, 0.80),
                (NetLatencyMs, 180.0),
                (PacketLossRate, 0.20),
                (PodRestarts, 5.0),
                (IngressLatencyMs, 180.0),
            ]),
            noise_frac: 0.02,
            remedy_delay: 1,
        }
    }
}

impl SimConfig {
    pub fn zero_noise() -> Self {
        SimConfig {
            noise_frac: 0.0,
            ..Self::default()
        }
    }

    pub fn baseline(&self, metric: Metric) -> f64 {
        self.baselines.get(&metric).copied().unwrap_or(0.0)
    }

    pub fn headroom(&self, metric: Metric) -> f64 {
        self.headroom.get(&metric).copied().unwrap_or(0.0)
    }

    /// True when `value` is within the noise half-width of `metric`'s baseline.
    pub fn within_noise_band(&self, metric: Metric, value: f64) -> bool {
        let b = self.baseline(metric);
        (value - b).abs() <= self.noise_frac * b.abs() + 1e-12
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(0.0..0.5).contains(&self.noise_frac) {
            return Err(SimError::InvalidScenario(format!(
                "noise_frac {} outside [0, 0.5)",
                self.noise_frac
            )));
        }
        if self.remedy_delay > 3 {
            return Err(SimError::InvalidScenario("remedy_delay must be ≤ 3".into()));
        }
        Ok(())
    }
}

pub const POD_METRICS: [Metric; 6] = [
    Metric::CpuUtil,
    Metric::MemUtil,
    Metric::DiskIo,
    Metric::NetLatencyMs,
    Metric::PacketLossRate,
    Metric::PodRestarts,
];
pub const NODE_METRICS: [Metric; 3] = [Metric::CpuUtil, Metric::MemUtil, Metric::DiskIo];
pub const SERVICE_METRICS: [Metric; 1] = [Metric::IngressLatencyMs];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetrySample {
    pub tick: Tick,
    pub entity: EntityId,
    pub metric: Metric,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawEvent {
    pub tick: Tick,
    pub entity: EntityId,
    pub kind: EventKind,
    #[serde(default)]
    pub attributes: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StepOutput {
    pub tick: Tick,
    pub samples: Vec<TelemetrySample>,
    pub events: Vec<RawEvent>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemediationAction {
    pub kind: ActionKind,
    pub target: EntityId,
}

impl RemediationAction {
    pub fn new(kind: ActionKind, target: impl Into<EntityId>) -> Self {
        RemediationAction {
            kind,
            target: target.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum ActionOutcome {
    Success { cleared: Vec<String> },
    NoEffect,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionResult {
    pub action: RemediationAction,
    pub tick: Tick,
    #[serde(flatten)]
    pub outcome: ActionOutcome,
}

impl ActionResult {
    pub fn succeeded(&self) -> bool {
        matches!(self.outcome, ActionOutcome::Success { .. })
    }
}

/// Complete simulator state. Cloning it yields an independent snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub tick: Tick,
    pub rng_seed: u64,
    pub config: SimConfig,
    pub active_faults: Vec<ActiveFault>,
    pub decommissioned: BTreeSet<EntityId>,
    /// Every fault ever injected, in injection order.
    pub fault_log: Vec<ActiveFault>,
    next_fault: u64,
    rng: ChaCha8Rng,
}

impl SimState {
    pub fn new(seed: u64, config: SimConfig) -> Self {
        SimState {
            tick: 0,
            rng_seed: seed,
            config,
            active_faults: Vec::new(),
            decommissioned: BTreeSet::new(),
            fault_log: Vec::new(),
            next_fault: 0,
            rng: rng::stream(seed, rng::SIM_STREAM),
        }
    }

    /// Baseline value of `metric` on `entity`.
    pub fn baseline(&self, _entity: &str, metric: Metric) -> f64 {
        self.config.baseline(metric)
    }

    pub fn is_live(&self, topo: &ClusterTopology, entity: &str) -> bool {
        match topo.entity_kind(entity) {
            Some(EntityKind::Node) => !self.decommissioned.contains(entity),
            Some(EntityKind::Pod) => topo
                .node_of_pod(entity)
                .is_some_and(|n| !self.decommissioned.contains(n)),
            Some(_) => true,
            None => false,
        }
    }

    pub fn inject_fault(
        &mut self,
        topo: &ClusterTopology,
        mut scenario: FaultScenario,
    ) -> Result<String, SimError> {
        scenario.validate(topo)?;
        if self.decommissioned.contains(&scenario.target) {
            return Err(SimError::Decommissioned(scenario.target));
        }
        if scenario.kind == FaultKind::NodeDecommission {
            scenario.duration = None;
        }
        let id = format!("f{}", self.next_fault);
        self.next_fault += 1;
        let fault = ActiveFault {
            id: id.clone(),
            scenario,
            remedied_at: None,
        };
        self.fault_log.push(fault.clone());
        self.active_faults.push(fault);
        Ok(id)
    }

    /// Faults that perturb telemetry at `tick`.
    pub fn contributing_faults(&self, tick: Tick) -> impl Iterator<Item = &ActiveFault> {
        self.active_faults.iter().filter(move |f| {
            f.scenario.kind != FaultKind::NodeDecommission && f.contributes_at(tick)
        })
    }

    /// Emits one tick of telemetry and events, then advances the clock.
    pub fn step(&mut self, topo: &ClusterTopology) -> StepOutput {
        let tick = self.tick;
        let mut events = Vec::new();

        for fault in &self.active_faults {
            let s = &fault.scenario;
            if s.kind == FaultKind::NodeDecommission
                && s.start_tick <= tick
                && !self.decommissioned.contains(&s.target)
            {
                events.push(RawEvent {
                    tick,
                    entity: s.target.clone(),
                    kind: EventKind::NodeDecommissioned,
                    attributes: BTreeMap::new(),
                });
            }
        }
        for ev in &events {
            self.decommissioned.insert(ev.entity.clone());
        }

        // offsets[(entity, metric)] accumulated from every contributing fault
        let mut offsets: BTreeMap<(EntityId, Metric), f64> = BTreeMap::new();
        let mut dns_pods: BTreeSet<EntityId> = BTreeSet::new();
        for fault in self.contributing_faults(tick) {
            let s = &fault.scenario;
            let blast = blast_set(topo, s);
            let mut bump = |entity: &EntityId, metric: Metric| {
                *offsets.entry((entity.clone(), metric)).or_default() +=
                    s.magnitude * self.config.headroom(metric);
            };
            match s.kind {
                FaultKind::DnsErrorBurst => {
                    for pod in &blast.pods {
                        bump(pod, Metric::NetLatencyMs);
                    }
                    dns_pods.extend(blast.pods.iter().cloned());
                }
                FaultKind::TorPacketLoss => {
                    for pod in &blast.pods {
                        bump(pod, Metric::PacketLossRate);
                        bump(pod, Metric::NetLatencyMs);
                    }
                }
                FaultKind::IngressThrottle => {
                    for svc in &blast.services {
                        bump(svc, Metric::IngressLatencyMs);
                    }
                }
                FaultKind::NoisyNeighbor => {
                    for pod in &blast.pods {
                        bump(pod, Metric::CpuUtil);
                        bump(pod, Metric::DiskIo);
                    }
                }
                FaultKind::NodeDecommission => {}
            }
        }

        let mut samples = Vec::new();
        let noise = self.config.noise_frac;
        let mut emit = |rng: &mut ChaCha8Rng, entity: &EntityId, metric: Metric| {
            // always draw so the stream position depends only on the sample count
            let u: f64 = rng.random_range(-1.0..=1.0);
            let base = self.config.baseline(metric);
            let offset = offsets
                .get(&(entity.clone(), metric))
                .copied()
                .unwrap_or(0.0);
            samples.push(TelemetrySample {
                tick,
                entity: entity.clone(),
                metric,
                value: base * (1.0 + noise * u) + offset,
            });
        };

        for node in topo.nodes.keys() {
            if self.decommissioned.contains(node) {
                continue;
            }
            for metric in NODE_METRICS {
                emit(&mut self.rng, node, metric);
            }
        }
        for (pod, node) in &topo.pods {
            if self.decommissioned.contains(node) {
                continue;
            }
            for metric in POD_METRICS {
                emit(&mut self.rng, pod, metric);
            }
        }
        for svc in topo.services.keys() {
            for metric in SERVICE_METRICS {
                emit(&mut self.rng, svc, metric);
            }
        }

        for pod in dns_pods {
            if !self.is_live(topo, &pod) {
                continue;
            }
            events.push(RawEvent {
                tick,
                entity: pod,
                kind: EventKind::DnsError,
                attributes: BTreeMap::from([("rcode".to_string(), "SERVFAIL".to_string())]),
            });
        }

        self.tick += 1;
        let now = self.tick;
        self.active_faults.retain(|f| !f.finished_by(now));

        StepOutput {
            tick,
            samples,
            events,
        }
    }

    /// Applies a remediation. A correct action (per the remedy table) naming an
    /// entity related to an active fault clears that fault's contribution
    /// after `remedy_delay` ticks; anything else has no effect.
    pub fn apply_action(
        &mut self,
        topo: &ClusterTopology,
        action: &RemediationAction,
    ) -> Result<ActionResult, SimError> {
        if !topo.contains(&action.target) {
            return Err(SimError::UnknownEntity(action.target.clone()));
        }
        if !self.is_live(topo, &action.target) {
            return Err(SimError::Decommissioned(action.target.clone()));
        }
        let tick = self.tick;
        let cleared_at = tick + self.config.remedy_delay;
        let mut cleared = Vec::new();
        for fault in &mut self.active_faults {
            if fault.remedied_at.is_some() || remedy_for(fault.scenario.kind) != action.kind {
                continue;
            }
            if fault.scenario.end_tick().is_some_and(|e| tick >= e) {
                continue;
            }
            if related_entities(topo, &fault.scenario).contains(&action.target) {
                fault.remedied_at = Some(cleared_at);
                cleared.push(fault.id.clone());
            }
        }
        for logged in &mut self.fault_log {
            if cleared.contains(&logged.id) {
                logged.remedied_at = Some(cleared_at);
            }
        }
        let outcome = if cleared.is_empty() {
            ActionOutcome::NoEffect
        } else {
            ActionOutcome::Success { cleared }
        };
        Ok(ActionResult {
            action: action.clone(),
            tick,
            outcome,
        })
    }

    /// Operator hand-off after escalation: every active fault is cleared from
    /// the next tick on. Decommissions are left to take effect.
    pub fn operator_resolve(&mut self) -> Vec<String> {
        let next = self.tick;
        let mut ids = Vec::new();
        for fault in &mut self.active_faults {
            if fault.scenario.kind != FaultKind::NodeDecommission && fault.remedied_at.is_none() {
                fault.remedied_at = Some(next);
                ids.push(fault.id.clone());
            }
        }
        for logged in &mut self.fault_log {
            if ids.contains(&logged.id) {
                logged.remedied_at = Some(next);
            }
        }
        self.active_faults.retain(|f| !f.finished_by(next));
        ids
    }
}
