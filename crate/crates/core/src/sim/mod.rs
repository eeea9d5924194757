//! Deterministic discrete-tick simulator of a small Kubernetes-like cluster.
//!
//! One tick is one telemetry interval. Every live node, pod and service
//! emits a fixed set of metrics per tick; injected faults add bounded
//! offsets (`magnitude × headroom`) to the metrics of their blast set, and a
//! correct remediation clears the offset within `remedy_delay` ticks.
//! Identical `(topology, scenarios, seed)` triples produce identical streams.

mod fault;
mod state;
mod topology;

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use fault::{
    blast_set, related_entities, remedy_for, target_kind, ActiveFault, BlastSet, FaultScenario,
};
pub use state::{
    ActionOutcome, ActionResult, RawEvent, RemediationAction, SimConfig, SimState, StepOutput,
    TelemetrySample, NODE_METRICS, POD_METRICS, SERVICE_METRICS,
};
pub use topology::{
    build_topology, ClusterTopology, EntityKind, NodeInfo, NodeSpec, PodSpec, RackSpec,
    ServiceSpec, TopologySpec,
};

use crate::types::{EntityId, Tick};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid topology: {0}")]
    InvalidTopology(String),
    #[error("pod `{pod}` references unknown node `{node}`")]
    DanglingPod { pod: EntityId, node: EntityId },
    #[error("service `{0}` depends on itself")]
    SelfDependency(EntityId),
    #[error("unknown entity `{0}`")]
    UnknownEntity(EntityId),
    #[error("entity `{0}` is decommissioned")]
    Decommissioned(EntityId),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
}

/// Topology plus state: the handle the orchestrator drives.
#[derive(Debug, Clone, PartialEq)]
pub struct Simulator {
    pub topology: ClusterTopology,
    pub state: SimState,
}

impl Simulator {
    pub fn new(topology: ClusterTopology, seed: u64, config: SimConfig) -> Result<Self, SimError> {
        config.validate()?;
        Ok(Simulator {
            topology,
            state: SimState::new(seed, config),
        })
    }

    pub fn from_spec(spec: &TopologySpec, seed: u64, config: SimConfig) -> Result<Self, SimError> {
        Self::new(build_topology(spec)?, seed, config)
    }

    pub fn tick(&self) -> Tick {
        self.state.tick
    }

    pub fn step(&mut self) -> StepOutput {
        self.state.step(&self.topology)
    }

    pub fn inject_fault(&mut self, scenario: FaultScenario) -> Result<String, SimError> {
        self.state.inject_fault(&self.topology, scenario)
    }

    pub fn apply_action(&mut self, action: &RemediationAction) -> Result<ActionResult, SimError> {
        self.state.apply_action(&self.topology, action)
    }

    pub fn config(&self) -> &SimConfig {
        &self.state.config
    }
}

/// One line of the exported telemetry/event stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StreamRecord {
    Sample {
        tick: Tick,
        entity: EntityId,
        metric: String,
        value: f64,
    },
    Event {
        tick: Tick,
        entity: EntityId,
        event_kind: String,
        #[serde(default)]
        attributes: std::collections::BTreeMap<String, String>,
    },
}

impl From<&TelemetrySample> for StreamRecord {
    fn from(s: &TelemetrySample) -> Self {
        StreamRecord::Sample {
            tick: s.tick,
            entity: s.entity.clone(),
            metric: s.metric.as_str().to_string(),
            value: s.value,
        }
    }
}

impl From<&RawEvent> for StreamRecord {
    fn from(e: &RawEvent) -> Self {
        StreamRecord::Event {
            tick: e.tick,
            entity: e.entity.clone(),
            event_kind: e.kind.as_str().to_string(),
            attributes: e.attributes.clone(),
        }
    }
}

impl StepOutput {
    pub fn stream_records(&self) -> impl Iterator<Item = StreamRecord> + '_ {
        self.samples
            .iter()
            .map(StreamRecord::from)
            .chain(self.events.iter().map(StreamRecord::from))
    }
}

pub fn write_stream<W: Write>(out: &mut W, step: &StepOutput) -> io::Result<()> {
    for rec in step.stream_records() {
        serde_json::to_writer(&mut *out, &rec)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_stream<R: BufRead>(input: R) -> io::Result<Vec<StreamRecord>> {
    let mut records = Vec::new();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(&line).map_err(io::Error::other)?);
    }
    Ok(records)
}
