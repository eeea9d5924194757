//! The observe/reason/act loop. One [`Agent`] owns every store and is the
//! only writer to them; each incident runs through a fresh per-incident
//! state machine whose transitions are appended to an audit log.

mod fsm;
mod ledger;

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use fsm::{
    audit, transition, Event, IllegalTransition, OrchestratorState, Phase, TransitionRecord,
};
pub use ledger::{tariff, BudgetLedger, BudgetLimits, Component, Overrun, PackSpend};

use crate::ace::{
    assemble, AceConfig, AceState, ContextPack, Exclusion, IncidentDescriptor, MemoryView,
    SectionKind,
};
use crate::amsn::kg::rel;
use crate::amsn::{
    embed, embedding_dim, AmsnError, Class, EmbeddingConfig, Episode, EpisodeAction, EpisodicStore,
    ForgetCriteria, KnowledgeGraph, Outcome, PolicyDef, PolicyFilter, Runbook, RunbookStore,
    ShortTermBuffer, WorkingItem,
};
use crate::ill::{
    evidence_index, retire_rules, run_ill, FormalContext, IllConfig, Rejected, RetireCriterion,
};
use crate::ingest::{
    detect_anomalies, normalize, Alert, Baselines, DetectorConfig, DetectorWindow, IngestError,
    RawInput,
};
use crate::reasoner::{
    ActionPlan, Diagnosis, GraphReasoner, PlannedRunbook, Reasoner, ReasonerConfig,
    RootCauseHypothesis,
};
use crate::sim::{ActionResult, ClusterTopology, SimConfig, Simulator, StepOutput};
use crate::types::{EntityId, FaultKind, MilliUnits, Tick};
use crate::vocab::Vocabulary;

/// Event attribute treated as a maintenance notice rather than an incident.
pub const MAINTENANCE_ATTRIBUTE: &str = "node_decommissioned";

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error(transparent)]
    Illegal(#[from] IllegalTransition),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Memory(#[from] AmsnError),
    #[error("no alerts to open an incident with")]
    NoAlerts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    pub detector: DetectorConfig,
    pub ace: AceConfig,
    pub reasoner: ReasonerConfig,
    pub ill: IllConfig,
    pub limits: BudgetLimits,
    pub embedding: EmbeddingConfig,
    pub policy: PolicyFilter,
    /// Ticks watched after an action before declaring the symptoms persistent.
    pub verify_ticks: u64,
    pub buffer_capacity: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            detector: DetectorConfig::default(),
            ace: AceConfig::default(),
            reasoner: ReasonerConfig::default(),
            ill: IllConfig::default(),
            limits: BudgetLimits::default(),
            embedding: EmbeddingConfig::default(),
            policy: PolicyFilter::default(),
            verify_ticks: 3,
            buffer_capacity: 64,
        }
    }
}

/// What one detector evaluation produced.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Observation {
    pub tick: Tick,
    pub alerts: Vec<Alert>,
    pub decommissioned: Vec<EntityId>,
}

impl Observation {
    pub fn is_incident(&self) -> bool {
        !self.alerts.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaintenanceRecord {
    pub tick: Tick,
    pub node: EntityId,
    pub forgotten: usize,
    pub retired: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackSummary {
    pub total_cost: u64,
    pub budget: u64,
    pub sections: BTreeMap<SectionKind, usize>,
    pub included: Vec<String>,
    pub excluded: Vec<(String, Exclusion)>,
}

impl PackSummary {
    pub fn of(pack: &ContextPack) -> Self {
        PackSummary {
            total_cost: pack.total_cost,
            budget: pack.budget,
            sections: pack
                .sections
                .iter()
                .map(|s| (s.kind, s.items.len()))
                .collect(),
            included: pack.items().map(|(_, i)| i.key.clone()).collect(),
            excluded: pack
                .trace
                .iter()
                .filter_map(|t| t.excluded.map(|e| (t.key.clone(), e)))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningSummary {
    pub run: usize,
    pub episodes: usize,
    pub concepts: usize,
    pub mined: usize,
    pub injected: usize,
    pub rejected: Vec<Rejected>,
    pub retired: usize,
    pub closures: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PhaseDetail {
    Detection {
        alerts: Vec<Alert>,
        subtasks: Vec<IncidentDescriptor>,
    },
    Enrichment {
        subtask: EntityId,
        pack: PackSummary,
    },
    Diagnosis {
        subtask: EntityId,
        diagnosis: Diagnosis,
    },
    Selection {
        hypothesis: Option<RootCauseHypothesis>,
        plan: ActionPlan,
    },
    Execution {
        runbook: String,
        results: Vec<ActionResult>,
    },
    Verification {
        clear: bool,
        ticks: Vec<Tick>,
        residual: Vec<String>,
    },
    Logging {
        episode: String,
        resolved: bool,
    },
    Learning(LearningSummary),
    Failure {
        component: String,
        error: String,
        retried: bool,
    },
    Escalation {
        reason: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseRecord {
    pub phase: Phase,
    pub tick: Tick,
    pub detail: PhaseDetail,
}

/// Everything one incident did, in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub incident: String,
    pub episode: Episode,
    pub final_phase: Phase,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub escalation_reason: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnosis: Option<Diagnosis>,
    pub phases: Vec<PhaseRecord>,
    pub transitions: Vec<TransitionRecord>,
    pub ledger: BudgetLedger,
    /// Transitions already fired when the ledger first went over a limit.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overrun_at: Option<usize>,
}

impl EpisodeLog {
    pub fn escalated(&self) -> bool {
        self.escalation_reason.is_some()
    }

    /// Keys of every pack item shown to the reasoner.
    pub fn pack_keys(&self) -> BTreeSet<&str> {
        self.phases
            .iter()
            .filter_map(|p| match &p.detail {
                PhaseDetail::Enrichment { pack, .. } => {
                    Some(pack.included.iter().map(String::as_str))
                }
                _ => None,
            })
            .flatten()
            .collect()
    }
}

/// Why `drive` stopped early.
enum Stop {
    Escalate(String),
    Internal(OrchestratorError),
}

impl From<OrchestratorError> for Stop {
    fn from(e: OrchestratorError) -> Self {
        Stop::Internal(e)
    }
}

/// Per-incident bookkeeping.
struct EpisodeRun {
    state: OrchestratorState,
    ledger: BudgetLedger,
    transitions: Vec<TransitionRecord>,
    phases: Vec<PhaseRecord>,
    now: Tick,
    overrun_at: Option<usize>,
}

impl EpisodeRun {
    fn new(incident: &str, escalation_after: u32, limits: BudgetLimits, now: Tick) -> Self {
        let mut state = OrchestratorState::new(escalation_after);
        state.incident = Some(incident.to_string());
        EpisodeRun {
            state,
            ledger: BudgetLedger::new(limits),
            transitions: Vec::new(),
            phases: Vec::new(),
            now,
            overrun_at: None,
        }
    }

    fn incident(&self) -> &str {
        self.state.incident.as_deref().unwrap_or_default()
    }

    fn fire(&mut self, event: Event) -> Result<Phase, Stop> {
        let next = transition(&self.state, event).map_err(|e| Stop::Internal(e.into()))?;
        self.transitions.push(TransitionRecord {
            incident: self.incident().to_string(),
            tick: self.now,
            from: self.state.phase,
            event,
            to: next.phase,
            attempt: self.state.attempt,
            escalation_after: self.state.escalation_after,
            learning_due: self.state.learning_due,
        });
        self.state = next;
        Ok(self.state.phase)
    }

    fn record(&mut self, detail: PhaseDetail) {
        self.phases.push(PhaseRecord {
            phase: self.state.phase,
            tick: self.now,
            detail,
        });
    }

    fn overrun(&mut self, r: Result<(), Overrun>) -> Result<(), Stop> {
        self.note(&r);
        match r {
            Ok(()) => Ok(()),
            Err(o) => {
                self.fire(Event::BudgetExceeded)?;
                Err(Stop::Escalate(format!("budget exceeded: {o}")))
            }
        }
    }

    fn note(&mut self, r: &Result<(), Overrun>) {
        if r.is_err() && self.overrun_at.is_none() {
            self.overrun_at = Some(self.transitions.len());
        }
    }

    fn charge(&mut self, c: Component, amount: MilliUnits) -> Result<(), Stop> {
        let r = self.ledger.charge(c, amount);
        self.overrun(r)
    }

    fn call(&mut self, n: u64) -> Result<(), Stop> {
        let r = self.ledger.call(n);
        self.overrun(r)
    }

    /// Runs `f`, retrying once. A second failure escalates.
    fn retry<T, E: fmt::Display>(
        &mut self,
        component: &str,
        mut f: impl FnMut() -> Result<T, E>,
    ) -> Result<T, Stop> {
        for retried in [false, true] {
            match f() {
                Ok(v) => return Ok(v),
                Err(e) => self.record(PhaseDetail::Failure {
                    component: component.to_string(),
                    error: e.to_string(),
                    retried,
                }),
            }
        }
        self.fire(Event::ComponentFailed)?;
        Err(Stop::Escalate(format!("{component} failed twice")))
    }
}

/// Facts gathered while an incident runs, for the closing episode.
#[derive(Default)]
struct Findings {
    diagnosis: Option<Diagnosis>,
    actions: Vec<EpisodeAction>,
    attempts: Vec<(String, bool)>,
    confirmed: Option<FaultKind>,
    cited: BTreeSet<SectionKind>,
    resolved_at: Option<Tick>,
    stored: bool,
}

/// The agent: memory tiers, detector state, reasoner and learning cadence.
#[derive(Debug, Clone)]
pub struct Agent<R: Reasoner = GraphReasoner> {
    pub config: AgentConfig,
    pub vocab: Vocabulary,
    pub baselines: Baselines,
    pub kg: KnowledgeGraph,
    pub episodic: EpisodicStore,
    pub runbooks: RunbookStore,
    pub buffer: ShortTermBuffer<WorkingItem>,
    pub ace: AceState,
    pub reasoner: R,
    pub transitions: Vec<TransitionRecord>,
    pub maintenance: Vec<MaintenanceRecord>,
    /// Formal context of each learning run, in order.
    pub contexts: Vec<FormalContext>,
    window: DetectorWindow,
    closed: u64,
    since_learning: u64,
}

impl Agent<GraphReasoner> {
    pub fn new(
        config: AgentConfig,
        vocab: Vocabulary,
        topology: &ClusterTopology,
        sim: &SimConfig,
        runbooks: impl IntoIterator<Item = Runbook>,
        policies: &[PolicyDef],
    ) -> Result<Self, OrchestratorError> {
        let reasoner = GraphReasoner::new(config.reasoner.clone());
        Self::with_reasoner(config, vocab, topology, sim, runbooks, policies, reasoner)
    }
}

impl<R: Reasoner> Agent<R> {
    pub fn with_reasoner(
        config: AgentConfig,
        vocab: Vocabulary,
        topology: &ClusterTopology,
        sim: &SimConfig,
        runbooks: impl IntoIterator<Item = Runbook>,
        policies: &[PolicyDef],
        reasoner: R,
    ) -> Result<Self, OrchestratorError> {
        Ok(Agent {
            baselines: Baselines::from_sim(sim, &vocab),
            kg: KnowledgeGraph::bootstrap(topology, &vocab, policies)?,
            episodic: EpisodicStore::new(embedding_dim(&vocab)),
            runbooks: RunbookStore::with_runbooks(runbooks)?,
            buffer: ShortTermBuffer::new(config.buffer_capacity.max(1)),
            ace: AceState::default(),
            reasoner,
            transitions: Vec::new(),
            maintenance: Vec::new(),
            contexts: Vec::new(),
            window: DetectorWindow::new(config.detector.window.max(1)),
            closed: 0,
            since_learning: 0,
            vocab,
            config,
        })
    }

    /// Episodes closed so far.
    pub fn closed_episodes(&self) -> u64 {
        self.closed
    }

    /// Feeds one tick to the detector window and evaluates it once full.
    pub fn observe(&mut self, out: &StepOutput) -> Result<Observation, OrchestratorError> {
        let mut records = Vec::with_capacity(out.samples.len() + out.events.len());
        for s in &out.samples {
            records.push(normalize(&RawInput::from(s), &self.vocab)?);
        }
        for e in &out.events {
            records.push(normalize(&RawInput::from(e), &self.vocab)?);
        }
        // maintenance notices bypass the window so none is missed after a reset
        let mut decommissioned: Vec<EntityId> = records
            .iter()
            .filter(|r| r.attribute == MAINTENANCE_ATTRIBUTE && r.severity > 0)
            .map(|r| r.entity.clone())
            .collect();
        decommissioned.dedup();
        self.window.push_tick(records);
        let mut obs = Observation {
            tick: out.tick,
            alerts: Vec::new(),
            decommissioned,
        };
        if self.window.is_full() {
            obs.alerts = detect_anomalies(
                &self.window.records(),
                &self.baselines,
                &self.config.detector,
            )
            .into_iter()
            .filter(|a| a.attribute != MAINTENANCE_ATTRIBUTE)
            .collect();
        }
        Ok(obs)
    }

    /// Steps the simulator while idle, handling maintenance notices, until
    /// an evaluation raises alerts or `max_ticks` pass.
    pub fn watch(
        &mut self,
        sim: &mut Simulator,
        max_ticks: u64,
    ) -> Result<Option<Observation>, OrchestratorError> {
        for _ in 0..max_ticks {
            let out = sim.step();
            let obs = self.observe(&out)?;
            for node in &obs.decommissioned {
                self.decommission(node, obs.tick)?;
            }
            if obs.is_incident() {
                return Ok(Some(obs));
            }
        }
        Ok(None)
    }

    /// Records a decommission: marks the node, forgets episodes whose evidence
    /// lies only on its footprint, and retires rules bound to it.
    pub fn decommission(
        &mut self,
        node: &str,
        tick: Tick,
    ) -> Result<MaintenanceRecord, OrchestratorError> {
        self.kg
            .mark_decommissioned(node, tick)
            .map_err(|r| OrchestratorError::Memory(AmsnError::Rejected(r)))?;
        // index before forgetting so provenance of forgotten episodes is kept
        let evidence = evidence_index(&self.episodic);
        let footprint = self.kg.decommissioned_footprint();
        let forgotten = self
            .episodic
            .forget(&ForgetCriteria::ExclusivelyEntities(footprint));
        let retired = retire_rules(
            &mut self.kg,
            &[RetireCriterion::ReferencesDecommissioned],
            &evidence,
        );
        let rec = MaintenanceRecord {
            tick,
            node: node.to_string(),
            forgotten,
            retired,
        };
        self.maintenance.push(rec.clone());
        Ok(rec)
    }

    /// Services an entity belongs to, read from the graph.
    fn services_of(&self, entity: &str) -> BTreeSet<EntityId> {
        match self.kg.class_of(entity) {
            Some(Class::Service) => BTreeSet::from([entity.to_string()]),
            Some(Class::Pod) => self
                .kg
                .objects(entity, rel::SERVES)
                .map(str::to_string)
                .collect(),
            Some(Class::Node) => self
                .kg
                .subjects(rel::RUNS_ON, entity)
                .flat_map(|pod| self.kg.objects(pod, rel::SERVES))
                .map(str::to_string)
                .collect(),
            _ => BTreeSet::new(),
        }
    }

    fn describe(&self, incident: &str, tick: Tick, alerts: &[Alert]) -> IncidentDescriptor {
        let entities: BTreeSet<EntityId> = alerts.iter().map(|a| a.entity.clone()).collect();
        let services: BTreeSet<EntityId> =
            entities.iter().flat_map(|e| self.services_of(e)).collect();
        let affected = services
            .iter()
            .max_by(|a, b| {
                downstream(&self.kg, a)
                    .len()
                    .cmp(&downstream(&self.kg, b).len())
                    .then_with(|| b.cmp(a))
            })
            .or_else(|| entities.first())
            .cloned()
            .unwrap_or_default();
        IncidentDescriptor {
            incident: incident.to_string(),
            tick,
            affected_service: affected,
            affected_entities: entities,
            symptoms: alerts.iter().map(|a| a.attribute.clone()).collect(),
            max_severity: alerts.iter().map(|a| a.severity).max().unwrap_or(0),
        }
    }

    fn hosting_nodes(&self, entities: &BTreeSet<EntityId>) -> BTreeSet<EntityId> {
        entities
            .iter()
            .flat_map(|e| self.kg.objects(e, rel::RUNS_ON))
            .map(str::to_string)
            .collect()
    }

    /// True when no telemetry sits beyond `k·σ` and no anomalous event
    /// other than maintenance notices was emitted.
    fn residual_symptoms(&self, out: &StepOutput) -> Result<Vec<String>, OrchestratorError> {
        let mut residual = BTreeSet::new();
        for s in &out.samples {
            let r = normalize(&RawInput::from(s), &self.vocab)?;
            if let (Some(x), Some((b, sigma))) = (r.value, self.baselines.get(&r.attribute)) {
                if x - b > self.config.detector.k * sigma {
                    residual.insert(format!("{}:{}", r.entity, r.attribute));
                }
            }
        }
        for e in &out.events {
            let r = normalize(&RawInput::from(e), &self.vocab)?;
            if r.severity > 0 && r.attribute != MAINTENANCE_ATTRIBUTE {
                residual.insert(format!("{}:{}", r.entity, r.attribute));
            }
        }
        Ok(residual.into_iter().collect())
    }

    fn enrich(
        &mut self,
        run: &mut EpisodeRun,
        subtask: &IncidentDescriptor,
        alerts: &[Alert],
    ) -> Result<ContextPack, Stop> {
        let mem = MemoryView {
            buffer: &self.buffer,
            episodic: &self.episodic,
            kg: &self.kg,
            runbooks: &self.runbooks,
            policy: &self.config.policy,
            vocab: &self.vocab,
            embedding: &self.config.embedding,
        };
        let sub_alerts: Vec<Alert> = alerts
            .iter()
            .filter(|a| subtask.affected_entities.contains(&a.entity))
            .cloned()
            .collect();
        let (cfg, state) = (&self.config.ace, &self.ace);
        let pack = run.retry("ace", || assemble(subtask, &sub_alerts, mem, cfg, state))?;
        run.record(PhaseDetail::Enrichment {
            subtask: subtask.affected_service.clone(),
            pack: PackSummary::of(&pack),
        });
        run.ledger.packs.push(PackSpend {
            subtask: subtask.affected_service.clone(),
            cost: pack.total_cost,
            budget: pack.budget,
        });
        run.call(1)?;
        run.charge(Component::Ace, pack.compute_cost())?;
        run.charge(Component::Memory, tariff::MEMORY_ITEM * pack.touched)?;
        Ok(pack)
    }

    /// Runs one incident from the detector's alerts to a closed episode.
    /// `truth` is stored on the episode for scoring and never read.
    pub fn run_episode(
        &mut self,
        sim: &mut Simulator,
        alerts: Vec<Alert>,
        truth: Option<FaultKind>,
    ) -> Result<EpisodeLog, OrchestratorError> {
        if alerts.is_empty() {
            return Err(OrchestratorError::NoAlerts);
        }
        let incident = format!("inc-{:04}", self.closed + 1);
        let start = alerts.iter().map(|a| a.tick).max().unwrap_or(sim.tick());
        let mut run = EpisodeRun::new(
            &incident,
            self.config.reasoner.escalation_after,
            self.config.limits,
            start,
        );
        let desc = self.describe(&incident, start, &alerts);
        let mut found = Findings::default();

        let stop = self.drive(sim, &alerts, &desc, &mut run, &mut found, truth);
        let escalation = match stop {
            Ok(()) => None,
            Err(Stop::Internal(e)) => return Err(e),
            Err(Stop::Escalate(reason)) => {
                run.record(PhaseDetail::Escalation {
                    reason: reason.clone(),
                });
                Some(reason)
            }
        };
        if !found.stored {
            run.now = sim.tick();
            if let Err(Stop::Internal(e)) =
                self.close(&mut run, &desc, &mut found, truth, escalation.clone())
            {
                return Err(e);
            }
        }
        self.window.clear();
        self.transitions.extend(run.transitions.iter().cloned());
        let episode = self
            .episodic
            .get(&incident)
            .map(|s| s.episode.clone())
            .ok_or_else(|| {
                OrchestratorError::Memory(AmsnError::InvalidEpisode(incident.clone()))
            })?;
        Ok(EpisodeLog {
            incident,
            episode,
            final_phase: run.state.phase,
            escalation_reason: escalation,
            diagnosis: found.diagnosis,
            phases: run.phases,
            transitions: run.transitions,
            ledger: run.ledger,
            overrun_at: run.overrun_at,
        })
    }

    fn drive(
        &mut self,
        sim: &mut Simulator,
        alerts: &[Alert],
        desc: &IncidentDescriptor,
        run: &mut EpisodeRun,
        found: &mut Findings,
        truth: Option<FaultKind>,
    ) -> Result<(), Stop> {
        run.fire(Event::AlertRaised)?;
        run.charge(Component::Detector, tariff::DETECTOR_WINDOW)?;
        self.buffer.open_incident(&desc.incident);
        for a in alerts {
            self.buffer.push(WorkingItem::Alert(a.clone()), a.severity);
        }
        run.charge(Component::Memory, tariff::MEMORY_ITEM * alerts.len() as u64)?;
        let subtasks = decompose(desc, &self.kg);
        run.record(PhaseDetail::Detection {
            alerts: alerts.to_vec(),
            subtasks: subtasks.clone(),
        });
        run.fire(Event::AlertRaised)?;

        let first = self.enrich(run, &subtasks[0], alerts)?;
        run.fire(Event::PackReady)?;

        let mut chosen = None;
        let mut pending = Some(first);
        for (i, st) in subtasks.iter().enumerate() {
            let pack = match pending.take() {
                Some(p) => p,
                None => self.enrich(run, &subtasks[i], alerts)?,
            };
            let reasoner = &self.reasoner;
            let diag = run.retry("reasoner", || reasoner.diagnose(&pack))?;
            run.record(PhaseDetail::Diagnosis {
                subtask: st.affected_service.clone(),
                diagnosis: diag.clone(),
            });
            run.charge(Component::Reasoner, diag.compute)?;
            if !diag.abstained() {
                chosen = Some((pack, diag));
                break;
            }
            found.diagnosis.get_or_insert(diag);
        }
        let Some((pack, diag)) = chosen else {
            run.fire(Event::Abstain)?;
            return Err(Stop::Escalate("diagnosis abstained".into()));
        };
        found.cited = diag.cited_sections(&pack);
        found.diagnosis = Some(diag.clone());
        run.fire(Event::HypothesesReady)?;

        let mut tried = BTreeSet::new();
        let mut hyp = VecDeque::from(diag.hypotheses.clone());
        loop {
            let mut selection: Option<(RootCauseHypothesis, PlannedRunbook)> = None;
            while let Some(h) = hyp.front() {
                let plan =
                    self.reasoner
                        .plan(Some(h), &pack, &self.runbooks, &self.config.policy, &tried);
                if let Some(rb) = plan.runbooks.first() {
                    selection = Some((h.clone(), rb.clone()));
                    run.record(PhaseDetail::Selection {
                        hypothesis: Some(h.clone()),
                        plan,
                    });
                    break;
                }
                hyp.pop_front();
            }
            let Some((h, rb)) = selection else {
                run.record(PhaseDetail::Selection {
                    hypothesis: None,
                    plan: ActionPlan::escalate_only(run.state.escalation_after),
                });
                run.fire(Event::Abstain)?;
                return Err(Stop::Escalate("no applicable runbook".into()));
            };
            tried.insert((rb.runbook.clone(), h.suspect_entity.clone()));
            run.fire(Event::PlanReady)?;

            let mut results = Vec::new();
            for step in &rb.steps {
                run.call(1)?;
                let r = run.retry("sim", || sim.apply_action(step))?;
                self.buffer.push(WorkingItem::Action(r.clone()), 2);
                found.actions.push(EpisodeAction {
                    runbook: Some(rb.runbook.clone()),
                    result: r.clone(),
                });
                results.push(r);
                // each action takes one tick to land
                sim.step();
                run.now = sim.tick();
            }
            run.charge(
                Component::Memory,
                tariff::MEMORY_ITEM * results.len() as u64,
            )?;
            run.record(PhaseDetail::Execution {
                runbook: rb.runbook.clone(),
                results,
            });
            run.fire(Event::ActionDone)?;

            let mut ticks = Vec::new();
            let mut residual = Vec::new();
            let mut clear = false;
            for _ in 0..self.config.verify_ticks {
                let out = sim.step();
                run.now = sim.tick();
                ticks.push(out.tick);
                residual = self.residual_symptoms(&out)?;
                if residual.is_empty() {
                    clear = true;
                    found.resolved_at = Some(out.tick);
                    break;
                }
            }
            run.record(PhaseDetail::Verification {
                clear,
                ticks,
                residual,
            });
            found.attempts.push((rb.runbook.clone(), clear));
            if clear {
                found.confirmed = Some(h.fault_kind);
                run.fire(Event::SymptomsClear)?;
                break;
            }
            if run.fire(Event::SymptomsPersist)? == Phase::Escalated {
                return Err(Stop::Escalate(format!(
                    "symptoms persist after {} attempts",
                    run.state.attempt
                )));
            }
        }

        self.close(run, desc, found, truth, None)?;
        run.state.learning_due = self.since_learning >= self.config.ill.cadence.max(1);
        if run.fire(Event::EpisodeLogged)? == Phase::Learning {
            let summary = self.learn(run)?;
            run.record(PhaseDetail::Learning(summary));
            run.fire(Event::LearningDone)?;
        }
        Ok(())
    }

    /// Stores the episode, records runbook outcomes, releases the buffer and
    /// feeds section weights.
    fn close(
        &mut self,
        run: &mut EpisodeRun,
        desc: &IncidentDescriptor,
        found: &mut Findings,
        truth: Option<FaultKind>,
        escalation: Option<String>,
    ) -> Result<(), Stop> {
        let resolved = escalation.is_none() && found.resolved_at.is_some();
        let mut evidence = desc.affected_entities.clone();
        evidence.extend(self.hosting_nodes(&desc.affected_entities));
        let end = found.resolved_at.unwrap_or(run.now);
        let mut ep = Episode {
            id: desc.incident.clone(),
            start_tick: desc.tick,
            end_tick: end.max(desc.tick),
            affected_service: desc.affected_service.clone(),
            symptom_attributes: desc.symptoms.clone(),
            evidence_entities: evidence,
            max_severity: desc.max_severity,
            root_cause_label: truth,
            confirmed_cause: if resolved { found.confirmed } else { None },
            actions: std::mem::take(&mut found.actions),
            outcome: Outcome {
                resolved,
                ticks_to_resolve: found
                    .resolved_at
                    .filter(|_| resolved)
                    .map(|t| t.saturating_sub(desc.tick)),
                escalation_reason: escalation.clone(),
            },
            feature_vector: Vec::new(),
        };
        ep.feature_vector =
            embed(&ep, &self.vocab, &self.config.embedding).map_err(OrchestratorError::from)?;
        self.episodic.insert(ep).map_err(OrchestratorError::from)?;
        found.stored = true;
        self.closed += 1;
        self.since_learning += 1;
        for (id, ok) in &found.attempts {
            self.runbooks
                .record_outcome(id, *ok)
                .map_err(OrchestratorError::from)?;
        }
        self.buffer.close_incident(&desc.incident);
        self.ace.update_feedback(resolved, &found.cited);
        run.record(PhaseDetail::Logging {
            episode: desc.incident.clone(),
            resolved,
        });
        if escalation.is_some() {
            // already escalated: account the write, nothing left to stop
            let r = run.ledger.call(1);
            run.note(&r);
            let r = run.ledger.charge(Component::Memory, tariff::MEMORY_ITEM);
            run.note(&r);
            return Ok(());
        }
        run.call(1)?;
        run.charge(Component::Memory, tariff::MEMORY_ITEM)
    }

    fn learn(&mut self, run: &mut EpisodeRun) -> Result<LearningSummary, Stop> {
        let (store, kg, vocab, cfg) = (&self.episodic, &mut self.kg, &self.vocab, &self.config.ill);
        let (tick, seq) = (run.now, self.closed);
        let result = run.retry("ill", || run_ill(store, kg, vocab, cfg, tick, seq))?;
        self.since_learning = 0;
        let summary = LearningSummary {
            run: self.contexts.len() + 1,
            episodes: result.context.objects().len(),
            concepts: result.concepts,
            mined: result.mined,
            injected: result.injected,
            rejected: result.rejected,
            retired: result.retired,
            closures: result.closures,
        };
        self.contexts.push(result.context);
        run.charge(Component::Ill, tariff::ILL_CLOSURE * result.closures)?;
        Ok(summary)
    }
}

/// Services `svc` transitively depends on, from `depends_on` triples.
pub fn downstream(kg: &KnowledgeGraph, svc: &str) -> BTreeSet<EntityId> {
    let mut seen = BTreeSet::new();
    let mut queue = VecDeque::from([svc.to_string()]);
    while let Some(cur) = queue.pop_front() {
        for next in kg.objects(&cur, rel::DEPENDS_ON) {
            if next != svc && seen.insert(next.to_string()) {
                queue.push_back(next.to_string());
            }
        }
    }
    seen
}

/// Splits an incident into one subtask per affected service, largest
/// downstream set first. Single-service incidents pass through unchanged.
pub fn decompose(desc: &IncidentDescriptor, kg: &KnowledgeGraph) -> Vec<IncidentDescriptor> {
    let mut owners: BTreeMap<EntityId, BTreeSet<EntityId>> = BTreeMap::new();
    let mut entities: Vec<&EntityId> = desc.affected_entities.iter().collect();
    entities.push(&desc.affected_service);
    for e in entities {
        let services: BTreeSet<EntityId> = match kg.class_of(e) {
            Some(Class::Service) => BTreeSet::from([e.clone()]),
            Some(Class::Pod) => kg.objects(e, rel::SERVES).map(str::to_string).collect(),
            Some(Class::Node) => kg
                .subjects(rel::RUNS_ON, e)
                .flat_map(|p| kg.objects(p, rel::SERVES))
                .map(str::to_string)
                .collect(),
            _ => BTreeSet::new(),
        };
        for s in services {
            owners.entry(s).or_default().insert(e.clone());
        }
    }
    if owners.len() <= 1 {
        return vec![desc.clone()];
    }
    let mut order: Vec<(usize, EntityId)> = owners
        .keys()
        .map(|s| (downstream(kg, s).len(), s.clone()))
        .collect();
    order.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
    order
        .into_iter()
        .map(|(_, svc)| {
            let mut entities: BTreeSet<EntityId> = owners[&svc]
                .iter()
                .filter(|e| desc.affected_entities.contains(*e))
                .cloned()
                .collect();
            if entities.is_empty() {
                entities.insert(svc.clone());
            }
            IncidentDescriptor {
                affected_service: svc,
                affected_entities: entities,
                ..desc.clone()
            }
        })
        .collect()
}
