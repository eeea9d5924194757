//! Multi-episode experiment driver: config loading, the scripted fault loop,
//! the metrics report, artifact export and replay.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::amsn::{default_policies, seed_runbooks, PolicyDef, Runbook};
use crate::ill::{write_rules_jsonl, RuleStatus};
use crate::orchestrator::{
    Agent, AgentConfig, Component, EpisodeLog, MaintenanceRecord, OrchestratorError, PhaseDetail,
};
use crate::reasoner::DiagnosisPath;
use crate::sim::{FaultScenario, SimConfig, Simulator, TopologySpec};
use crate::types::{FaultKind, MilliUnits};
use crate::vocab::Vocabulary;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("config error: {0}")]
    Config(String),
    #[error("runtime failure: {0}")]
    Runtime(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl RunError {
    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 1,
            RunError::Runtime(_) | RunError::Io(_) => 2,
        }
    }
}

impl From<OrchestratorError> for RunError {
    fn from(e: OrchestratorError) -> Self {
        RunError::Runtime(e.to_string())
    }
}

fn default_delay() -> u64 {
    6
}

fn default_duration() -> u64 {
    60
}

fn default_magnitude() -> f64 {
    0.5
}

fn default_repeat() -> usize {
    1
}

fn default_detect_within() -> u64 {
    20
}

/// One script line. Faults wait `delay` quiet ticks, then inject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub kind: FaultKind,
    pub target: String,
    #[serde(default = "default_delay")]
    pub delay: u64,
    #[serde(default = "default_duration")]
    pub duration: u64,
    #[serde(default = "default_magnitude")]
    pub magnitude: f64,
    #[serde(default = "default_repeat")]
    pub repeat: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Topology spec file; the reference cluster when absent.
    #[serde(default)]
    pub topology: Option<PathBuf>,
    pub script: Vec<ScriptEntry>,
    pub seed: u64,
    pub episodes: usize,
    #[serde(default)]
    pub agent: AgentConfig,
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default)]
    pub vocabulary: Option<Vocabulary>,
    #[serde(default)]
    pub runbooks: Option<Vec<Runbook>>,
    #[serde(default)]
    pub policies: Option<Vec<PolicyDef>>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    /// Ticks a fault gets to raise an alert before the run fails.
    #[serde(default = "default_detect_within")]
    pub detect_within: u64,
}

impl RunConfig {
    /// Reads a JSON config. Relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, RunError> {
        let text = fs::read_to_string(path)
            .map_err(|e| RunError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| RunError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(t) = &cfg.topology {
            if t.is_relative() {
                cfg.topology = Some(base.join(t));
            }
        }
        if let Some(o) = &cfg.out {
            if o.is_relative() {
                cfg.out = Some(base.join(o));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), RunError> {
        let bad = |m: String| Err(RunError::Config(m));
        if let Some(t) = &self.topology {
            if !t.is_file() {
                return bad(format!("topology file {} does not exist", t.display()));
            }
        }
        if self.episodes > 0
            && !self
                .script
                .iter()
                .any(|e| e.kind != FaultKind::NodeDecommission && e.repeat > 0)
        {
            return bad("script has no fault entries".into());
        }
        for e in &self.script {
            if e.kind != FaultKind::NodeDecommission && !(e.magnitude > 0.0 && e.magnitude <= 1.0) {
                return bad(format!("magnitude {} outside (0, 1]", e.magnitude));
            }
            if e.duration == 0 {
                return bad("duration must be at least 1".into());
            }
        }
        if self.detect_within == 0 {
            return bad("detect_within must be at least 1".into());
        }
        let ill = &self.agent.ill;
        for (name, v) in [
            ("min_support", ill.min_support),
            ("min_confidence", ill.min_confidence),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return bad(format!("{name} {v} outside (0, 1]"));
            }
        }
        self.agent
            .ace
            .budget
            .validate()
            .map_err(|e| RunError::Config(e.to_string()))?;
        self.sim
            .validate()
            .map_err(|e| RunError::Config(e.to_string()))?;
        if let Some(v) = &self.vocabulary {
            v.validate().map_err(RunError::Config)?;
        }
        Ok(())
    }

    fn topology_spec(&self) -> Result<TopologySpec, RunError> {
        match &self.topology {
            None => Ok(TopologySpec::reference()),
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| RunError::Config(format!("{}: {e}", p.display())))?;
                serde_json::from_str(&text)
                    .map_err(|e| RunError::Config(format!("{}: {e}", p.display())))
            }
        }
    }
}

/// One report row per closed episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub index: usize,
    pub episode: String,
    pub fault_kind: FaultKind,
    pub target: String,
    pub top1: Option<FaultKind>,
    pub top1_suspect: Option<String>,
    pub correct: bool,
    pub path: Option<DiagnosisPath>,
    pub resolved: bool,
    pub escalated: bool,
    pub ticks_to_resolve: Option<u64>,
    pub compute: BTreeMap<Component, MilliUnits>,
    pub compute_total: MilliUnits,
    pub tool_calls: u64,
    /// Rules mined by a learning run that closed this episode.
    pub rules_mined: usize,
    /// Validated rules in the graph after the episode.
    pub rules_active: usize,
    /// Retired rules in the graph after the episode.
    pub rules_retired: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub episodes: usize,
    pub top1_accuracy: f64,
    pub resolved: usize,
    pub escalated: usize,
    /// Mean ticks to resolve over resolved episodes in each third of the run.
    pub mean_ticks_to_resolve: BTreeMap<String, Option<f64>>,
    pub rules_mined: usize,
    pub rules_validated: usize,
    pub rules_retired: usize,
    pub compute: BTreeMap<Component, MilliUnits>,
    pub compute_total: MilliUnits,
    pub tool_calls: u64,
}

pub const RUN_THIRDS: [&str; 3] = ["early", "middle", "late"];

impl Aggregates {
    /// Everything here is a function of the rows.
    pub fn from_rows(rows: &[ReportRow]) -> Self {
        let n = rows.len();
        let mut compute: BTreeMap<Component, MilliUnits> = Component::ALL
            .iter()
            .map(|c| (*c, MilliUnits::ZERO))
            .collect();
        for r in rows {
            for (c, m) in &r.compute {
                *compute.entry(*c).or_default() += *m;
            }
        }
        let mut thirds: BTreeMap<String, Option<f64>> = BTreeMap::new();
        for (t, name) in RUN_THIRDS.iter().enumerate() {
            let ticks: Vec<u64> = rows
                .iter()
                .enumerate()
                .filter(|(i, _)| i * 3 / n.max(1) == t)
                .filter_map(|(_, r)| r.ticks_to_resolve)
                .collect();
            let mean =
                (!ticks.is_empty()).then(|| ticks.iter().sum::<u64>() as f64 / ticks.len() as f64);
            thirds.insert(name.to_string(), mean);
        }
        let correct = rows.iter().filter(|r| r.correct).count();
        Aggregates {
            episodes: n,
            top1_accuracy: if n == 0 {
                0.0
            } else {
                correct as f64 / n as f64
            },
            resolved: rows.iter().filter(|r| r.resolved).count(),
            escalated: rows.iter().filter(|r| r.escalated).count(),
            mean_ticks_to_resolve: thirds,
            rules_mined: rows.iter().map(|r| r.rules_mined).sum(),
            rules_validated: rows.last().map_or(0, |r| r.rules_active),
            rules_retired: rows.last().map_or(0, |r| r.rules_retired),
            compute_total: MilliUnits(compute.values().map(|m| m.0).sum()),
            compute,
            tool_calls: rows.iter().map(|r| r.tool_calls).sum(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub rows: Vec<ReportRow>,
    pub aggregates: Aggregates,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum ReportLine {
    Episode(ReportRow),
    Summary(Aggregates),
}

impl RunReport {
    pub fn write_jsonl<W: Write>(&self, out: &mut W) -> io::Result<()> {
        for r in &self.rows {
            serde_json::to_writer(&mut *out, &ReportLine::Episode(r.clone()))?;
            writeln!(out)?;
        }
        serde_json::to_writer(&mut *out, &ReportLine::Summary(self.aggregates.clone()))?;
        writeln!(out)
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self, RunError> {
        let mut rows = Vec::new();
        let mut aggregates = None;
        for line in input.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str(&line)
                .map_err(|e| RunError::Config(format!("report: {e}")))?
            {
                ReportLine::Episode(r) => rows.push(r),
                ReportLine::Summary(a) => aggregates = Some(a),
            }
        }
        let aggregates =
            aggregates.ok_or_else(|| RunError::Config("report has no summary line".into()))?;
        Ok(RunReport { rows, aggregates })
    }
}

/// A finished run: the report plus everything needed for the artifacts.
pub struct RunOutput {
    pub report: RunReport,
    pub logs: Vec<EpisodeLog>,
    pub agent: Agent,
    pub sim: Simulator,
}

impl RunOutput {
    pub fn maintenance(&self) -> &[MaintenanceRecord] {
        &self.agent.maintenance
    }
}

fn row_for(index: usize, entry: &ScriptEntry, log: &EpisodeLog, agent: &Agent) -> ReportRow {
    let top = log.diagnosis.as_ref().and_then(|d| d.top());
    let rules_mined = log
        .phases
        .iter()
        .filter_map(|p| match &p.detail {
            PhaseDetail::Learning(s) => Some(s.mined),
            _ => None,
        })
        .sum();
    ReportRow {
        index,
        episode: log.incident.clone(),
        fault_kind: entry.kind,
        target: entry.target.clone(),
        top1: top.map(|h| h.fault_kind),
        top1_suspect: top.map(|h| h.suspect_entity.clone()),
        correct: top.is_some_and(|h| h.fault_kind == entry.kind),
        path: log.diagnosis.as_ref().map(|d| d.path),
        resolved: log.episode.outcome.resolved,
        escalated: log.escalated(),
        ticks_to_resolve: log.episode.outcome.ticks_to_resolve,
        compute: log.ledger.compute.clone(),
        compute_total: log.ledger.total(),
        tool_calls: log.ledger.tool_calls,
        rules_mined,
        rules_active: agent.kg.rules_with_status(RuleStatus::Validated).count(),
        rules_retired: agent.kg.rules_with_status(RuleStatus::Retired).count(),
    }
}

/// Runs the configured experiment in memory.
pub fn run(cfg: &RunConfig) -> Result<RunOutput, RunError> {
    cfg.validate()?;
    let spec = cfg.topology_spec()?;
    let mut sim = Simulator::from_spec(&spec, cfg.seed, cfg.sim.clone())
        .map_err(|e| RunError::Config(e.to_string()))?;
    for entry in &cfg.script {
        FaultScenario::new(
            entry.kind,
            &entry.target,
            0,
            entry.duration,
            entry.magnitude,
        )
        .validate(&sim.topology)
        .map_err(|e| {
            RunError::Config(format!(
                "script entry {} on {}: {e}",
                entry.kind, entry.target
            ))
        })?;
    }
    let vocab = cfg.vocabulary.clone().unwrap_or_default();
    let runbooks = cfg.runbooks.clone().unwrap_or_else(seed_runbooks);
    let policies = cfg.policies.clone().unwrap_or_else(default_policies);
    let mut agent = Agent::new(
        cfg.agent.clone(),
        vocab,
        &sim.topology,
        sim.config(),
        runbooks,
        &policies,
    )
    .map_err(|e| RunError::Config(e.to_string()))?;

    let mut rows = Vec::new();
    let mut logs = Vec::new();
    let mut first_pass = true;
    'outer: while rows.len() < cfg.episodes {
        for entry in &cfg.script {
            // decommissions are one-off maintenance, so later passes skip them
            if entry.kind == FaultKind::NodeDecommission {
                if first_pass {
                    settle(&mut agent, &mut sim, entry.delay)?;
                    sim.inject_fault(FaultScenario::decommission(&entry.target, sim.tick()))
                        .map_err(|e| RunError::Runtime(e.to_string()))?;
                }
                continue;
            }
            for _ in 0..entry.repeat {
                if rows.len() == cfg.episodes {
                    break 'outer;
                }
                settle(&mut agent, &mut sim, entry.delay)?;
                let scenario = FaultScenario::new(
                    entry.kind,
                    &entry.target,
                    sim.tick(),
                    entry.duration,
                    entry.magnitude,
                );
                sim.inject_fault(scenario)
                    .map_err(|e| RunError::Runtime(format!("episode {}: {e}", rows.len() + 1)))?;
                let obs = agent.watch(&mut sim, cfg.detect_within)?.ok_or_else(|| {
                    RunError::Runtime(format!(
                        "{} on {} not detected within {} ticks",
                        entry.kind, entry.target, cfg.detect_within
                    ))
                })?;
                let log = agent.run_episode(&mut sim, obs.alerts, Some(entry.kind))?;
                if log.escalated() {
                    // operator hand-off
                    sim.state.operator_resolve();
                }
                rows.push(row_for(rows.len() + 1, entry, &log, &agent));
                logs.push(log);
            }
        }
        first_pass = false;
    }
    let aggregates = Aggregates::from_rows(&rows);
    Ok(RunOutput {
        report: RunReport { rows, aggregates },
        logs,
        agent,
        sim,
    })
}

/// Watches `ticks` quiet ticks. Alerts here mean the cluster never settled.
fn settle(agent: &mut Agent, sim: &mut Simulator, ticks: u64) -> Result<(), RunError> {
    if let Some(obs) = agent.watch(sim, ticks)? {
        let names: Vec<String> = obs
            .alerts
            .iter()
            .map(|a| format!("{}:{}", a.entity, a.attribute))
            .collect();
        return Err(RunError::Runtime(format!(
            "unexpected alerts at tick {} before injection: {}",
            obs.tick,
            names.join(", ")
        )));
    }
    Ok(())
}

pub const REPORT_FILE: &str = "report.jsonl";
pub const EPISODES_FILE: &str = "episodes.jsonl";
pub const TRANSITIONS_FILE: &str = "transitions.log";
pub const KG_FILE: &str = "kg.tsv";
pub const EPISODIC_FILE: &str = "episodic.jsonl";
pub const RULES_FILE: &str = "rules.jsonl";
pub const MAINTENANCE_FILE: &str = "maintenance.jsonl";
pub const CONTEXTS_DIR: &str = "contexts";

fn create(path: &Path) -> io::Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(fs::File::create(path)?))
}

/// Writes every artifact of a run under `dir`.
pub fn write_outputs(out: &RunOutput, dir: &Path) -> Result<(), RunError> {
    fs::create_dir_all(dir.join(CONTEXTS_DIR))?;
    let mut w = create(&dir.join(REPORT_FILE))?;
    out.report.write_jsonl(&mut w)?;
    w.flush()?;

    let mut w = create(&dir.join(EPISODES_FILE))?;
    for log in &out.logs {
        serde_json::to_writer(&mut w, log).map_err(io::Error::from)?;
        writeln!(w)?;
    }
    w.flush()?;

    let mut w = create(&dir.join(TRANSITIONS_FILE))?;
    for t in &out.agent.transitions {
        writeln!(w, "{}", t.line())?;
    }
    w.flush()?;

    let mut w = create(&dir.join(KG_FILE))?;
    out.agent.kg.export_tsv(&mut w)?;
    w.flush()?;

    let mut w = create(&dir.join(EPISODIC_FILE))?;
    out.agent.episodic.export_jsonl(&mut w)?;
    w.flush()?;

    let mut w = create(&dir.join(RULES_FILE))?;
    write_rules_jsonl(&mut w, out.agent.kg.rules())?;
    w.flush()?;

    let mut w = create(&dir.join(MAINTENANCE_FILE))?;
    for m in out.maintenance() {
        serde_json::to_writer(&mut w, m).map_err(io::Error::from)?;
        writeln!(w)?;
    }
    w.flush()?;

    for (i, ctx) in out.agent.contexts.iter().enumerate() {
        let mut w = create(&dir.join(CONTEXTS_DIR).join(format!("ill_{:03}.csv", i + 1)))?;
        ctx.write_csv(&mut w)?;
        w.flush()?;
    }
    Ok(())
}

/// Loads the episode log next to `report` and renders one episode.
pub fn replay(report: &Path, episode: &str) -> Result<String, RunError> {
    let dir = report.parent().unwrap_or(Path::new("."));
    let path = dir.join(EPISODES_FILE);
    let file =
        fs::File::open(&path).map_err(|e| RunError::Config(format!("{}: {e}", path.display())))?;
    for line in BufReader::new(file).lines() {
        let line = line?;
        let log: EpisodeLog = serde_json::from_str(&line)
            .map_err(|e| RunError::Config(format!("episode log: {e}")))?;
        if log.incident == episode {
            return Ok(transcript(&log));
        }
    }
    Err(RunError::Config(format!("unknown episode `{episode}`")))
}

/// Human-readable account of one episode.
pub fn transcript(log: &EpisodeLog) -> String {
    let mut s = String::new();
    let ep = &log.episode;
    let _ = writeln!(
        s,
        "episode {} ticks {}..{} service {}",
        log.incident, ep.start_tick, ep.end_tick, ep.affected_service
    );
    let _ = writeln!(
        s,
        "symptoms: {}",
        ep.symptom_attributes
            .iter()
            .cloned()
            .collect::<Vec<_>>()
            .join(", ")
    );
    let _ = writeln!(s, "phases:");
    for p in &log.phases {
        let _ = write!(s, "  [{}] {:<10} ", p.tick, p.phase);
        let _ = match &p.detail {
            PhaseDetail::Detection { alerts, subtasks } => writeln!(
                s,
                "{} alerts, subtasks [{}]",
                alerts.len(),
                subtasks
                    .iter()
                    .map(|d| d.affected_service.as_str())
                    .collect::<Vec<_>>()
                    .join(", ")
            ),
            PhaseDetail::Enrichment { subtask, pack } => writeln!(
                s,
                "pack for {subtask}: {} items, cost {}/{}",
                pack.included.len(),
                pack.total_cost,
                pack.budget
            ),
            PhaseDetail::Diagnosis { subtask, diagnosis } => {
                let _ = writeln!(
                    s,
                    "{subtask}: {:?}, {} units",
                    diagnosis.path,
                    diagnosis.compute.as_units()
                );
                for h in &diagnosis.hypotheses {
                    let _ = writeln!(
                        s,
                        "      {} @ {} score {:.3} evidence [{}]",
                        h.fault_kind,
                        h.suspect_entity,
                        h.score,
                        h.evidence.join(", ")
                    );
                }
                Ok(())
            }
            PhaseDetail::Selection { hypothesis, plan } => {
                match (hypothesis, plan.runbooks.first()) {
                    (Some(h), Some(rb)) => writeln!(
                        s,
                        "{} for {} @ {}",
                        rb.runbook, h.fault_kind, h.suspect_entity
                    ),
                    _ => writeln!(s, "nothing to run"),
                }
            }
            PhaseDetail::Execution { runbook, results } => writeln!(
                s,
                "{runbook}: {}",
                results
                    .iter()
                    .map(|r| format!(
                        "{} {} -> {}",
                        r.action.kind,
                        r.action.target,
                        if r.succeeded() {
                            "success"
                        } else {
                            "no effect"
                        }
                    ))
                    .collect::<Vec<_>>()
                    .join("; ")
            ),
            PhaseDetail::Verification {
                clear,
                ticks,
                residual,
            } => writeln!(
                s,
                "{} after {} ticks{}",
                if *clear { "clear" } else { "persist" },
                ticks.len(),
                if residual.is_empty() {
                    String::new()
                } else {
                    format!(" ({})", residual.join(", "))
                }
            ),
            PhaseDetail::Logging { episode, resolved } => {
                writeln!(s, "stored {episode}, resolved={resolved}")
            }
            PhaseDetail::Learning(l) => writeln!(
                s,
                "run {}: {} episodes, {} concepts, {} mined, {} injected, {} retired",
                l.run, l.episodes, l.concepts, l.mined, l.injected, l.retired
            ),
            PhaseDetail::Failure {
                component,
                error,
                retried,
            } => {
                writeln!(
                    s,
                    "{component} failed{}: {error}",
                    if *retried { " again" } else { "" }
                )
            }
            PhaseDetail::Escalation { reason } => writeln!(s, "escalating: {reason}"),
        };
    }
    let _ = writeln!(s, "transitions:");
    for t in &log.transitions {
        let _ = writeln!(
            s,
            "  [{}] {} --{}--> {} (attempt {})",
            t.tick, t.from, t.event, t.to, t.attempt
        );
    }
    let _ = writeln!(
        s,
        "ledger: {} units, {} tool calls",
        log.ledger.total().as_units(),
        log.ledger.tool_calls
    );
    match &log.escalation_reason {
        Some(r) => {
            let _ = writeln!(s, "final: {} ({r})", log.final_phase);
        }
        None => {
            let _ = writeln!(s, "final: {}", log.final_phase);
        }
    }
    s
}
