use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::Tick;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Phase {
    Idle,
    Detecting,
    Enriching,
    Diagnosing,
    Selecting,
    Executing,
    Verifying,
    Logging,
    Learning,
    Escalated,
}

impl Phase {
    pub const ALL: [Phase; 10] = [
        Phase::Idle,
        Phase::Detecting,
        Phase::Enriching,
        Phase::Diagnosing,
        Phase::Selecting,
        Phase::Executing,
        Phase::Verifying,
        Phase::Logging,
        Phase::Learning,
        Phase::Escalated,
    ];
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Event {
    AlertRaised,
    PackReady,
    HypothesesReady,
    PlanReady,
    ActionDone,
    SymptomsClear,
    SymptomsPersist,
    BudgetExceeded,
    Abstain,
    EpisodeLogged,
    LearningDone,
    /// A component failed twice in a row.
    ComponentFailed,
}

impl Event {
    pub const ALL: [Event; 12] = [
        Event::AlertRaised,
        Event::PackReady,
        Event::HypothesesReady,
        Event::PlanReady,
        Event::ActionDone,
        Event::SymptomsClear,
        Event::SymptomsPersist,
        Event::BudgetExceeded,
        Event::Abstain,
        Event::EpisodeLogged,
        Event::LearningDone,
        Event::ComponentFailed,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Event::AlertRaised => "alert_raised",
            Event::PackReady => "pack_ready",
            Event::HypothesesReady => "hypotheses_ready",
            Event::PlanReady => "plan_ready",
            Event::ActionDone => "action_done",
            Event::SymptomsClear => "symptoms_clear",
            Event::SymptomsPersist => "symptoms_persist",
            Event::BudgetExceeded => "budget_exceeded",
            Event::Abstain => "abstain",
            Event::EpisodeLogged => "episode_logged",
            Event::LearningDone => "learning_done",
            Event::ComponentFailed => "component_failed",
        }
    }
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("illegal transition: {event} in phase {phase}")]
pub struct IllegalTransition {
    pub phase: Phase,
    pub event: Event,
}

/// Per-incident machine state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrchestratorState {
    pub phase: Phase,
    pub incident: Option<String>,
    /// Remediation attempts started for this incident.
    pub attempt: u32,
    pub escalation_after: u32,
    /// Whether the learning cadence is due when the episode is logged.
    pub learning_due: bool,
}

impl OrchestratorState {
    pub fn new(escalation_after: u32) -> Self {
        OrchestratorState {
            phase: Phase::Idle,
            incident: None,
            attempt: 0,
            escalation_after: escalation_after.max(1),
            learning_due: false,
        }
    }
}

/// The transition table. Returns the next state, or an error leaving the
/// input untouched.
pub fn transition(
    state: &OrchestratorState,
    event: Event,
) -> Result<OrchestratorState, IllegalTransition> {
    use Event as E;
    use Phase as P;
    let mut next = state.clone();
    let illegal = Err(IllegalTransition {
        phase: state.phase,
        event,
    });
    next.phase = match (state.phase, event) {
        (P::Escalated, _) => return illegal,
        (_, E::BudgetExceeded | E::ComponentFailed) => P::Escalated,
        (P::Idle, E::AlertRaised) => {
            next.attempt = 0;
            P::Detecting
        }
        // the detector confirmed the alert; collect context
        (P::Detecting, E::AlertRaised) => P::Enriching,
        (P::Enriching, E::PackReady) => P::Diagnosing,
        (P::Diagnosing, E::HypothesesReady) => {
            next.attempt = 1;
            P::Selecting
        }
        (P::Diagnosing, E::Abstain) => P::Escalated,
        (P::Selecting, E::PlanReady) => P::Executing,
        // nothing left to try
        (P::Selecting, E::Abstain) => P::Escalated,
        (P::Executing, E::ActionDone) => P::Verifying,
        (P::Verifying, E::SymptomsClear) => P::Logging,
        (P::Verifying, E::SymptomsPersist) => {
            if state.attempt >= state.escalation_after {
                P::Escalated
            } else {
                next.attempt += 1;
                P::Selecting
            }
        }
        (P::Logging, E::EpisodeLogged) => {
            if state.learning_due {
                P::Learning
            } else {
                P::Idle
            }
        }
        (P::Learning, E::LearningDone) => P::Idle,
        _ => return illegal,
    };
    if next.phase == P::Idle {
        next.learning_due = false;
    }
    Ok(next)
}

/// One line of the transition audit log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionRecord {
    pub incident: String,
    pub tick: Tick,
    pub from: Phase,
    pub event: Event,
    pub to: Phase,
    /// Attempt counter before the transition.
    pub attempt: u32,
    pub escalation_after: u32,
    pub learning_due: bool,
}

impl TransitionRecord {
    pub fn line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}\tattempt={}/{}",
            self.incident,
            self.tick,
            self.from,
            self.event,
            self.to,
            self.attempt,
            self.escalation_after
        )
    }
}

/// Replays every record against the table. Also checks that consecutive
/// records of one incident chain up.
pub fn audit(records: &[TransitionRecord]) -> Result<(), String> {
    let mut prev: Option<&TransitionRecord> = None;
    for (i, r) in records.iter().enumerate() {
        let state = OrchestratorState {
            phase: r.from,
            incident: Some(r.incident.clone()),
            attempt: r.attempt,
            escalation_after: r.escalation_after,
            learning_due: r.learning_due,
        };
        let next = transition(&state, r.event).map_err(|e| format!("record {i}: {e}"))?;
        if next.phase != r.to {
            return Err(format!(
                "record {i}: table gives {} but log has {}",
                next.phase, r.to
            ));
        }
        if r.attempt > r.escalation_after {
            return Err(format!(
                "record {i}: attempt {} beyond {}",
                r.attempt, r.escalation_after
            ));
        }
        match prev {
            Some(p) if p.incident == r.incident && p.to != r.from => {
                return Err(format!("record {i}: starts in {} after {}", r.from, p.to));
            }
            Some(p) if p.incident != r.incident && r.from != Phase::Idle => {
                return Err(format!(
                    "record {i}: incident {} does not start Idle",
                    r.incident
                ));
            }
            None if r.from != Phase::Idle => return Err("log does not start Idle".into()),
            _ => {}
        }
        prev = Some(r);
    }
    Ok(())
}
