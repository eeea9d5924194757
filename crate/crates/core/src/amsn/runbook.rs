use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::AmsnError;
use crate::types::{ActionKind, FaultKind};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Runbook {
    pub id: String,
    pub trigger: BTreeSet<String>,
    pub steps: Vec<ActionKind>,
    #[serde(default)]
    pub success_count: u64,
    #[serde(default)]
    pub attempt_count: u64,
    #[serde(default)]
    pub policy_tags: BTreeSet<String>,
    /// Fault family this runbook is the operator-seeded fallback for.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed_for: Option<FaultKind>,
}

impl Runbook {
    /// Laplace-smoothed success rate `(s + 1) / (n + 2)`.
    pub fn smoothed_rate(&self) -> f64 {
        (self.success_count + 1) as f64 / (self.attempt_count + 2) as f64
    }

    /// Ranking order: higher smoothed rate, then more attempts, then id.
    /// Rates are compared by cross-multiplication so ties are exact.
    pub fn rank_cmp(&self, other: &Runbook) -> Ordering {
        let lhs = u128::from(self.success_count + 1) * u128::from(other.attempt_count + 2);
        let rhs = u128::from(other.success_count + 1) * u128::from(self.attempt_count + 2);
        rhs.cmp(&lhs)
            .then(other.attempt_count.cmp(&self.attempt_count))
            .then_with(|| self.id.cmp(&other.id))
    }

    fn validate(&self) -> Result<(), AmsnError> {
        if self.steps.is_empty() {
            return Err(AmsnError::InvalidRunbook(format!(
                "{} has no steps",
                self.id
            )));
        }
        if self.success_count > self.attempt_count {
            return Err(AmsnError::InvalidRunbook(format!(
                "{} has more successes than attempts",
                self.id
            )));
        }
        Ok(())
    }
}

/// Runbook tags the active policies block.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyFilter {
    #[serde(default)]
    pub blocked_tags: BTreeSet<String>,
}

impl PolicyFilter {
    pub fn allows(&self, rb: &Runbook) -> bool {
        rb.policy_tags.is_disjoint(&self.blocked_tags)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunbookStore {
    runbooks: BTreeMap<String, Runbook>,
}

impl RunbookStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_runbooks(runbooks: impl IntoIterator<Item = Runbook>) -> Result<Self, AmsnError> {
        let mut store = Self::new();
        for rb in runbooks {
            store.add(rb)?;
        }
        Ok(store)
    }

    pub fn add(&mut self, rb: Runbook) -> Result<(), AmsnError> {
        rb.validate()?;
        if self.runbooks.contains_key(&rb.id) {
            return Err(AmsnError::InvalidRunbook(format!(
                "duplicate runbook {}",
                rb.id
            )));
        }
        self.runbooks.insert(rb.id.clone(), rb);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.runbooks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.runbooks.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Runbook> {
        self.runbooks.get(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Runbook> {
        self.runbooks.values()
    }

    /// Runbooks whose trigger is covered by `symptoms` and whose tags pass
    /// the policy filter, best first.
    pub fn suggest(&self, symptoms: &BTreeSet<String>, policy: &PolicyFilter) -> Vec<&Runbook> {
        let mut hits: Vec<&Runbook> = self
            .runbooks
            .values()
            .filter(|rb| rb.trigger.is_subset(symptoms) && policy.allows(rb))
            .collect();
        hits.sort_by(|a, b| a.rank_cmp(b));
        hits
    }

    pub fn seed_for(&self, kind: FaultKind, policy: &PolicyFilter) -> Option<&Runbook> {
        self.runbooks
            .values()
            .filter(|rb| rb.seed_for == Some(kind) && policy.allows(rb))
            .min_by(|a, b| a.rank_cmp(b))
    }

    /// Returns the updated `(success_count, attempt_count)`.
    pub fn record_outcome(&mut self, id: &str, success: bool) -> Result<(u64, u64), AmsnError> {
        let rb = self
            .runbooks
            .get_mut(id)
            .ok_or_else(|| AmsnError::UnknownRunbook(id.to_string()))?;
        rb.attempt_count += 1;
        if success {
            rb.success_count += 1;
        }
        Ok((rb.success_count, rb.attempt_count))
    }
}

/// One operator-seeded runbook per fault family.
pub fn seed_runbooks() -> Vec<Runbook> {
    let rb =
        |id: &str, trigger: &[&str], step: ActionKind, kind: FaultKind, tags: &[&str]| Runbook {
            id: id.to_string(),
            trigger: trigger.iter().map(|s| s.to_string()).collect(),
            steps: vec![step],
            success_count: 0,
            attempt_count: 0,
            policy_tags: tags.iter().map(|s| s.to_string()).collect(),
            seed_for: Some(kind),
        };
    vec![
        rb(
            "rb_flush_dns",
            &["dns_error"],
            ActionKind::FlushDnsCache,
            FaultKind::DnsErrorBurst,
            &[],
        ),
        rb(
            "rb_reroute",
            &["packet_loss_high"],
            ActionKind::RerouteService,
            FaultKind::TorPacketLoss,
            &[],
        ),
        rb(
            "rb_scale_out",
            &["ingress_latency_high"],
            ActionKind::ScaleReplicas,
            FaultKind::IngressThrottle,
            &[],
        ),
        rb(
            "rb_throttle_tenant",
            &["cpu_high", "disk_high"],
            ActionKind::ThrottleTenant,
            FaultKind::NoisyNeighbor,
            &["tenant_sla"],
        ),
        rb(
            "rb_drain",
            &["node_decommissioned"],
            ActionKind::DrainNode,
            FaultKind::NodeDecommission,
            &["change_freeze"],
        ),
    ]
}
