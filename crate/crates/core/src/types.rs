//! Domain enums shared by every layer of the loop.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// One telemetry interval. The simulator never consults a wall clock.
pub type Tick = u64;

/// Identifier of a simulated entity (node, rack, switch, pod or service).
pub type EntityId = String;

macro_rules! string_enum {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(rename_all = "snake_case")]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(&self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = UnknownName;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s {
                    $($text => Ok($name::$variant),)+
                    other => Err(UnknownName {
                        kind: stringify!($name),
                        name: other.to_string(),
                    }),
                }
            }
        }
    };
}

/// Returned when parsing a closed-vocabulary name fails.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown {kind} `{name}`")]
pub struct UnknownName {
    pub kind: &'static str,
    pub name: String,
}

string_enum! {
    /// Injectable fault families.
    FaultKind {
        DnsErrorBurst => "dns_error_burst",
        TorPacketLoss => "tor_packet_loss",
        IngressThrottle => "ingress_throttle",
        NoisyNeighbor => "noisy_neighbor",
        NodeDecommission => "node_decommission",
    }
}

string_enum! {
    /// Remediation actions the agent may apply to the cluster.
    ActionKind {
        RestartPod => "restart_pod",
        ScaleReplicas => "scale_replicas",
        RerouteService => "reroute_service",
        ThrottleTenant => "throttle_tenant",
        FlushDnsCache => "flush_dns_cache",
        DrainNode => "drain_node",
    }
}

string_enum! {
    /// Per-entity metrics emitted every tick.
    Metric {
        CpuUtil => "cpu_util",
        MemUtil => "mem_util",
        DiskIo => "disk_io",
        NetLatencyMs => "net_latency_ms",
        PacketLossRate => "packet_loss_rate",
        PodRestarts => "pod_restarts",
        IngressLatencyMs => "ingress_latency_ms",
    }
}

string_enum! {
    /// Discrete events emitted by the simulator.
    EventKind {
        DnsError => "dns_error",
        ConfigChange => "config_change",
        NodeDecommissioned => "node_decommissioned",
        AuthFailure => "auth_failure",
    }
}

string_enum! {
    /// Record classification used by the unified schema.
    Category {
        Performance => "performance",
        Capacity => "capacity",
        Configuration => "configuration",
        Security => "security",
    }
}

impl FaultKind {
    /// Label attribute used in formal contexts, e.g. `cause_dns_error_burst`.
    pub fn cause_label(&self) -> String {
        format!("cause_{}", self.as_str())
    }

    pub fn from_cause_label(label: &str) -> Option<FaultKind> {
        label.strip_prefix("cause_")?.parse().ok()
    }
}

impl ActionKind {
    /// Label attribute used in formal contexts, e.g. `resolved_by_flush_dns_cache`.
    pub fn resolved_label(&self) -> String {
        format!("resolved_by_{}", self.as_str())
    }

    pub fn from_resolved_label(label: &str) -> Option<ActionKind> {
        label.strip_prefix("resolved_by_")?.parse().ok()
    }
}

/// Compute-unit quantity in thousandths, so ledger sums stay exact.
#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct MilliUnits(pub u64);

impl MilliUnits {
    pub const ZERO: MilliUnits = MilliUnits(0);

    pub fn units(n: u64) -> Self {
        MilliUnits(n * 1000)
    }

    pub fn as_units(&self) -> f64 {
        self.0 as f64 / 1000.0
    }
}

impl std::ops::Add for MilliUnits {
    type Output = MilliUnits;

    fn add(self, rhs: Self) -> Self {
        MilliUnits(self.0 + rhs.0)
    }
}

impl std::ops::AddAssign for MilliUnits {
    fn add_assign(&mut self, rhs: Self) {
        self.0 += rhs.0;
    }
}

impl std::ops::Mul<u64> for MilliUnits {
    type Output = MilliUnits;

    fn mul(self, rhs: u64) -> Self {
        MilliUnits(self.0 * rhs)
    }
}

impl std::iter::Sum for MilliUnits {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        MilliUnits(iter.map(|m| m.0).sum())
    }
}

impl fmt::Display for MilliUnits {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:03}", self.0 / 1000, self.0 % 1000)
    }
}
