use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::types::MilliUnits;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    Detector,
    Ace,
    Reasoner,
    Ill,
    Memory,
}

impl Component {
    pub const ALL: [Component; 5] = [
        Component::Detector,
        Component::Ace,
        Component::Reasoner,
        Component::Ill,
        Component::Memory,
    ];
}

/// Published tariffs, in thousandths of a unit.
pub mod tariff {
    use crate::types::MilliUnits;

    pub const DETECTOR_WINDOW: MilliUnits = MilliUnits(1000);
    pub const ILL_CLOSURE: MilliUnits = MilliUnits(1000);
    pub const MEMORY_ITEM: MilliUnits = MilliUnits(10);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetLimits {
    pub compute: MilliUnits,
    pub tool_calls: u64,
}

impl Default for BudgetLimits {
    fn default() -> Self {
        BudgetLimits {
            compute: MilliUnits::units(100_000),
            tool_calls: 1_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Overrun {
    Compute { used: MilliUnits, limit: MilliUnits },
    ToolCalls { used: u64, limit: u64 },
}

impl fmt::Display for Overrun {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Overrun::Compute { used, limit } => {
                write!(
                    f,
                    "compute {} units over limit {}",
                    used.as_units(),
                    limit.as_units()
                )
            }
            Overrun::ToolCalls { used, limit } => write!(f, "{used} tool calls over limit {limit}"),
        }
    }
}

/// Pack cost recorded at one assembly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackSpend {
    pub subtask: String,
    pub cost: u64,
    pub budget: u64,
}

/// Per-episode resource accounting. Charges are always recorded, so the
/// counters show the overrunning charge too.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetLedger {
    pub compute: BTreeMap<Component, MilliUnits>,
    pub tool_calls: u64,
    pub packs: Vec<PackSpend>,
    pub limits: BudgetLimits,
}

impl BudgetLedger {
    pub fn new(limits: BudgetLimits) -> Self {
        BudgetLedger {
            compute: Component::ALL
                .iter()
                .map(|c| (*c, MilliUnits::ZERO))
                .collect(),
            tool_calls: 0,
            packs: Vec::new(),
            limits,
        }
    }

    pub fn used(&self, c: Component) -> MilliUnits {
        self.compute.get(&c).copied().unwrap_or(MilliUnits::ZERO)
    }

    pub fn total(&self) -> MilliUnits {
        MilliUnits(self.compute.values().map(|m| m.0).sum())
    }

    pub fn charge(&mut self, c: Component, amount: MilliUnits) -> Result<(), Overrun> {
        let slot = self.compute.entry(c).or_insert(MilliUnits::ZERO);
        slot.0 += amount.0;
        self.check()
    }

    pub fn call(&mut self, n: u64) -> Result<(), Overrun> {
        self.tool_calls += n;
        self.check()
    }

    pub fn check(&self) -> Result<(), Overrun> {
        let used = self.total();
        if used > self.limits.compute {
            return Err(Overrun::Compute {
                used,
                limit: self.limits.compute,
            });
        }
        if self.tool_calls > self.limits.tool_calls {
            return Err(Overrun::ToolCalls {
                used: self.tool_calls,
                limit: self.limits.tool_calls,
            });
        }
        Ok(())
    }
}
