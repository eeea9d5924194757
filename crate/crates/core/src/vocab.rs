//! The closed attribute vocabulary and the record classification table.
//!
//! Ingest, episodic embedding, lattice learning and context assembly all
//! resolve symbolic attributes through one [`Vocabulary`], so a symptom name
//! means the same thing at every stage of the loop.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::types::{Category, EventKind, Metric};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeDef {
    pub name: String,
    pub category: Category,
}

/// How a metric is classified and which attribute its anomalies raise.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricClass {
    pub attribute: String,
    pub category: Category,
}

/// How an event kind is classified; `severity` 0 marks informational events.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventClass {
    pub attribute: String,
    pub category: Category,
    pub severity: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub version: String,
    pub attributes: Vec<AttributeDef>,
    pub metrics: BTreeMap<String, MetricClass>,
    pub events: BTreeMap<String, EventClass>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        use Category::*;

        let metric = |m: Metric, attr: &str, cat| {
            (
                m.as_str().to_string(),
                MetricClass {
                    attribute: attr.to_string(),
                    category: cat,
                },
            )
        };
        let event = |e: EventKind, attr: &str, cat, severity| {
            (
                e.as_str().to_string(),
                EventClass {
                    attribute: attr.to_string(),
                    category: cat,
                    severity,
                },
            )
        };

        let metrics = BTreeMap::from([
            metric(Metric::CpuUtil, "cpu_high", Capacity),
            metric(Metric::MemUtil, "mem_high", Capacity),
            metric(Metric::DiskIo, "disk_high", Performance),
            metric(Metric::NetLatencyMs, "latency_spike", Performance),
            metric(Metric::PacketLossRate, "packet_loss_high", Performance),
            metric(Metric::PodRestarts, "restarts_high", Performance),
            metric(
                Metric::IngressLatencyMs,
                "ingress_latency_high",
                Performance,
            ),
        ]);
        let events = BTreeMap::from([
            event(EventKind::DnsError, "dns_error", Performance, 2),
            event(EventKind::ConfigChange, "config_change", Configuration, 1),
            event(
                EventKind::NodeDecommissioned,
                "node_decommissioned",
                Configuration,
                1,
            ),
            event(EventKind::AuthFailure, "auth_failure", Security, 2),
        ]);

        let attributes = [
            ("cpu_high", Capacity),
            ("mem_high", Capacity),
            ("disk_high", Performance),
            ("latency_spike", Performance),
            ("packet_loss_high", Performance),
            ("restarts_high", Performance),
            ("ingress_latency_high", Performance),
            ("dns_error", Performance),
            ("config_change", Configuration),
            ("node_decommissioned", Configuration),
            ("auth_failure", Security),
        ]
        .into_iter()
        .map(|(name, category)| AttributeDef {
            name: name.to_string(),
            category,
        })
        .collect();

        Vocabulary {
            version: "v1".to_string(),
            attributes,
            metrics,
            events,
        }
    }
}

impl Vocabulary {
    pub fn len(&self) -> usize {
        self.attributes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attributes.is_empty()
    }

    pub fn index_of(&self, attribute: &str) -> Option<usize> {
        self.attributes.iter().position(|a| a.name == attribute)
    }

    pub fn contains(&self, attribute: &str) -> bool {
        self.index_of(attribute).is_some()
    }

    pub fn category_of(&self, attribute: &str) -> Option<Category> {
        self.attributes
            .iter()
            .find(|a| a.name == attribute)
            .map(|a| a.category)
    }

    pub fn classify_metric(&self, metric: &str) -> Option<&MetricClass> {
        self.metrics.get(metric)
    }

    pub fn classify_event(&self, kind: &str) -> Option<&EventClass> {
        self.events.get(kind)
    }

    /// The metric whose anomalies raise `attribute`, if any.
    pub fn metric_for_attribute(&self, attribute: &str) -> Option<&str> {
        self.metrics
            .iter()
            .find(|(_, c)| c.attribute == attribute)
            .map(|(m, _)| m.as_str())
    }

    /// Checks the table is internally consistent: every referenced attribute
    /// is declared, and declared names are unique.
    pub fn validate(&self) -> Result<(), String> {
        let mut seen = std::collections::BTreeSet::new();
        for a in &self.attributes {
            if !seen.insert(a.name.as_str()) {
                return Err(format!("duplicate attribute `{}`", a.name));
            }
        }
        for (m, c) in &self.metrics {
            if !seen.contains(c.attribute.as_str()) {
                return Err(format!("metric `{m}` maps to undeclared `{}`", c.attribute));
            }
        }
        for (e, c) in &self.events {
            if !seen.contains(c.attribute.as_str()) {
                return Err(format!("event `{e}` maps to undeclared `{}`", c.attribute));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_table_is_consistent() {
        let v = Vocabulary::default();
        v.validate().unwrap();
        assert_eq!(v.len(), 11);
    }

    #[test]
    fn classification_table() {
        let v = Vocabulary::default();
        assert_eq!(
            v.classify_metric("net_latency_ms").unwrap().category,
            Category::Performance
        );
        assert_eq!(
            v.classify_metric("packet_loss_rate").unwrap().category,
            Category::Performance
        );
        assert_eq!(
            v.classify_metric("cpu_util").unwrap().category,
            Category::Capacity
        );
        assert_eq!(
            v.classify_metric("mem_util").unwrap().category,
            Category::Capacity
        );
        assert_eq!(
            v.classify_event("config_change").unwrap().category,
            Category::Configuration
        );
        assert_eq!(
            v.classify_event("auth_failure").unwrap().category,
            Category::Security
        );
        assert!(v.classify_metric("quux").is_none());
    }
}
