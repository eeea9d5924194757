//! Threshold/EWMA anomaly trigger.
//!
//! Each `(entity, attribute)` telemetry series is smoothed with an EWMA that
//! starts at the metric baseline and folds in the last `window` samples. An
//! alert fires when the smoothed value sits more than `k·σ` above baseline,
//! where `σ` is the standard deviation of the simulator's uniform noise.
//! Anomalous events present in the newest tick raise alerts directly.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use super::{Source, UnifiedRecord};
use crate::sim::SimConfig;
use crate::types::{EntityId, Metric, Tick};
use crate::vocab::Vocabulary;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub alpha: f64,
    pub window: usize,
    pub k: f64,
    /// Deviation (in σ) at which severity reaches 2 and 3.
    pub severity_sigmas: [f64; 2],
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            alpha: 0.3,
            window: 5,
            k: 3.0,
            severity_sigmas: [5.0, 8.0],
        }
    }
}

/// Per-attribute `(baseline, σ)` pairs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Baselines {
    pub per_attribute: BTreeMap<String, (f64, f64)>,
}

impl Baselines {
    /// σ of a uniform ±`noise_frac·b` perturbation is `noise_frac·b/√3`.
    pub fn from_sim(config: &SimConfig, vocab: &Vocabulary) -> Self {
        let mut per_attribute = BTreeMap::new();
        for metric in Metric::ALL {
            if let Some(class) = vocab.classify_metric(metric.as_str()) {
                let b = config.baseline(*metric);
                let sigma = config.noise_frac * b.abs() / 3f64.sqrt();
                per_attribute.insert(class.attribute.clone(), (b, sigma));
            }
        }
        Baselines { per_attribute }
    }

    pub fn get(&self, attribute: &str) -> Option<(f64, f64)> {
        self.per_attribute.get(attribute).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceRef {
    pub tick: Tick,
    pub entity: EntityId,
    pub origin: String,
    #[serde(default)]
    pub value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alert {
    pub tick: Tick,
    pub entity: EntityId,
    pub attribute: String,
    pub severity: u8,
    /// EWMA deviation in units of σ; 0 for event-sourced alerts.
    pub deviation_sigmas: f64,
    pub evidence: Vec<EvidenceRef>,
}

impl Alert {
    pub fn to_record(&self, vocab: &Vocabulary) -> UnifiedRecord {
        UnifiedRecord {
            tick: self.tick,
            entity: self.entity.clone(),
            source: Source::Alert,
            category: vocab
                .category_of(&self.attribute)
                .unwrap_or(crate::types::Category::Performance),
            attribute: self.attribute.clone(),
            origin: "detector".to_string(),
            value: Some(self.deviation_sigmas),
            severity: self.severity,
        }
    }
}

fn severity_for(dev: f64, sigma: f64, cfg: &DetectorConfig) -> u8 {
    if dev >= cfg.severity_sigmas[1] * sigma {
        3
    } else if dev >= cfg.severity_sigmas[0] * sigma {
        2
    } else {
        1
    }
}

/// Scores a window of unified records. Output is sorted by `(entity, attribute)`.
pub fn detect_anomalies(
    window: &[UnifiedRecord],
    baselines: &Baselines,
    cfg: &DetectorConfig,
) -> Vec<Alert> {
    let Some(newest) = window.iter().map(|r| r.tick).max() else {
        return Vec::new();
    };

    let mut series: BTreeMap<(&str, &str), BTreeMap<Tick, &UnifiedRecord>> = BTreeMap::new();
    let mut events: BTreeMap<(&str, &str), Vec<&UnifiedRecord>> = BTreeMap::new();
    for r in window {
        match r.source {
            Source::Telemetry => {
                series
                    .entry((r.entity.as_str(), r.attribute.as_str()))
                    .or_default()
                    .insert(r.tick, r);
            }
            Source::Event | Source::Ticket if r.severity > 0 && r.tick == newest => {
                events
                    .entry((r.entity.as_str(), r.attribute.as_str()))
                    .or_default()
                    .push(r);
            }
            _ => {}
        }
    }

    let mut alerts = Vec::new();
    for ((entity, attribute), points) in &series {
        let Some((baseline, sigma)) = baselines.get(attribute) else {
            continue;
        };
        if points.len() < cfg.window {
            continue;
        }
        let tail: Vec<&UnifiedRecord> = points
            .values()
            .rev()
            .take(cfg.window)
            .rev()
            .copied()
            .collect();
        let first = tail[0].tick;
        let consecutive =
            tail.last().map(|r| r.tick) == Some(newest) && newest - first + 1 == cfg.window as Tick;
        if !consecutive {
            continue;
        }
        let mut ewma = baseline;
        for r in &tail {
            let x = r.value.unwrap_or(baseline);
            ewma = cfg.alpha * x + (1.0 - cfg.alpha) * ewma;
        }
        let dev = ewma - baseline;
        let floor = cfg.k * sigma;
        if dev <= floor {
            continue;
        }
        let evidence = tail
            .iter()
            .filter(|r| r.value.is_some_and(|x| x - baseline > floor))
            .map(|r| EvidenceRef {
                tick: r.tick,
                entity: r.entity.clone(),
                origin: r.origin.clone(),
                value: r.value,
            })
            .collect();
        alerts.push(Alert {
            tick: newest,
            entity: entity.to_string(),
            attribute: attribute.to_string(),
            severity: severity_for(dev, sigma, cfg),
            deviation_sigmas: if sigma > 0.0 {
                dev / sigma
            } else {
                f64::INFINITY
            },
            evidence,
        });
    }

    for ((entity, attribute), recs) in events {
        alerts.push(Alert {
            tick: newest,
            entity: entity.to_string(),
            attribute: attribute.to_string(),
            severity: recs.iter().map(|r| r.severity).max().unwrap_or(1).min(3),
            deviation_sigmas: 0.0,
            evidence: recs
                .iter()
                .map(|r| EvidenceRef {
                    tick: r.tick,
                    entity: r.entity.clone(),
                    origin: r.origin.clone(),
                    value: r.value,
                })
                .collect(),
        });
    }

    alerts.sort_by(|a, b| (&a.entity, &a.attribute).cmp(&(&b.entity, &b.attribute)));
    alerts
}

/// Rolling per-tick window the orchestrator feeds while idle.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DetectorWindow {
    capacity: usize,
    ticks: VecDeque<Vec<UnifiedRecord>>,
}

impl DetectorWindow {
    pub fn new(capacity: usize) -> Self {
        DetectorWindow {
            capacity,
            ticks: VecDeque::with_capacity(capacity),
        }
    }

    pub fn push_tick(&mut self, records: Vec<UnifiedRecord>) {
        if self.ticks.len() == self.capacity {
            self.ticks.pop_front();
        }
        self.ticks.push_back(records);
    }

    pub fn is_full(&self) -> bool {
        self.ticks.len() >= self.capacity
    }

    pub fn records(&self) -> Vec<UnifiedRecord> {
        self.ticks.iter().flatten().cloned().collect()
    }

    pub fn clear(&mut self) {
        self.ticks.clear();
    }
}
