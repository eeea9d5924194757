//! Normalization into the unified record schema, plus the event-driven
//! anomaly front-end that wakes the agent.

mod detector;

use std::collections::BTreeMap;
use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use detector::{
    detect_anomalies, Alert, Baselines, DetectorConfig, DetectorWindow, EvidenceRef,
};

use crate::sim::{RawEvent, StreamRecord, TelemetrySample};
use crate::types::{Category, EntityId, Tick};
use crate::vocab::Vocabulary;

#[derive(Debug, Error, PartialEq)]
pub enum IngestError {
    #[error("unknown metric `{0}`")]
    UnknownMetric(String),
    #[error("unknown event kind `{0}`")]
    UnknownEvent(String),
    #[error("attribute `{0}` is outside the vocabulary")]
    UnknownAttribute(String),
    #[error("record is already normalized")]
    AlreadyNormalized,
    #[error("malformed input: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Telemetry,
    Event,
    Alert,
    Ticket,
}

/// The agent's single input schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnifiedRecord {
    pub tick: Tick,
    pub entity: EntityId,
    pub source: Source,
    pub category: Category,
    pub attribute: String,
    /// Raw metric or event-kind name the record came from.
    pub origin: String,
    #[serde(default)]
    pub value: Option<f64>,
    pub severity: u8,
}

/// Anything `normalize` accepts. Names stay strings here because this is the
/// boundary where external streams enter the closed vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub enum RawInput {
    Telemetry {
        tick: Tick,
        entity: EntityId,
        metric: String,
        value: f64,
    },
    Event {
        tick: Tick,
        entity: EntityId,
        kind: String,
        attributes: BTreeMap<String, String>,
    },
    /// Pre-structured ticket: already names its attribute.
    Ticket {
        tick: Tick,
        entity: EntityId,
        attribute: String,
        severity: u8,
    },
    Unified(UnifiedRecord),
}

impl From<&TelemetrySample> for RawInput {
    fn from(s: &TelemetrySample) -> Self {
        RawInput::Telemetry {
            tick: s.tick,
            entity: s.entity.clone(),
            metric: s.metric.as_str().to_string(),
            value: s.value,
        }
    }
}

impl From<&RawEvent> for RawInput {
    fn from(e: &RawEvent) -> Self {
        RawInput::Event {
            tick: e.tick,
            entity: e.entity.clone(),
            kind: e.kind.as_str().to_string(),
            attributes: e.attributes.clone(),
        }
    }
}

impl From<StreamRecord> for RawInput {
    fn from(r: StreamRecord) -> Self {
        match r {
            StreamRecord::Sample {
                tick,
                entity,
                metric,
                value,
            } => RawInput::Telemetry {
                tick,
                entity,
                metric,
                value,
            },
            StreamRecord::Event {
                tick,
                entity,
                event_kind,
                attributes,
            } => RawInput::Event {
                tick,
                entity,
                kind: event_kind,
                attributes,
            },
        }
    }
}

/// Maps one raw input onto the unified schema using the classification
/// table. Telemetry carries severity 0 until the detector scores it.
pub fn normalize(raw: &RawInput, vocab: &Vocabulary) -> Result<UnifiedRecord, IngestError> {
    match raw {
        RawInput::Telemetry {
            tick,
            entity,
            metric,
            value,
        } => {
            let class = vocab
                .classify_metric(metric)
                .ok_or_else(|| IngestError::UnknownMetric(metric.clone()))?;
            Ok(UnifiedRecord {
                tick: *tick,
                entity: entity.clone(),
                source: Source::Telemetry,
                category: class.category,
                attribute: class.attribute.clone(),
                origin: metric.clone(),
                value: Some(*value),
                severity: 0,
            })
        }
        RawInput::Event {
            tick, entity, kind, ..
        } => {
            let class = vocab
                .classify_event(kind)
                .ok_or_else(|| IngestError::UnknownEvent(kind.clone()))?;
            Ok(UnifiedRecord {
                tick: *tick,
                entity: entity.clone(),
                source: Source::Event,
                category: class.category,
                attribute: class.attribute.clone(),
                origin: kind.clone(),
                value: None,
                severity: class.severity,
            })
        }
        RawInput::Ticket {
            tick,
            entity,
            attribute,
            severity,
        } => {
            let category = vocab
                .category_of(attribute)
                .ok_or_else(|| IngestError::UnknownAttribute(attribute.clone()))?;
            Ok(UnifiedRecord {
                tick: *tick,
                entity: entity.clone(),
                source: Source::Ticket,
                category,
                attribute: attribute.clone(),
                origin: "ticket".to_string(),
                value: None,
                severity: (*severity).min(3),
            })
        }
        RawInput::Unified(_) => Err(IngestError::AlreadyNormalized),
    }
}

/// Reads a simulator JSONL stream and normalizes every line.
pub fn normalize_stream<R: BufRead>(
    input: R,
    vocab: &Vocabulary,
) -> Result<Vec<UnifiedRecord>, IngestError> {
    let mut out = Vec::new();
    for (lineno, line) in input.lines().enumerate() {
        let line = line.map_err(|e| IngestError::Malformed(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: StreamRecord = serde_json::from_str(&line)
            .map_err(|e| IngestError::Malformed(format!("line {}: {e}", lineno + 1)))?;
        out.push(normalize(&RawInput::from(rec), vocab)?);
    }
    Ok(out)
}

pub fn write_records<W: Write>(out: &mut W, records: &[UnifiedRecord]) -> io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut *out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
