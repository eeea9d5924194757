use std::collections::{BTreeMap, BTreeSet};
use std::io::{self, Write};

use fixedbitset::FixedBitSet;
use serde::{Deserialize, Serialize};

use super::context::FormalContext;
use super::lattice::enumerate_concepts_counted;
use super::IllError;
use crate::types::{ActionKind, FaultKind, Tick};

pub const CAUSE_PREFIX: &str = "cause_";
pub const RESOLVED_PREFIX: &str = "resolved_by_";

/// Outcome labels (`cause_*`, `resolved_by_*`) may appear in consequents;
/// everything else is a symptom and may appear in antecedents.
pub fn is_label(attr: &str) -> bool {
    attr.starts_with(CAUSE_PREFIX) || attr.starts_with(RESOLVED_PREFIX)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleStatus {
    Candidate,
    Validated,
    Retired,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    pub id: String,
    pub antecedent: BTreeSet<String>,
    pub consequent: BTreeSet<String>,
    pub support: f64,
    pub confidence: f64,
    /// Objects carrying antecedent ∪ consequent.
    pub support_count: u64,
    /// Objects carrying the antecedent.
    pub antecedent_count: u64,
    pub object_count: u64,
    pub status: RuleStatus,
    /// Set once the rule has passed the consistency check.
    pub checked: bool,
    pub provenance: BTreeSet<String>,
    pub asserted_tick: Tick,
    pub last_confirmed_tick: Tick,
    /// Episode sequence number at last confirmation.
    pub last_confirmed_seq: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retired_reason: Option<String>,
}

impl Rule {
    pub fn make_id(antecedent: &BTreeSet<String>, consequent: &BTreeSet<String>) -> String {
        let join =
            |s: &BTreeSet<String>| s.iter().map(String::as_str).collect::<Vec<_>>().join("+");
        format!("rule:{}=>{}", join(antecedent), join(consequent))
    }

    pub fn cause(&self) -> Option<FaultKind> {
        self.consequent
            .iter()
            .find_map(|c| FaultKind::from_cause_label(c))
    }

    pub fn remedy(&self) -> Option<ActionKind> {
        self.consequent
            .iter()
            .find_map(|c| ActionKind::from_resolved_label(c))
    }

    pub fn attributes(&self) -> impl Iterator<Item = &String> {
        self.antecedent.iter().chain(self.consequent.iter())
    }

    pub fn matches(&self, symptoms: &BTreeSet<String>) -> bool {
        self.antecedent.is_subset(symptoms)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Counts {
    pub both: u64,
    pub antecedent: u64,
    pub objects: u64,
}

impl Counts {
    pub fn support(&self) -> f64 {
        if self.objects == 0 {
            0.0
        } else {
            self.both as f64 / self.objects as f64
        }
    }

    pub fn confidence(&self) -> f64 {
        if self.antecedent == 0 {
            0.0
        } else {
            self.both as f64 / self.antecedent as f64
        }
    }
}

pub fn count(ctx: &FormalContext, antecedent: &FixedBitSet, consequent: &FixedBitSet) -> Counts {
    let mut all = antecedent.clone();
    all.union_with(consequent);
    Counts {
        both: ctx.derive_attrs(&all).count_ones(..) as u64,
        antecedent: ctx.derive_attrs(antecedent).count_ones(..) as u64,
        objects: ctx.n_objects() as u64,
    }
}

pub const MAX_ATTRIBUTES: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MiningStats {
    pub concepts: usize,
    pub closures: u64,
}

fn check_threshold(name: &str, v: f64) -> Result<(), IllError> {
    if v > 0.0 && v <= 1.0 {
        Ok(())
    } else {
        Err(IllError::InvalidThreshold(format!(
            "{name} = {v} is outside (0, 1]"
        )))
    }
}

/// Symptom → label implications read off the concept intents.
///
/// For each intent `I` and each nonempty `A ⊆ I` of symptom attributes, the
/// candidate is `A → (I \ A) ∩ labels`. Support and confidence are exact
/// counts over the context, so partial implications (confidence < 1) are
/// reachable. Rules come back sorted by id.
pub fn mine_rules(
    ctx: &FormalContext,
    min_support: f64,
    min_confidence: f64,
) -> Result<Vec<Rule>, IllError> {
    Ok(mine_rules_counted(ctx, min_support, min_confidence)?.0)
}

pub fn mine_rules_counted(
    ctx: &FormalContext,
    min_support: f64,
    min_confidence: f64,
) -> Result<(Vec<Rule>, MiningStats), IllError> {
    check_threshold("min_support", min_support)?;
    check_threshold("min_confidence", min_confidence)?;
    if ctx.n_attributes() > MAX_ATTRIBUTES {
        return Err(IllError::TooManyAttributes(ctx.n_attributes()));
    }
    let (concepts, counter) = enumerate_concepts_counted(ctx);
    let labels: FixedBitSet = {
        let mut s = ctx.empty_attrs();
        for (i, a) in ctx.attributes().iter().enumerate() {
            if is_label(a) {
                s.insert(i);
            }
        }
        s
    };

    let mut out: BTreeMap<String, Rule> = BTreeMap::new();
    for concept in &concepts {
        let symptoms: Vec<usize> = concept.intent.difference(&labels).collect();
        let mut label_part = concept.intent.clone();
        label_part.intersect_with(&labels);
        if symptoms.is_empty() || label_part.is_clear() {
            continue;
        }
        for mask in 1u64..(1u64 << symptoms.len()) {
            let mut ante = ctx.empty_attrs();
            for (bit, &m) in symptoms.iter().enumerate() {
                if mask & (1 << bit) != 0 {
                    ante.insert(m);
                }
            }
            let antecedent = ctx.attr_names(&ante);
            let consequent = ctx.attr_names(&label_part);
            let id = Rule::make_id(&antecedent, &consequent);
            if out.contains_key(&id) {
                continue;
            }
            let counts = count(ctx, &ante, &label_part);
            let (support, confidence) = (counts.support(), counts.confidence());
            if support < min_support || confidence < min_confidence {
                continue;
            }
            let mut both = ante.clone();
            both.union_with(&label_part);
            let provenance = ctx.object_names(&ctx.derive_attrs(&both));
            out.insert(
                id.clone(),
                Rule {
                    id,
                    antecedent,
                    consequent,
                    support,
                    confidence,
                    support_count: counts.both,
                    antecedent_count: counts.antecedent,
                    object_count: counts.objects,
                    status: RuleStatus::Candidate,
                    checked: false,
                    provenance,
                    asserted_tick: 0,
                    last_confirmed_tick: 0,
                    last_confirmed_seq: 0,
                    retired_reason: None,
                },
            );
        }
    }
    let stats = MiningStats {
        concepts: concepts.len(),
        closures: counter.0,
    };
    Ok((out.into_values().collect(), stats))
}

pub fn write_rules_jsonl<'a, W: Write>(
    out: &mut W,
    rules: impl IntoIterator<Item = &'a Rule>,
) -> io::Result<()> {
    for r in rules {
        serde_json::to_writer(&mut *out, r)?;
        writeln!(out)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn repeated(rows: &[(usize, &[&str])]) -> FormalContext {
        let mut list: Vec<(String, Vec<String>)> = Vec::new();
        for (n, attrs) in rows {
            for _ in 0..*n {
                let id = format!("e{}", list.len());
                list.push((id, attrs.iter().map(|s| s.to_string()).collect()));
            }
        }
        FormalContext::from_rows(&list, None).unwrap()
    }

    #[test]
    fn uniform_dns_episodes() {
        let ctx = repeated(&[(10, &["dns_error", "cause_dns_error_burst"])]);
        let rules = mine_rules(&ctx, 0.3, 0.9).unwrap();
        assert_eq!(rules.len(), 1);
        let r = &rules[0];
        assert_eq!(r.id, "rule:dns_error=>cause_dns_error_burst");
        assert_eq!((r.support, r.confidence), (1.0, 1.0));
        assert_eq!(r.cause(), Some(FaultKind::DnsErrorBurst));
        assert_eq!(r.provenance.len(), 10);
    }

    #[test]
    fn partial_implication_confidence() {
        let ctx = repeated(&[
            (6, &["packet_loss_high", "cause_tor_packet_loss"]),
            (4, &["packet_loss_high"]),
        ]);
        let loose = mine_rules(&ctx, 0.1, 0.5).unwrap();
        let r = loose
            .iter()
            .find(|r| r.id == "rule:packet_loss_high=>cause_tor_packet_loss")
            .unwrap();
        assert_eq!((r.support_count, r.antecedent_count), (6, 10));
        assert!((r.confidence - 0.6).abs() < 1e-12);
        assert!(mine_rules(&ctx, 0.1, 0.9).unwrap().is_empty());
    }

    #[test]
    fn unattainable_support() {
        let ctx = repeated(&[
            (3, &["dns_error", "cause_dns_error_burst"]),
            (7, &["cpu_high"]),
        ]);
        assert!(mine_rules(&ctx, 0.5, 0.1).unwrap().is_empty());
    }

    #[test]
    fn bad_thresholds() {
        let ctx = repeated(&[(1, &["a"])]);
        assert!(mine_rules(&ctx, 0.0, 0.5).is_err());
        assert!(mine_rules(&ctx, 0.5, 1.5).is_err());
    }

    #[test]
    fn labels_never_in_antecedent() {
        let ctx = repeated(&[
            (
                3,
                &[
                    "dns_error",
                    "latency_spike",
                    "cause_dns_error_burst",
                    "resolved_by_flush_dns_cache",
                ],
            ),
            (2, &["latency_spike", "cause_tor_packet_loss"]),
        ]);
        let rules = mine_rules(&ctx, 0.1, 0.1).unwrap();
        assert!(!rules.is_empty());
        for r in &rules {
            assert!(r.antecedent.iter().all(|a| !is_label(a)));
            assert!(r.consequent.iter().all(|c| is_label(c)));
            assert!(r.antecedent.is_disjoint(&r.consequent));
        }
        let dns = rules
            .iter()
            .find(|r| r.antecedent == BTreeSet::from(["dns_error".to_string()]))
            .unwrap();
        assert_eq!(dns.remedy(), Some(ActionKind::FlushDnsCache));
    }

    fn arb_context() -> impl Strategy<Value = FormalContext> {
        let attrs = ["s0", "s1", "s2", "s3", "cause_x", "resolved_by_y"];
        proptest::collection::vec(proptest::collection::vec(any::<bool>(), attrs.len()), 1..10)
            .prop_map(move |rows| {
                FormalContext::new(
                    (0..rows.len()).map(|i| format!("o{i}")).collect(),
                    attrs.iter().map(|s| s.to_string()).collect(),
                    &rows,
                )
                .unwrap()
            })
    }

    proptest! {
        #[test]
        fn raising_thresholds_never_adds(ctx in arb_context(), s in 1u32..10, c in 1u32..10, ds in 0u32..5, dc in 0u32..5) {
            let lo = mine_rules(&ctx, s as f64 / 10.0, c as f64 / 10.0).unwrap();
            let hi = mine_rules(&ctx, ((s + ds).min(10)) as f64 / 10.0, ((c + dc).min(10)) as f64 / 10.0).unwrap();
            let lo_ids: BTreeSet<_> = lo.iter().map(|r| r.id.clone()).collect();
            prop_assert!(hi.iter().all(|r| lo_ids.contains(&r.id)));
        }

        #[test]
        fn counts_match_scan(ctx in arb_context()) {
            for r in mine_rules(&ctx, 0.1, 0.1).unwrap() {
                let has = |g: usize, names: &BTreeSet<String>| names.iter().all(|n| ctx.incident(g, ctx.attribute_index(n).unwrap()));
                let ante = (0..ctx.n_objects()).filter(|&g| has(g, &r.antecedent)).count() as u64;
                let both = (0..ctx.n_objects()).filter(|&g| has(g, &r.antecedent) && has(g, &r.consequent)).count() as u64;
                prop_assert_eq!((r.antecedent_count, r.support_count), (ante, both));
                prop_assert!((0.0..=1.0).contains(&r.support) && (0.0..=1.0).contains(&r.confidence));
            }
        }
    }
}
