//! Semantic memory: a typed in-memory triple store validated by an ontology.
//!
//! Every individual is declared with exactly one class. A triple is accepted
//! only when its predicate exists and its subject and object classes match the
//! predicate's domain and range. Pattern queries are full scans in `(s, p, o)`
//! order; there are no secondary indices.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};

use super::AmsnError;
use crate::ill::{Rule, RuleStatus};
use crate::sim::ClusterTopology;
use crate::types::{ActionKind, EntityId, FaultKind, Tick};
use crate::vocab::Vocabulary;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Class {
    Node,
    Rack,
    ToRSwitch,
    Pod,
    Service,
    FaultKind,
    Action,
    Rule,
    Policy,
    Attribute,
    /// Range marker for relations whose object is a plain value.
    Literal,
}

impl Class {
    pub const ALL: [Class; 11] = [
        Class::Node,
        Class::Rack,
        Class::ToRSwitch,
        Class::Pod,
        Class::Service,
        Class::FaultKind,
        Class::Action,
        Class::Rule,
        Class::Policy,
        Class::Attribute,
        Class::Literal,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Class::Node => "Node",
            Class::Rack => "Rack",
            Class::ToRSwitch => "ToRSwitch",
            Class::Pod => "Pod",
            Class::Service => "Service",
            Class::FaultKind => "FaultKind",
            Class::Action => "Action",
            Class::Rule => "Rule",
            Class::Policy => "Policy",
            Class::Attribute => "Attribute",
            Class::Literal => "Literal",
        }
    }

    pub fn parse(s: &str) -> Option<Class> {
        Class::ALL.iter().copied().find(|c| c.as_str() == s)
    }
}

impl fmt::Display for Class {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Signature {
    pub domain: Class,
    pub range: Class,
}

pub mod rel {
    pub const RUNS_ON: &str = "runs_on";
    pub const MEMBER_OF: &str = "member_of";
    pub const UPLINK: &str = "uplink";
    pub const DEPENDS_ON: &str = "depends_on";
    pub const SERVES: &str = "serves";
    pub const INDICATES: &str = "indicates";
    pub const REMEDIED_BY: &str = "remedied_by";
    pub const CONSTRAINED_BY: &str = "constrained_by";
    pub const DECOMMISSIONED: &str = "decommissioned";
    pub const ANTECEDENT: &str = "antecedent";
    pub const RECOMMENDS: &str = "recommends";
    /// Class declarations in exports.
    pub const INSTANCE_OF: &str = "instance_of";
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ontology {
    pub classes: BTreeSet<Class>,
    pub relations: BTreeMap<String, Signature>,
}

impl Default for Ontology {
    fn default() -> Self {
        use Class::*;
        let sig = |domain, range| Signature { domain, range };
        let relations = BTreeMap::from([
            (rel::RUNS_ON.to_string(), sig(Pod, Node)),
            (rel::MEMBER_OF.to_string(), sig(Node, Rack)),
            (rel::UPLINK.to_string(), sig(Rack, ToRSwitch)),
            (rel::DEPENDS_ON.to_string(), sig(Service, Service)),
            (rel::SERVES.to_string(), sig(Pod, Service)),
            // a Rule node reifies the attribute set that indicates a fault
            (rel::INDICATES.to_string(), sig(Rule, FaultKind)),
            (rel::REMEDIED_BY.to_string(), sig(FaultKind, Action)),
            (rel::CONSTRAINED_BY.to_string(), sig(Action, Policy)),
            (rel::DECOMMISSIONED.to_string(), sig(Node, Literal)),
            (rel::ANTECEDENT.to_string(), sig(Rule, Attribute)),
            (rel::RECOMMENDS.to_string(), sig(Rule, Action)),
        ]);
        Ontology {
            classes: Class::ALL.into_iter().collect(),
            relations,
        }
    }
}

impl Ontology {
    pub fn validate(&self) -> Result<(), AmsnError> {
        for (name, s) in &self.relations {
            if name == rel::INSTANCE_OF {
                return Err(AmsnError::Format(format!("`{name}` is reserved")));
            }
            for c in [s.domain, s.range] {
                if !self.classes.contains(&c) {
                    return Err(AmsnError::Format(format!(
                        "relation `{name}` uses undeclared class {c}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn signature(&self, predicate: &str) -> Option<Signature> {
        self.relations.get(predicate).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Bootstrap,
    Ill,
    Operator,
}

impl Provenance {
    pub fn as_str(&self) -> &'static str {
        match self {
            Provenance::Bootstrap => "bootstrap",
            Provenance::Ill => "ill",
            Provenance::Operator => "operator",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "bootstrap" => Some(Provenance::Bootstrap),
            "ill" => Some(Provenance::Ill),
            "operator" => Some(Provenance::Operator),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Triple {
    pub subject: String,
    pub predicate: String,
    pub object: String,
    pub provenance: Provenance,
    pub asserted_tick: Tick,
}

impl Triple {
    pub fn new(
        s: impl Into<String>,
        p: impl Into<String>,
        o: impl Into<String>,
        provenance: Provenance,
        tick: Tick,
    ) -> Self {
        Triple {
            subject: s.into(),
            predicate: p.into(),
            object: o.into(),
            provenance,
            asserted_tick: tick,
        }
    }

    pub fn key(&self) -> (String, String, String) {
        (
            self.subject.clone(),
            self.predicate.clone(),
            self.object.clone(),
        )
    }

    pub fn mentions(&self, entity: &str) -> bool {
        self.subject == entity || self.object == entity
    }
}

impl fmt::Display for Triple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({}, {})", self.predicate, self.subject, self.object)
    }
}

/// Why a triple was refused.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum Rejection {
    UnknownPredicate {
        predicate: String,
    },
    UnknownSubject {
        subject: String,
    },
    UnknownObject {
        object: String,
    },
    DomainViolation {
        predicate: String,
        expected: Class,
        found: Class,
    },
    RangeViolation {
        predicate: String,
        expected: Class,
        found: Class,
    },
}

impl fmt::Display for Rejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rejection::UnknownPredicate { predicate } => {
                write!(f, "unknown predicate `{predicate}`")
            }
            Rejection::UnknownSubject { subject } => write!(f, "undeclared subject `{subject}`"),
            Rejection::UnknownObject { object } => write!(f, "undeclared object `{object}`"),
            Rejection::DomainViolation {
                predicate,
                expected,
                found,
            } => {
                write!(f, "{predicate} expects subject {expected}, got {found}")
            }
            Rejection::RangeViolation {
                predicate,
                expected,
                found,
            } => {
                write!(f, "{predicate} expects object {expected}, got {found}")
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Asserted {
    Inserted,
    Duplicate,
}

/// Single-pattern query; `None` is a wildcard.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TriplePattern {
    pub subject: Option<String>,
    pub predicate: Option<String>,
    pub object: Option<String>,
}

impl TriplePattern {
    pub fn new(s: Option<&str>, p: Option<&str>, o: Option<&str>) -> Self {
        TriplePattern {
            subject: s.map(str::to_string),
            predicate: p.map(str::to_string),
            object: o.map(str::to_string),
        }
    }

    fn matches(&self, t: &Triple) -> bool {
        self.subject.as_ref().is_none_or(|s| *s == t.subject)
            && self.predicate.as_ref().is_none_or(|p| *p == t.predicate)
            && self.object.as_ref().is_none_or(|o| *o == t.object)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeGraph {
    ontology: Ontology,
    entities: BTreeMap<String, Class>,
    triples: BTreeMap<(String, String, String), Triple>,
    rules: BTreeMap<String, Rule>,
}

pub const KG_HEADER: &str = "# opsloop-kg v1";

impl KnowledgeGraph {
    pub fn new(ontology: Ontology) -> Result<Self, AmsnError> {
        ontology.validate()?;
        Ok(KnowledgeGraph {
            ontology,
            entities: BTreeMap::new(),
            triples: BTreeMap::new(),
            rules: BTreeMap::new(),
        })
    }

    pub fn ontology(&self) -> &Ontology {
        &self.ontology
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn triples(&self) -> impl Iterator<Item = &Triple> {
        self.triples.values()
    }

    pub fn class_of(&self, id: &str) -> Option<Class> {
        self.entities.get(id).copied()
    }

    pub fn entities(&self) -> &BTreeMap<String, Class> {
        &self.entities
    }

    /// Declares `id` as an instance of `class`. Re-declaring with the same
    /// class is a no-op; a different class is an error.
    pub fn declare(&mut self, id: impl Into<String>, class: Class) -> Result<(), AmsnError> {
        let id = id.into();
        if class == Class::Literal || !self.ontology.classes.contains(&class) {
            return Err(AmsnError::Format(format!(
                "cannot declare `{id}` as {class}"
            )));
        }
        match self.entities.get(&id) {
            Some(existing) if *existing != class => Err(AmsnError::ClassConflict {
                id,
                existing: *existing,
                requested: class,
            }),
            Some(_) => Ok(()),
            None => {
                self.entities.insert(id, class);
                Ok(())
            }
        }
    }

    /// Checks a triple against the ontology without inserting it.
    pub fn check(&self, t: &Triple) -> Result<(), Rejection> {
        let sig =
            self.ontology
                .signature(&t.predicate)
                .ok_or_else(|| Rejection::UnknownPredicate {
                    predicate: t.predicate.clone(),
                })?;
        let subject = self
            .class_of(&t.subject)
            .ok_or_else(|| Rejection::UnknownSubject {
                subject: t.subject.clone(),
            })?;
        if subject != sig.domain {
            return Err(Rejection::DomainViolation {
                predicate: t.predicate.clone(),
                expected: sig.domain,
                found: subject,
            });
        }
        if sig.range != Class::Literal {
            let object = self
                .class_of(&t.object)
                .ok_or_else(|| Rejection::UnknownObject {
                    object: t.object.clone(),
                })?;
            if object != sig.range {
                return Err(Rejection::RangeViolation {
                    predicate: t.predicate.clone(),
                    expected: sig.range,
                    found: object,
                });
            }
        }
        Ok(())
    }

    pub fn assert(&mut self, t: Triple) -> Result<Asserted, Rejection> {
        self.check(&t)?;
        let key = t.key();
        if self.triples.contains_key(&key) {
            return Ok(Asserted::Duplicate);
        }
        self.triples.insert(key, t);
        Ok(Asserted::Inserted)
    }

    pub fn contains(&self, s: &str, p: &str, o: &str) -> bool {
        self.triples
            .contains_key(&(s.to_string(), p.to_string(), o.to_string()))
    }

    pub fn retract(&mut self, s: &str, p: &str, o: &str) -> Option<Triple> {
        self.triples
            .remove(&(s.to_string(), p.to_string(), o.to_string()))
    }

    /// All matches in `(subject, predicate, object)` order.
    pub fn query(&self, pattern: &TriplePattern) -> Result<Vec<&Triple>, AmsnError> {
        if pattern.subject.is_none() && pattern.predicate.is_none() && pattern.object.is_none() {
            return Err(AmsnError::UnboundPattern);
        }
        Ok(self
            .triples
            .values()
            .filter(|t| pattern.matches(t))
            .collect())
    }

    fn is_literal_object(&self, t: &Triple) -> bool {
        self.ontology
            .signature(&t.predicate)
            .is_some_and(|s| s.range == Class::Literal)
    }

    fn hidden(&self, t: &Triple) -> bool {
        let retired = |id: &str| {
            self.rules
                .get(id)
                .is_some_and(|r| r.status == RuleStatus::Retired)
        };
        retired(&t.subject) || (!self.is_literal_object(t) && retired(&t.object))
    }

    /// Triples around `entity`. Radius 0 keeps the triples incident to it;
    /// radius `r ≥ 1` keeps triples whose endpoints both lie within `r` hops,
    /// treating every triple as an undirected edge. Literal objects count as
    /// sitting at their subject's distance. Retired rules are excluded.
    pub fn subgraph(&self, entity: &str, radius: usize) -> Vec<Triple> {
        if !self.entities.contains_key(entity) {
            return Vec::new();
        }
        let visible: Vec<&Triple> = self.triples.values().filter(|t| !self.hidden(t)).collect();
        if radius == 0 {
            return visible
                .into_iter()
                .filter(|t| t.mentions(entity))
                .cloned()
                .collect();
        }

        let mut adjacency: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for t in &visible {
            if self.is_literal_object(t) {
                continue;
            }
            adjacency.entry(&t.subject).or_default().push(&t.object);
            adjacency.entry(&t.object).or_default().push(&t.subject);
        }
        let mut dist: BTreeMap<&str, usize> = BTreeMap::from([(entity, 0)]);
        let mut queue = VecDeque::from([entity]);
        while let Some(cur) = queue.pop_front() {
            let d = dist[cur];
            if d == radius {
                continue;
            }
            for next in adjacency.get(cur).into_iter().flatten() {
                if !dist.contains_key(next) {
                    dist.insert(next, d + 1);
                    queue.push_back(next);
                }
            }
        }
        visible
            .into_iter()
            .filter(|t| {
                dist.contains_key(t.subject.as_str())
                    && (self.is_literal_object(t) || dist.contains_key(t.object.as_str()))
            })
            .cloned()
            .collect()
    }

    /// Full-scan ontology validation of every stored triple.
    pub fn validate_all(&self) -> Result<(), Vec<(Triple, Rejection)>> {
        let bad: Vec<_> = self
            .triples
            .values()
            .filter_map(|t| self.check(t).err().map(|r| (t.clone(), r)))
            .collect();
        if bad.is_empty() {
            Ok(())
        } else {
            Err(bad)
        }
    }

    // ---------------------------------------------------------------------
    // Domain helpers
    // ---------------------------------------------------------------------

    /// Declares topology individuals, vocabulary terms, fault kinds and
    /// actions, and asserts the topology relations. Remedies are not seeded:
    /// the agent has to learn them.
    pub fn bootstrap(
        topo: &ClusterTopology,
        vocab: &Vocabulary,
        policies: &[PolicyDef],
    ) -> Result<Self, AmsnError> {
        let mut kg = KnowledgeGraph::new(Ontology::default())?;
        for attr in &vocab.attributes {
            kg.declare(&attr.name, Class::Attribute)?;
        }
        for k in FaultKind::ALL {
            kg.declare(k.as_str(), Class::FaultKind)?;
        }
        for a in ActionKind::ALL {
            kg.declare(a.as_str(), Class::Action)?;
        }
        for (rack, switch) in &topo.racks {
            kg.declare(rack, Class::Rack)?;
            kg.declare(switch, Class::ToRSwitch)?;
        }
        for node in topo.nodes.keys() {
            kg.declare(node, Class::Node)?;
        }
        for pod in topo.pods.keys() {
            kg.declare(pod, Class::Pod)?;
        }
        for svc in topo.services.keys() {
            kg.declare(svc, Class::Service)?;
        }

        let put = |kg: &mut KnowledgeGraph, s: &str, p: &str, o: &str| -> Result<(), AmsnError> {
            kg.assert(Triple::new(s, p, o, Provenance::Bootstrap, 0))
                .map(|_| ())
                .map_err(AmsnError::Rejected)
        };
        for (rack, switch) in &topo.racks {
            put(&mut kg, rack, rel::UPLINK, switch)?;
        }
        for (node, info) in &topo.nodes {
            put(&mut kg, node, rel::MEMBER_OF, &info.rack)?;
        }
        for (pod, node) in &topo.pods {
            put(&mut kg, pod, rel::RUNS_ON, node)?;
        }
        for (svc, pods) in &topo.services {
            for pod in pods {
                put(&mut kg, pod, rel::SERVES, svc)?;
            }
        }
        for (caller, callee) in &topo.dependencies {
            put(&mut kg, caller, rel::DEPENDS_ON, callee)?;
        }
        for policy in policies {
            kg.declare(&policy.id, Class::Policy)?;
            for action in &policy.constrains {
                put(&mut kg, action.as_str(), rel::CONSTRAINED_BY, &policy.id)?;
            }
        }
        Ok(kg)
    }

    pub fn mark_decommissioned(&mut self, node: &str, tick: Tick) -> Result<Asserted, Rejection> {
        self.assert(Triple::new(
            node,
            rel::DECOMMISSIONED,
            "true",
            Provenance::Operator,
            tick,
        ))
    }

    pub fn decommissioned(&self) -> BTreeSet<EntityId> {
        self.triples
            .values()
            .filter(|t| t.predicate == rel::DECOMMISSIONED && t.object == "true")
            .map(|t| t.subject.clone())
            .collect()
    }

    /// Decommissioned nodes plus the pods that ran on them.
    pub fn decommissioned_footprint(&self) -> BTreeSet<EntityId> {
        let nodes = self.decommissioned();
        let mut out = nodes.clone();
        for t in self.triples.values() {
            if t.predicate == rel::RUNS_ON && nodes.contains(&t.object) {
                out.insert(t.subject.clone());
            }
        }
        out
    }

    /// Objects of `(subject, predicate, ?)`.
    pub fn objects<'a>(
        &'a self,
        subject: &'a str,
        predicate: &'a str,
    ) -> impl Iterator<Item = &'a str> + 'a {
        self.triples
            .values()
            .filter(move |t| t.subject == subject && t.predicate == predicate)
            .map(|t| t.object.as_str())
    }

    /// Subjects of `(?, predicate, object)`.
    pub fn subjects<'a>(
        &'a self,
        predicate: &'a str,
        object: &'a str,
    ) -> impl Iterator<Item = &'a str> + 'a {
        self.triples
            .values()
            .filter(move |t| t.predicate == predicate && t.object == object)
            .map(|t| t.subject.as_str())
    }

    pub fn policy_triples(&self) -> Vec<&Triple> {
        self.triples
            .values()
            .filter(|t| t.predicate == rel::CONSTRAINED_BY)
            .collect()
    }

    pub fn rules(&self) -> impl Iterator<Item = &Rule> {
        self.rules.values()
    }

    pub fn rule(&self, id: &str) -> Option<&Rule> {
        self.rules.get(id)
    }

    pub fn rules_with_status(&self, status: RuleStatus) -> impl Iterator<Item = &Rule> {
        self.rules.values().filter(move |r| r.status == status)
    }

    pub(crate) fn rules_mut(&mut self) -> &mut BTreeMap<String, Rule> {
        &mut self.rules
    }

    /// Deletes a rule outright: its table entry, its declaration and every
    /// triple naming it. Retirement is the audited path; this one leaves no
    /// trace.
    pub fn purge_rule(&mut self, id: &str) -> Option<Rule> {
        let rule = self.rules.remove(id)?;
        self.triples.retain(|_, t| !t.mentions(id));
        self.entities.remove(id);
        Some(rule)
    }

    // ---------------------------------------------------------------------
    // Export / import
    // ---------------------------------------------------------------------

    /// Tab-separated `subject predicate object provenance`, one per line,
    /// after a version header. Class declarations come first as
    /// `instance_of` lines.
    pub fn export_tsv<W: Write>(&self, out: &mut W) -> io::Result<()> {
        writeln!(out, "{KG_HEADER}")?;
        for (id, class) in &self.entities {
            writeln!(out, "{id}\t{}\t{class}\tbootstrap", rel::INSTANCE_OF)?;
        }
        for t in self.triples.values() {
            writeln!(
                out,
                "{}\t{}\t{}\t{}",
                t.subject,
                t.predicate,
                t.object,
                t.provenance.as_str()
            )?;
        }
        Ok(())
    }

    pub fn import_tsv<R: BufRead>(input: R, ontology: Ontology) -> Result<Self, AmsnError> {
        let mut kg = KnowledgeGraph::new(ontology)?;
        let mut lines = input.lines();
        match lines.next() {
            Some(Ok(h)) if h.trim() == KG_HEADER => {}
            Some(Ok(h)) => return Err(AmsnError::Format(format!("unexpected header `{h}`"))),
            Some(Err(e)) => return Err(e.into()),
            None => return Err(AmsnError::Format("empty kg export".into())),
        }
        for (n, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            let [s, p, o, prov] = cols[..] else {
                return Err(AmsnError::Format(format!(
                    "line {}: expected 4 columns",
                    n + 2
                )));
            };
            let provenance = Provenance::parse(prov)
                .ok_or_else(|| AmsnError::Format(format!("bad provenance `{prov}`")))?;
            if p == rel::INSTANCE_OF {
                let class =
                    Class::parse(o).ok_or_else(|| AmsnError::Format(format!("bad class `{o}`")))?;
                kg.declare(s, class)?;
            } else {
                kg.assert(Triple::new(s, p, o, provenance, 0))
                    .map_err(AmsnError::Rejected)?;
            }
        }
        Ok(kg)
    }
}

/// A named policy and the actions it constrains.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyDef {
    pub id: String,
    pub constrains: Vec<ActionKind>,
}

pub fn default_policies() -> Vec<PolicyDef> {
    vec![
        PolicyDef {
            id: "change_freeze".into(),
            constrains: vec![ActionKind::DrainNode],
        },
        PolicyDef {
            id: "tenant_sla".into(),
            constrains: vec![ActionKind::ThrottleTenant],
        },
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{build_topology, TopologySpec};

    fn reference_kg() -> KnowledgeGraph {
        let topo = build_topology(&TopologySpec::reference()).unwrap();
        KnowledgeGraph::bootstrap(&topo, &Vocabulary::default(), &default_policies()).unwrap()
    }

    #[test]
    fn signature_checks() {
        let mut kg = reference_kg();
        assert_eq!(
            kg.assert(Triple::new(
                "pod_a1",
                rel::RUNS_ON,
                "n1",
                Provenance::Operator,
                3
            )),
            Ok(Asserted::Duplicate)
        );
        let before = kg.len();
        let err = kg
            .assert(Triple::new(
                "n1",
                rel::RUNS_ON,
                "pod_a1",
                Provenance::Operator,
                3,
            ))
            .unwrap_err();
        assert!(matches!(
            err,
            Rejection::DomainViolation {
                expected: Class::Pod,
                found: Class::Node,
                ..
            }
        ));
        assert_eq!(kg.len(), before);
        assert!(matches!(
            kg.assert(Triple::new(
                "pod_a1",
                "likes",
                "n1",
                Provenance::Operator,
                3
            )),
            Err(Rejection::UnknownPredicate { .. })
        ));
        assert!(matches!(
            kg.assert(Triple::new(
                "pod_a1",
                rel::RUNS_ON,
                "svc_a",
                Provenance::Operator,
                3
            )),
            Err(Rejection::RangeViolation { .. })
        ));
        kg.validate_all().unwrap();
    }

    #[test]
    fn new_triple_is_inserted_once() {
        let mut kg = KnowledgeGraph::new(Ontology::default()).unwrap();
        kg.declare("pod_a", Class::Pod).unwrap();
        kg.declare("node_1", Class::Node).unwrap();
        let t = Triple::new("pod_a", rel::RUNS_ON, "node_1", Provenance::Operator, 1);
        assert_eq!(kg.assert(t.clone()), Ok(Asserted::Inserted));
        assert_eq!(kg.assert(t), Ok(Asserted::Duplicate));
        assert_eq!(kg.len(), 1);
    }

    #[test]
    fn callers_query_matches_topology() {
        let kg = reference_kg();
        let callers: Vec<_> = kg
            .query(&TriplePattern::new(
                None,
                Some(rel::DEPENDS_ON),
                Some("svc_b"),
            ))
            .unwrap()
            .into_iter()
            .map(|t| t.subject.clone())
            .collect();
        assert_eq!(callers, vec!["svc_a"]);
        let single = kg
            .query(&TriplePattern::new(
                Some("svc_a"),
                Some(rel::DEPENDS_ON),
                Some("svc_b"),
            ))
            .unwrap();
        assert_eq!(single.len(), 1);
        assert!(kg
            .query(&TriplePattern::new(
                Some("svc_d"),
                Some(rel::DEPENDS_ON),
                None
            ))
            .unwrap()
            .is_empty());
        assert!(kg.query(&TriplePattern::default()).is_err());
    }

    #[test]
    fn radius_zero_is_incident_only() {
        let kg = reference_kg();
        let sub = kg.subgraph("pod_a1", 0);
        assert!(!sub.is_empty());
        assert!(sub.iter().all(|t| t.mentions("pod_a1")));
        assert!(kg.subgraph("ghost", 3).is_empty());
    }

    #[test]
    fn radius_one_on_middle_service() {
        let kg = reference_kg();
        let sub = kg.subgraph("svc_b", 1);
        let has = |s: &str, p: &str, o: &str| {
            sub.iter()
                .any(|t| t.subject == s && t.predicate == p && t.object == o)
        };
        assert!(has("svc_a", rel::DEPENDS_ON, "svc_b"));
        assert!(has("svc_b", rel::DEPENDS_ON, "svc_c"));
        assert!(!sub
            .iter()
            .any(|t| t.predicate == rel::SERVES && t.object == "svc_a"));
    }

    #[test]
    fn large_radius_reaches_component() {
        let kg = reference_kg();
        let sub = kg.subgraph("svc_a", 100);
        // every topology triple is connected to svc_a
        let topo_triples = kg
            .triples()
            .filter(|t| t.predicate != rel::CONSTRAINED_BY)
            .count();
        assert_eq!(sub.len(), topo_triples);
    }

    #[test]
    fn decommission_marker() {
        let mut kg = reference_kg();
        kg.mark_decommissioned("n3", 9).unwrap();
        assert_eq!(kg.decommissioned(), BTreeSet::from(["n3".to_string()]));
        assert!(kg
            .subgraph("n3", 0)
            .iter()
            .any(|t| t.predicate == rel::DECOMMISSIONED));
        assert!(kg.mark_decommissioned("pod_a1", 9).is_err());
    }

    #[test]
    fn tsv_round_trip() {
        let mut kg = reference_kg();
        kg.mark_decommissioned("n3", 9).unwrap();
        let mut buf = Vec::new();
        kg.export_tsv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(KG_HEADER));
        assert!(text.contains("n3\tdecommissioned\ttrue\toperator"));
        let back = KnowledgeGraph::import_tsv(&buf[..], Ontology::default()).unwrap();
        let mut again = Vec::new();
        back.export_tsv(&mut again).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn class_conflict() {
        let mut kg = reference_kg();
        assert!(matches!(
            kg.declare("n1", Class::Pod),
            Err(AmsnError::ClassConflict { .. })
        ));
        kg.declare("n1", Class::Node).unwrap();
    }
}
