//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each
//! and exits nonzero if any failed.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use fixedbitset::FixedBitSet;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use opsloop::ace::{
    pack, AceState, BudgetPolicy, Candidate, ContextPack, ItemContent, SectionKind,
};
use opsloop::amsn::{
    default_policies, seed_runbooks, Class, Episode, EpisodicStore, ForgetCriteria, KnowledgeGraph,
    Ontology, Outcome, Provenance, Runbook, Triple, WorkingItem,
};
use opsloop::ill::{
    enumerate_concepts, join, lattice_leq, lattice_leq_by_intent, meet, mine_rules, FormalConcept,
    FormalContext, IllConfig, RuleStatus,
};
use opsloop::orchestrator::{
    audit, Agent, AgentConfig, BudgetLimits, Component, EpisodeLog, Event, Phase, TransitionRecord,
};
use opsloop::reasoner::DiagnosisPath;
use opsloop::runner::{self, RunConfig, RunOutput};
use opsloop::sim::{FaultScenario, SimConfig, Simulator, TopologySpec};
use opsloop::{ActionKind, FaultKind, MilliUnits, Vocabulary};

type Outcome_ = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

/// Artifacts shared between criteria: every agent's audit log, every
/// episode log and every pack spend seen by the suite.
#[derive(Default)]
struct Shared {
    audit_logs: Vec<(String, Vec<TransitionRecord>)>,
    logs: Vec<EpisodeLog>,
}

impl Shared {
    fn keep(&mut self, label: &str, out: &RunOutput) {
        self.audit_logs
            .push((label.to_string(), out.agent.transitions.clone()));
        self.logs.extend(out.logs.iter().cloned());
    }
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn load(name: &str) -> Result<RunConfig, String> {
    RunConfig::load(&configs_dir().join(name)).map_err(|e| e.to_string())
}

fn run(cfg: &RunConfig) -> Result<RunOutput, String> {
    runner::run(cfg).map_err(|e| e.to_string())
}

// ---------------------------------------------------------------------------
// Random formal contexts and brute-force lattice helpers
// ---------------------------------------------------------------------------

struct Ctx {
    ctx: FormalContext,
    rows: Vec<u32>,
    n_attr: usize,
    labels: u32,
}

fn random_context(
    rng: &mut ChaCha8Rng,
    max_objects: usize,
    max_attributes: usize,
    with_labels: bool,
) -> Ctx {
    let n_obj = rng.random_range(1..=max_objects);
    let n_attr = rng.random_range(1..=max_attributes);
    let n_labels = if with_labels {
        rng.random_range(0..=n_attr.saturating_sub(1).min(3))
    } else {
        0
    };
    let mut labels = 0u32;
    let attributes: Vec<String> = (0..n_attr)
        .map(|j| {
            if j >= n_attr - n_labels {
                labels |= 1 << j;
                if j % 2 == 0 {
                    format!("cause_k{j}")
                } else {
                    format!("resolved_by_r{j}")
                }
            } else {
                format!("s{j}")
            }
        })
        .collect();
    let density = rng.random_range(0.15..0.75);
    let incidence: Vec<Vec<bool>> = (0..n_obj)
        .map(|_| (0..n_attr).map(|_| rng.random_bool(density)).collect())
        .collect();
    let rows = incidence
        .iter()
        .map(|r| {
            r.iter()
                .enumerate()
                .filter(|(_, b)| **b)
                .fold(0u32, |m, (j, _)| m | 1 << j)
        })
        .collect();
    let objects = (0..n_obj).map(|g| format!("g{g}")).collect();
    Ctx {
        ctx: FormalContext::new(objects, attributes, &incidence).expect("valid context"),
        rows,
        n_attr,
        labels,
    }
}

fn mask(set: &FixedBitSet) -> u32 {
    set.ones().fold(0u32, |m, i| m | 1 << i)
}

fn bits(mask: u32, len: usize) -> FixedBitSet {
    let mut s = FixedBitSet::with_capacity(len);
    for i in 0..len {
        if mask & (1 << i) != 0 {
            s.insert(i);
        }
    }
    s
}

fn subset(a: u32, b: u32) -> bool {
    a & !b == 0
}

impl Ctx {
    fn all_attrs(&self) -> u32 {
        (1u32 << self.n_attr) - 1
    }

    /// Objects having every attribute of `b`.
    fn extent(&self, b: u32) -> u32 {
        self.rows
            .iter()
            .enumerate()
            .filter(|(_, r)| subset(b, **r))
            .fold(0u32, |m, (g, _)| m | 1 << g)
    }

    /// Attributes shared by every object of `x`.
    fn intent(&self, x: u32) -> u32 {
        self.rows
            .iter()
            .enumerate()
            .filter(|(g, _)| x & (1 << g) != 0)
            .fold(self.all_attrs(), |m, (_, r)| m & r)
    }

    /// Every closed attribute set, found by trying them all.
    fn brute_concepts(&self) -> BTreeSet<(u32, u32)> {
        (0..=self.all_attrs())
            .filter_map(|b| {
                let ext = self.extent(b);
                (self.intent(ext) == b).then_some((ext, b))
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// 1. Concept enumeration and rule mining against brute force
// ---------------------------------------------------------------------------

fn c1_fca_oracle() -> Outcome_ {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut concepts, mut rules) = (0usize, 0usize);
    let thresholds = [(0.1, 0.5), (0.2, 0.8), (0.3, 1.0), (0.05, 0.6)];
    for case in 0..200 {
        let c = random_context(&mut rng, 12, 10, true);
        let expected = c.brute_concepts();
        let got: Vec<(u32, u32)> = enumerate_concepts(&c.ctx)
            .iter()
            .map(|k| (mask(&k.extent), mask(&k.intent)))
            .collect();
        let got_set: BTreeSet<(u32, u32)> = got.iter().copied().collect();
        ensure!(
            got.len() == got_set.len(),
            "context {case}: duplicate concepts"
        );
        ensure!(
            got_set == expected,
            "context {case}: {} concepts, brute force {}",
            got_set.len(),
            expected.len()
        );
        concepts += got.len();

        // rules: symptom subsets of each intent imply that intent's labels
        let (min_sup, min_conf) = thresholds[case % thresholds.len()];
        let n = c.rows.len() as f64;
        let mut want: BTreeMap<(u32, u32), (u64, u64)> = BTreeMap::new();
        for &(_, intent) in &expected {
            let (sym, lab) = (intent & !c.labels, intent & c.labels);
            if sym == 0 || lab == 0 {
                continue;
            }
            let mut a = sym;
            while a != 0 {
                let both = c.extent(a | lab).count_ones() as u64;
                let ante = c.extent(a).count_ones() as u64;
                if both as f64 / n >= min_sup && both as f64 / ante as f64 >= min_conf {
                    want.insert((a, lab), (both, ante));
                }
                a = (a - 1) & sym;
            }
        }
        let mined = mine_rules(&c.ctx, min_sup, min_conf).map_err(|e| e.to_string())?;
        let index = |name: &String| c.ctx.attribute_index(name).expect("known attribute");
        let mut got_rules = BTreeMap::new();
        for r in &mined {
            let a = r.antecedent.iter().fold(0u32, |m, x| m | 1 << index(x));
            let l = r.consequent.iter().fold(0u32, |m, x| m | 1 << index(x));
            let (both, ante) = want
                .get(&(a, l))
                .copied()
                .ok_or_else(|| format!("context {case}: unexpected rule {}", r.id))?;
            ensure!(
                r.support == both as f64 / n && r.confidence == both as f64 / ante as f64,
                "context {case}: {} has support {} confidence {}, counting gives {}/{} and {}/{}",
                r.id,
                r.support,
                r.confidence,
                both,
                n,
                both,
                ante
            );
            ensure!(
                (r.support_count, r.antecedent_count, r.object_count)
                    == (both, ante, c.rows.len() as u64),
                "context {case}: {} counts differ",
                r.id
            );
            got_rules.insert((a, l), ());
        }
        ensure!(
            got_rules.len() == want.len() && mined.len() == want.len(),
            "context {case}: mined {} rules, counting finds {}",
            mined.len(),
            want.len()
        );
        rules += mined.len();
    }
    let secs = start.elapsed().as_secs_f64();
    ensure!(secs.total_cmp(&30.0).is_lt(), "took {secs:.1}s");
    Ok(format!(
        "200 contexts, {concepts} concepts and {rules} rules match, {secs:.2}s"
    ))
}

// ---------------------------------------------------------------------------
// 2. Closure and Galois laws
// ---------------------------------------------------------------------------

fn c2_closure_laws() -> Outcome_ {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut violations = Vec::new();
    for draw in 0..1000 {
        let c = random_context(&mut rng, 12, 10, false);
        let (m, g) = (c.n_attr, c.rows.len());
        let a_mask = rng.random_range(0..=c.all_attrs());
        let b_mask = a_mask | rng.random_range(0..=c.all_attrs());
        let x_mask = rng.random_range(0..(1u32 << g));
        let (a, b, x) = (bits(a_mask, m), bits(b_mask, m), bits(x_mask, g));
        let cl_a = c.ctx.closure(&a);
        let cl_b = c.ctx.closure(&b);
        if !a.is_subset(&cl_a) {
            violations.push(format!("draw {draw}: extensivity"));
        }
        if !cl_a.is_subset(&cl_b) {
            violations.push(format!("draw {draw}: monotonicity"));
        }
        if c.ctx.closure(&cl_a) != cl_a {
            violations.push(format!("draw {draw}: idempotence"));
        }
        // A ⊆ X′ ⇔ X ⊆ A′
        let left = a.is_subset(&c.ctx.derive_objects(&x));
        let right = x.is_subset(&c.ctx.derive_attrs(&a));
        if left != right {
            violations.push(format!("draw {draw}: galois"));
        }
        let x_closed = c.ctx.derive_attrs(&c.ctx.derive_objects(&x));
        if !x.is_subset(&x_closed) {
            violations.push(format!("draw {draw}: object-side extensivity"));
        }
    }
    ensure!(
        violations.is_empty(),
        "{} violations, first: {}",
        violations.len(),
        violations[0]
    );
    Ok("1000 draws, 0 violations".into())
}

// ---------------------------------------------------------------------------
// 3. Lattice structure
// ---------------------------------------------------------------------------

fn c3_lattice() -> Outcome_ {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut pairs = 0usize;
    for case in 0..150 {
        let c = random_context(&mut rng, 8, 7, false);
        let cs: Vec<FormalConcept> = enumerate_concepts(&c.ctx);
        let leq = |p: &FormalConcept, q: &FormalConcept| subset(mask(&p.extent), mask(&q.extent));
        for a in &cs {
            for b in &cs {
                ensure!(
                    lattice_leq(a, b) == lattice_leq_by_intent(a, b)
                        && lattice_leq(a, b) == leq(a, b),
                    "context {case}: orders disagree"
                );
                let lower: Vec<&FormalConcept> =
                    cs.iter().filter(|k| leq(k, a) && leq(k, b)).collect();
                let glb: Vec<&&FormalConcept> = lower
                    .iter()
                    .filter(|m| lower.iter().all(|l| leq(l, m)))
                    .collect();
                ensure!(
                    glb.len() == 1,
                    "context {case}: {} greatest lower bounds",
                    glb.len()
                );
                ensure!(
                    meet(&c.ctx, a, b) == **glb[0],
                    "context {case}: meet is not the greatest lower bound"
                );
                let upper: Vec<&FormalConcept> =
                    cs.iter().filter(|k| leq(a, k) && leq(b, k)).collect();
                let lub: Vec<&&FormalConcept> = upper
                    .iter()
                    .filter(|m| upper.iter().all(|u| leq(m, u)))
                    .collect();
                ensure!(
                    lub.len() == 1,
                    "context {case}: {} least upper bounds",
                    lub.len()
                );
                ensure!(
                    join(&c.ctx, a, b) == **lub[0],
                    "context {case}: join is not the least upper bound"
                );
                pairs += 1;
            }
        }
    }
    Ok(format!(
        "150 contexts, {pairs} concept pairs with unique meet and join"
    ))
}

// ---------------------------------------------------------------------------
// 4. Recurring fault gets cheaper to diagnose
// ---------------------------------------------------------------------------

fn c4_closed_loop(shared: &mut Shared) -> Outcome_ {
    let cfg = load("dns_recurring.json")?;
    let ill = &cfg.agent.ill;
    ensure!(
        cfg.episodes == 20 && (ill.min_support, ill.min_confidence, ill.cadence) == (0.2, 0.8, 5),
        "config drifted from the criterion"
    );
    ensure!(
        cfg.script
            .iter()
            .all(|e| e.kind == FaultKind::DnsErrorBurst),
        "config must repeat one fault"
    );
    let start = Instant::now();
    let first = run(&cfg)?;
    let secs = start.elapsed().as_secs_f64();
    let second = run(&cfg)?;
    ensure!(first.logs.len() == 20, "{} episodes", first.logs.len());

    let reasoner = |r: std::ops::Range<usize>| -> u64 {
        first.logs[r]
            .iter()
            .map(|l| l.ledger.used(Component::Reasoner).0)
            .sum()
    };
    let (early, late) = (reasoner(0..5), reasoner(15..20));
    ensure!(early > 0, "no reasoner spend early on");
    ensure!(
        2 * late <= early,
        "late spend {late} milli is above half of early {early} milli"
    );

    let mut correct = 0;
    for (log, row) in first.logs[15..].iter().zip(&first.report.rows[15..]) {
        let top = log
            .diagnosis
            .as_ref()
            .and_then(|d| d.top())
            .map(|h| h.fault_kind);
        if top == Some(row.fault_kind) && row.correct {
            correct += 1;
        }
    }
    ensure!(correct == 5, "top-1 correct in {correct}/5 late episodes");
    let shortcut = first.logs[15..]
        .iter()
        .filter(|l| l.diagnosis.as_ref().map(|d| d.path) == Some(DiagnosisPath::RuleShortcut))
        .count();

    let ser = |o: &RunOutput| serde_json::to_string(&(&o.report, &o.logs)).expect("serializable");
    ensure!(
        ser(&first) == ser(&second),
        "two runs with seed {} differ",
        cfg.seed
    );
    ensure!(secs.total_cmp(&10.0).is_lt(), "run took {secs:.1}s");
    shared.keep("dns_recurring", &first);
    Ok(format!(
        "reasoner {:.2} -> {:.2} units/episode ({:.0}%), late top-1 5/5, shortcut {shortcut}/5, {secs:.2}s",
        early as f64 / 5000.0,
        late as f64 / 5000.0,
        100.0 * late as f64 / early as f64
    ))
}

// ---------------------------------------------------------------------------
// 5. Decommissioned hardware is forgotten
// ---------------------------------------------------------------------------

fn incident(
    agent: &mut Agent,
    sim: &mut Simulator,
    kind: FaultKind,
    target: &str,
) -> Result<EpisodeLog, String> {
    ensure!(
        agent.watch(sim, 6).map_err(|e| e.to_string())?.is_none(),
        "cluster not quiet before {kind}"
    );
    sim.inject_fault(FaultScenario::new(kind, target, sim.tick(), 60, 0.5))
        .map_err(|e| e.to_string())?;
    let obs = agent
        .watch(sim, 20)
        .map_err(|e| e.to_string())?
        .ok_or_else(|| format!("{kind} on {target} not detected"))?;
    let log = agent
        .run_episode(sim, obs.alerts, Some(kind))
        .map_err(|e| e.to_string())?;
    if log.escalated() {
        sim.state.operator_resolve();
    }
    Ok(log)
}

fn c5_forgetting(shared: &mut Shared) -> Outcome_ {
    let mut sim = Simulator::from_spec(&TopologySpec::reference(), 5, SimConfig::default())
        .map_err(|e| e.to_string())?;
    let config = AgentConfig {
        ill: IllConfig {
            min_support: 0.2,
            min_confidence: 0.8,
            cadence: 5,
            ..IllConfig::default()
        },
        ..AgentConfig::default()
    };
    let mut agent = Agent::new(
        config,
        Vocabulary::default(),
        &sim.topology,
        sim.config(),
        seed_runbooks(),
        &default_policies(),
    )
    .map_err(|e| e.to_string())?;
    let mut before = Vec::new();
    let plan = [
        (FaultKind::NoisyNeighbor, "n3", 5),
        (FaultKind::DnsErrorBurst, "svc_d", 4),
        (FaultKind::NoisyNeighbor, "n3", 1),
    ];
    for (kind, target, n) in plan {
        for _ in 0..n {
            before.push(incident(&mut agent, &mut sim, kind, target)?);
        }
    }

    // rules whose every supporting episode lies on n3 or its pods
    let mut footprint = sim.topology.pods_on_node("n3");
    footprint.insert("n3".to_string());
    let evidence: BTreeMap<&str, &BTreeSet<String>> = agent
        .episodic
        .entries()
        .iter()
        .map(|e| (e.episode.id.as_str(), &e.episode.evidence_entities))
        .collect();
    let only_n3: BTreeSet<String> = agent
        .kg
        .rules_with_status(RuleStatus::Validated)
        .filter(|r| {
            !r.provenance.is_empty()
                && r.provenance.iter().all(|p| {
                    evidence
                        .get(p.as_str())
                        .is_some_and(|ev| !ev.is_empty() && ev.is_subset(&footprint))
                })
        })
        .map(|r| r.id.clone())
        .collect();
    ensure!(!only_n3.is_empty(), "no rules learned from n3 alone");
    let last = before
        .last()
        .and_then(|l| l.diagnosis.as_ref())
        .ok_or("no diagnosis")?;
    ensure!(
        last.path == DiagnosisPath::RuleShortcut
            && last
                .hypotheses
                .iter()
                .any(|h| h.via_rule.as_ref().is_some_and(|r| only_n3.contains(r))),
        "n3 rules were never used, so forgetting them proves nothing"
    );

    sim.inject_fault(FaultScenario::decommission("n3", sim.tick()))
        .map_err(|e| e.to_string())?;
    ensure!(
        agent
            .watch(&mut sim, 8)
            .map_err(|e| e.to_string())?
            .is_none(),
        "maintenance raised an incident"
    );
    ensure!(agent.maintenance.len() == 1, "decommission not recorded");
    for id in &only_n3 {
        let r = agent.kg.rule(id).ok_or("rule vanished")?;
        ensure!(r.status == RuleStatus::Retired, "{id} is {:?}", r.status);
    }

    // control: same state, but the n3 rules never existed
    let mut control = agent.clone();
    let mut control_sim = sim.clone();
    for id in &only_n3 {
        control.kg.purge_rule(id);
    }

    let after = [
        (FaultKind::NoisyNeighbor, "n5"),
        (FaultKind::NoisyNeighbor, "n5"),
        (FaultKind::DnsErrorBurst, "svc_d"),
        (FaultKind::DnsErrorBurst, "svc_d"),
    ];
    let mut would_match = 0;
    for (i, (kind, target)) in after.iter().enumerate() {
        let a = incident(&mut agent, &mut sim, *kind, target)?;
        let b = incident(&mut control, &mut control_sim, *kind, target)?;
        let leaked: Vec<&str> = a
            .pack_keys()
            .into_iter()
            .filter(|k| only_n3.iter().any(|id| k.contains(id.as_str())))
            .collect();
        ensure!(
            leaked.is_empty(),
            "episode {}: pack carries {:?}",
            i + 11,
            leaked
        );
        ensure!(
            a.pack_keys() == b.pack_keys(),
            "episode {}: pack differs from control",
            i + 11
        );
        ensure!(
            a.diagnosis == b.diagnosis,
            "episode {}: diagnosis differs from control",
            i + 11
        );
        ensure!(
            a.episode.outcome == b.episode.outcome && a.episode.actions == b.episode.actions,
            "episode {}: outcome differs from control",
            i + 11
        );
        if only_n3.iter().any(|id| {
            agent
                .kg
                .rule(id)
                .is_some_and(|r| r.antecedent.is_subset(&a.episode.symptom_attributes))
        }) {
            would_match += 1;
        }
        shared.logs.push(a);
        shared.logs.push(b);
    }
    ensure!(
        would_match > 0,
        "no later episode could have used the retired rules"
    );
    shared
        .audit_logs
        .push(("forgetting".into(), agent.transitions.clone()));
    shared
        .audit_logs
        .push(("forgetting-control".into(), control.transitions.clone()));
    shared.logs.extend(before);
    Ok(format!(
        "{} n3-only rules retired, {} episodes forgotten, 4 later episodes match the control trace ({would_match} would have matched)",
        only_n3.len(),
        agent.maintenance[0].forgotten
    ))
}

// ---------------------------------------------------------------------------
// 6. Episodic retrieval
// ---------------------------------------------------------------------------

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na.sqrt() * nb.sqrt())
    }
}

fn episode(id: String, end: u64, v: Vec<f64>) -> Episode {
    Episode {
        id,
        start_tick: 0,
        end_tick: end,
        affected_service: "svc_a".into(),
        symptom_attributes: BTreeSet::from(["latency_spike".to_string()]),
        evidence_entities: BTreeSet::new(),
        max_severity: 1,
        root_cause_label: None,
        confirmed_cause: None,
        actions: Vec::new(),
        outcome: Outcome {
            resolved: true,
            ticks_to_resolve: None,
            escalation_reason: None,
        },
        feature_vector: v,
    }
}

fn c6_retrieval() -> Outcome_ {
    const DIM: usize = 5;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut queries, mut ties) = (0usize, 0usize);
    for store_no in 0..100 {
        let n = if store_no < 3 {
            store_no * 500
        } else {
            rng.random_range(1..=1000)
        };
        let mut ids: Vec<usize> = (0..n).collect();
        // shuffle so id order and insertion order disagree
        for i in (1..ids.len()).rev() {
            ids.swap(i, rng.random_range(0..=i));
        }
        let mut store = EpisodicStore::new(DIM);
        let mut all = Vec::with_capacity(n);
        for id in ids {
            // coarse coordinates make exact similarity ties common
            let v: Vec<f64> = (0..DIM)
                .map(|_| f64::from(rng.random_range(0..3u8)))
                .collect();
            let ep = episode(format!("e{id:04}"), rng.random_range(0..20), v);
            all.push(ep.clone());
            store.insert(ep).map_err(|e| e.to_string())?;
        }
        let dropped: BTreeSet<String> = all
            .iter()
            .filter(|_| rng.random_bool(0.1))
            .map(|e| e.id.clone())
            .collect();
        store.forget(&ForgetCriteria::Incidents(dropped.clone()));
        for _ in 0..5 {
            let q: Vec<f64> = (0..DIM)
                .map(|_| f64::from(rng.random_range(0..3u8)))
                .collect();
            let k = rng.random_range(0..=n + 3);
            let mut expect: Vec<(f64, u64, &str)> = all
                .iter()
                .filter(|e| !dropped.contains(&e.id))
                .map(|e| (cosine(&q, &e.feature_vector), e.end_tick, e.id.as_str()))
                .collect();
            expect.sort_by(|a, b| b.0.total_cmp(&a.0).then(b.1.cmp(&a.1)).then(a.2.cmp(b.2)));
            expect.truncate(k);
            ties += expect.windows(2).filter(|w| w[0].0 == w[1].0).count();
            let got: Vec<(u64, &str)> = store
                .search(&q, k)
                .into_iter()
                .map(|(e, s)| (s.to_bits(), e.id.as_str()))
                .collect();
            let want: Vec<(u64, &str)> =
                expect.iter().map(|(s, _, id)| (s.to_bits(), *id)).collect();
            ensure!(
                got == want,
                "store {store_no} (n={n}, k={k}): ranking differs"
            );
            queries += 1;
        }
    }
    Ok(format!(
        "100 stores, {queries} queries identical to exhaustive ranking, {ties} tied neighbours"
    ))
}

// ---------------------------------------------------------------------------
// 7. Ontology soundness
// ---------------------------------------------------------------------------

/// Relation signatures as documented: predicate, domain, range.
const SIGNATURES: [(&str, &str, &str); 11] = [
    ("runs_on", "Pod", "Node"),
    ("member_of", "Node", "Rack"),
    ("uplink", "Rack", "ToRSwitch"),
    ("depends_on", "Service", "Service"),
    ("serves", "Pod", "Service"),
    ("indicates", "Rule", "FaultKind"),
    ("remedied_by", "FaultKind", "Action"),
    ("constrained_by", "Action", "Policy"),
    ("decommissioned", "Node", "Literal"),
    ("antecedent", "Rule", "Attribute"),
    ("recommends", "Rule", "Action"),
];

fn c7_ontology() -> Outcome_ {
    let table: BTreeMap<&str, (&str, &str)> =
        SIGNATURES.iter().map(|(p, d, r)| (*p, (*d, *r))).collect();
    let ont = Ontology::default();
    let lib: BTreeMap<&str, (&str, &str)> = ont
        .relations
        .iter()
        .map(|(p, s)| (p.as_str(), (s.domain.as_str(), s.range.as_str())))
        .collect();
    ensure!(
        lib == table,
        "ontology differs from the documented signatures"
    );

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut kg = KnowledgeGraph::new(ont).map_err(|e| e.to_string())?;
    let classes: Vec<Class> = Class::ALL
        .into_iter()
        .filter(|c| *c != Class::Literal)
        .collect();
    let mut class_of: BTreeMap<String, &str> = BTreeMap::new();
    let mut by_class: BTreeMap<&str, Vec<String>> = BTreeMap::new();
    for c in &classes {
        for i in 0..4 {
            let id = format!("{}_{i}", c.as_str().to_lowercase());
            kg.declare(&id, *c).map_err(|e| e.to_string())?;
            class_of.insert(id.clone(), c.as_str());
            by_class.entry(c.as_str()).or_default().push(id);
        }
    }
    let mut names: Vec<String> = class_of.keys().cloned().collect();
    names.extend((0..4).map(|i| format!("ghost_{i}")));
    let mut predicates: Vec<&str> = SIGNATURES.iter().map(|s| s.0).collect();
    predicates.extend(["likes", "instance_of"]);

    let valid = |s: &str, p: &str, o: &str| -> bool {
        let Some((dom, range)) = table.get(p) else {
            return false;
        };
        class_of.get(s) == Some(dom) && (*range == "Literal" || class_of.get(o) == Some(range))
    };
    let mut accepted: BTreeSet<(String, String, String)> = BTreeSet::new();
    let mut expected: BTreeSet<(String, String, String)> = BTreeSet::new();
    let pick = |rng: &mut ChaCha8Rng, class: Option<&str>| -> String {
        match class.and_then(|c| by_class.get(c)) {
            Some(pool) if rng.random_bool(0.6) => pool[rng.random_range(0..pool.len())].clone(),
            _ if class == Some("Literal") => format!("t{}", rng.random_range(0..50)),
            _ => names[rng.random_range(0..names.len())].clone(),
        }
    };
    for batch in 0..20 {
        for i in 0..50 {
            let p = predicates[rng.random_range(0..predicates.len())];
            let sig = table.get(p);
            let s = pick(&mut rng, sig.map(|x| x.0));
            let o = pick(&mut rng, sig.map(|x| x.1));
            let ok = kg
                .assert(Triple::new(
                    &s,
                    p,
                    &o,
                    Provenance::Operator,
                    (batch * 50 + i) as u64,
                ))
                .is_ok();
            let key = (s.clone(), p.to_string(), o.clone());
            ensure!(ok == valid(&s, p, &o), "{s} {p} {o}: accepted={ok}");
            if ok {
                accepted.insert(key.clone());
            }
            if valid(&s, p, &o) {
                expected.insert(key);
            }
        }
        ensure!(
            kg.validate_all().is_ok(),
            "full scan failed after batch {batch}"
        );
        ensure!(
            kg.triples()
                .all(|t| valid(&t.subject, &t.predicate, &t.object)),
            "stored triple violates a signature after batch {batch}"
        );
    }
    let stored: BTreeSet<(String, String, String)> = kg.triples().map(|t| t.key()).collect();
    ensure!(
        accepted == expected && stored == expected,
        "accepted set differs from the valid subset"
    );
    Ok(format!(
        "1000 insertions, {} valid and all accepted, {} rejected, 20 full scans clean",
        expected.len(),
        1000 - accepted.len()
    ))
}

// ---------------------------------------------------------------------------
// 8. Pack budgets
// ---------------------------------------------------------------------------

fn included(p: &ContextPack) -> BTreeSet<String> {
    p.items().map(|(_, i)| i.key.clone()).collect()
}

fn c8_budget(shared: &Shared) -> Outcome_ {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut truncated = 0;
    for case in 0..500 {
        let task_cost = rng.random_range(1..=3u64);
        let mut policy = BudgetPolicy {
            pack_budget: rng.random_range(task_cost..=120),
            section_caps: SectionKind::ALL
                .iter()
                .map(|s| (*s, rng.random_range(1..=60)))
                .collect(),
        };
        policy
            .section_caps
            .insert(SectionKind::Task, rng.random_range(task_cost..=60));
        let state = AceState {
            weights: SectionKind::ALL
                .iter()
                .map(|s| (*s, rng.random_range(5..=20u8)))
                .collect(),
        };
        let note = |section, key: String, priority, rank, cost| Candidate {
            section,
            key: key.clone(),
            priority,
            rank,
            cost,
            content: ItemContent::Working(WorkingItem::Note { text: key }),
        };
        let mut cands = vec![note(SectionKind::Task, "task".into(), 3, 0, task_cost)];
        for i in 0..rng.random_range(0..40) {
            let section = SectionKind::ALL[rng.random_range(1..SectionKind::ALL.len())];
            cands.push(note(
                section,
                format!("c{i}"),
                rng.random_range(0..=3),
                i,
                rng.random_range(1..=20),
            ));
        }
        let p = pack(cands.clone(), &policy, &state).map_err(|e| format!("case {case}: {e}"))?;
        ensure!(
            p.total_cost <= policy.pack_budget,
            "case {case}: {} over {}",
            p.total_cost,
            policy.pack_budget
        );
        ensure!(
            p.total_cost == p.items().map(|(_, i)| i.cost).sum::<u64>(),
            "case {case}: total disagrees with items"
        );
        for s in &p.sections {
            ensure!(
                s.cost <= state.effective_cap(&policy, s.kind),
                "case {case}: section {} over cap",
                s.kind
            );
        }
        if p.item_count() < cands.len() {
            truncated += 1;
        }
        let small = included(&p);
        let mut raised = policy.clone();
        raised.pack_budget += rng.random_range(1..=100);
        let big = included(&pack(cands, &raised, &state).map_err(|e| e.to_string())?);
        ensure!(
            small.is_subset(&big),
            "case {case}: raising the budget dropped items"
        );
    }
    let real: Vec<_> = shared.logs.iter().flat_map(|l| &l.ledger.packs).collect();
    ensure!(!real.is_empty(), "no assembled packs to check");
    ensure!(
        real.iter().all(|p| p.cost <= p.budget),
        "an assembled pack exceeded its budget"
    );
    Ok(format!(
        "500 random packs within budget ({truncated} truncated, all monotone), {} assembled packs within budget",
        real.len()
    ))
}

// ---------------------------------------------------------------------------
// 9. State-machine legality
// ---------------------------------------------------------------------------

fn c9_fsm(shared: &mut Shared) -> Outcome_ {
    // exhaust budgets at different points of the loop
    let base = load("dns_recurring.json")?;
    for units in [1u64, 2, 3, 5, 8, 13, 21, 34] {
        let mut cfg = base.clone();
        cfg.episodes = 6;
        cfg.agent.limits = BudgetLimits {
            compute: MilliUnits::units(units),
            tool_calls: 100,
        };
        let out = run(&cfg)?;
        shared.keep(&format!("compute-{units}"), &out);
    }
    for calls in 1..=4 {
        let mut cfg = base.clone();
        cfg.episodes = 6;
        cfg.agent.limits.tool_calls = calls;
        let out = run(&cfg)?;
        shared.keep(&format!("calls-{calls}"), &out);
    }
    // runbooks that never fix the fault drive the retry loop to its bound
    let decoys = (0..4)
        .map(|i| Runbook {
            id: format!("rb_decoy_{i}"),
            trigger: BTreeSet::from(["dns_error".to_string()]),
            steps: vec![ActionKind::RestartPod],
            success_count: 0,
            attempt_count: 0,
            policy_tags: BTreeSet::new(),
            seed_for: None,
        })
        .collect();
    let mut cfg = base.clone();
    cfg.episodes = 3;
    cfg.runbooks = Some(decoys);
    let out = run(&cfg)?;
    shared.keep("decoys", &out);
    let bound = cfg.agent.reasoner.escalation_after;
    let peak = out
        .agent
        .transitions
        .iter()
        .map(|r| r.attempt)
        .max()
        .unwrap_or(0);
    ensure!(peak == bound, "retry loop peaked at {peak}, bound {bound}");

    let mut records = 0;
    for (label, log) in &shared.audit_logs {
        audit(log).map_err(|e| format!("{label}: {e}"))?;
        ensure!(
            log.iter().all(|r| r.attempt <= r.escalation_after),
            "{label}: retry beyond escalation_after"
        );
        records += log.len();
    }

    let (mut exhausted, mut phases) = (0, BTreeSet::new());
    for log in &shared.logs {
        let budget_events: Vec<usize> = log
            .transitions
            .iter()
            .enumerate()
            .filter(|(_, t)| t.event == Event::BudgetExceeded)
            .map(|(i, _)| i)
            .collect();
        match log.overrun_at {
            Some(i) if i < log.transitions.len() => {
                let t = &log.transitions[i];
                ensure!(
                    t.event == Event::BudgetExceeded && t.to == Phase::Escalated,
                    "{}: overrun followed by {} to {}",
                    log.incident,
                    t.event,
                    t.to
                );
                ensure!(
                    i + 1 == log.transitions.len(),
                    "{}: transitions after exhaustion",
                    log.incident
                );
                ensure!(
                    budget_events == vec![i],
                    "{}: stray budget events",
                    log.incident
                );
                exhausted += 1;
                phases.insert(t.from);
            }
            Some(_) => {
                // went over while closing an already escalated incident
                ensure!(
                    log.final_phase == Phase::Escalated,
                    "{}: overrun without a transition",
                    log.incident
                );
                ensure!(
                    budget_events.is_empty(),
                    "{}: stray budget events",
                    log.incident
                );
            }
            None => ensure!(
                budget_events.is_empty(),
                "{}: budget event without overrun",
                log.incident
            ),
        }
    }
    ensure!(
        exhausted > 0 && phases.len() >= 2,
        "budget exhaustion exercised in too few phases: {phases:?}"
    );
    Ok(format!(
        "{records} transitions in {} logs legal, retries peak at {peak}/{bound}, {exhausted} exhaustions escalate at once (from {} phases)",
        shared.audit_logs.len(),
        phases.len()
    ))
}

// ---------------------------------------------------------------------------
// 10. Byte-identical reruns
// ---------------------------------------------------------------------------

fn files(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).expect("readable dir") {
            let path = entry.expect("dir entry").path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).expect("inside dir").to_path_buf();
                out.insert(rel, fs::read(&path).expect("readable file"));
            }
        }
    }
    out
}

fn c10_determinism(shared: &mut Shared) -> Outcome_ {
    let cfg = load("acceptance.json")?;
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut trees = Vec::new();
    for i in 0..2 {
        let dir = tmp.path().join(format!("run{i}"));
        let out = run(&cfg)?;
        runner::write_outputs(&out, &dir).map_err(|e| e.to_string())?;
        trees.push(files(&dir));
        if i == 0 {
            shared.keep("acceptance", &out);
        }
    }
    for f in [runner::REPORT_FILE, runner::EPISODES_FILE, runner::KG_FILE] {
        ensure!(trees[0].contains_key(Path::new(f)), "{f} missing");
    }
    ensure!(trees[0].keys().eq(trees[1].keys()), "file sets differ");
    for (path, bytes) in &trees[0] {
        ensure!(trees[1][path] == *bytes, "{} differs", path.display());
    }
    let total: usize = trees[0].values().map(Vec::len).sum();
    Ok(format!(
        "{} files, {total} bytes identical across two runs of seed {}",
        trees[0].len(),
        cfg.seed
    ))
}

// ---------------------------------------------------------------------------

fn main() {
    let mut shared = Shared::default();
    let mut results: BTreeMap<u8, (&str, Outcome_)> = BTreeMap::new();
    let mut check = |n: u8,
                     name: &'static str,
                     f: &mut dyn FnMut(&mut Shared) -> Outcome_,
                     shared: &mut Shared| {
        let r = panic::catch_unwind(AssertUnwindSafe(|| f(shared))).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        results.insert(n, (name, r));
    };
    check(
        1,
        "fca oracle equivalence",
        &mut |_| c1_fca_oracle(),
        &mut shared,
    );
    check(
        2,
        "closure and galois laws",
        &mut |_| c2_closure_laws(),
        &mut shared,
    );
    check(3, "lattice structure", &mut |_| c3_lattice(), &mut shared);
    check(
        4,
        "closed-loop improvement",
        &mut c4_closed_loop,
        &mut shared,
    );
    check(5, "conditional forgetting", &mut c5_forgetting, &mut shared);
    check(
        6,
        "episodic retrieval exactness",
        &mut |_| c6_retrieval(),
        &mut shared,
    );
    check(7, "ontology soundness", &mut |_| c7_ontology(), &mut shared);
    check(
        10,
        "end-to-end determinism",
        &mut c10_determinism,
        &mut shared,
    );
    check(8, "budget safety", &mut |s| c8_budget(s), &mut shared);
    check(9, "state-machine legality", &mut c9_fsm, &mut shared);

    let mut failed = 0;
    for (n, (name, r)) in &results {
        match r {
            Ok(detail) => println!("PASS  {n:>2} {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {n:>2} {name}: {why}");
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        results.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
