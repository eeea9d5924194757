use fixedbitset::FixedBitSet;

use super::context::{FormalContext, NamedConcept};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FormalConcept {
    pub extent: FixedBitSet,
    pub intent: FixedBitSet,
}

impl FormalConcept {
    pub fn from_intent(ctx: &FormalContext, intent: FixedBitSet) -> Self {
        FormalConcept {
            extent: ctx.derive_attrs(&intent),
            intent,
        }
    }

    pub fn named(&self, ctx: &FormalContext) -> NamedConcept {
        NamedConcept {
            extent: ctx.object_names(&self.extent),
            intent: ctx.attr_names(&self.intent),
        }
    }
}

/// Counts closure evaluations.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct ClosureCounter(pub u64);

impl ClosureCounter {
    pub fn closure(&mut self, ctx: &FormalContext, attrs: &FixedBitSet) -> FixedBitSet {
        self.0 += 1;
        ctx.closure(attrs)
    }
}

/// Next closed set after `current` in lectic order, or `None` after the last.
fn next_closure(
    ctx: &FormalContext,
    current: &FixedBitSet,
    counter: &mut ClosureCounter,
) -> Option<FixedBitSet> {
    let m = ctx.n_attributes();
    let mut prefix = current.clone();
    for i in (0..m).rev() {
        if current.contains(i) {
            prefix.set(i, false);
            continue;
        }
        // prefix = current ∩ {0..i}
        let mut candidate = prefix.clone();
        candidate.insert(i);
        let closed = counter.closure(ctx, &candidate);
        let adds_smaller = closed.difference(&prefix).any(|j| j < i);
        if !adds_smaller {
            return Some(closed);
        }
    }
    None
}

/// All formal concepts, ordered lectically by intent.
pub fn enumerate_concepts(ctx: &FormalContext) -> Vec<FormalConcept> {
    enumerate_concepts_counted(ctx).0
}

pub fn enumerate_concepts_counted(ctx: &FormalContext) -> (Vec<FormalConcept>, ClosureCounter) {
    let mut counter = ClosureCounter::default();
    let mut intents = vec![counter.closure(ctx, &ctx.empty_attrs())];
    while let Some(next) = next_closure(ctx, intents.last().expect("nonempty"), &mut counter) {
        intents.push(next);
    }
    let concepts = intents
        .into_iter()
        .map(|i| FormalConcept::from_intent(ctx, i))
        .collect();
    (concepts, counter)
}

pub fn lattice_leq(a: &FormalConcept, b: &FormalConcept) -> bool {
    a.extent.is_subset(&b.extent)
}

/// The same order read off the intents.
pub fn lattice_leq_by_intent(a: &FormalConcept, b: &FormalConcept) -> bool {
    b.intent.is_subset(&a.intent)
}

pub fn meet(ctx: &FormalContext, a: &FormalConcept, b: &FormalConcept) -> FormalConcept {
    let mut extent = a.extent.clone();
    extent.intersect_with(&b.extent);
    let intent = ctx.derive_objects(&extent);
    FormalConcept { extent, intent }
}

pub fn join(ctx: &FormalContext, a: &FormalConcept, b: &FormalConcept) -> FormalConcept {
    let mut intent = a.intent.clone();
    intent.intersect_with(&b.intent);
    FormalConcept::from_intent(ctx, intent)
}

pub fn top(ctx: &FormalContext) -> FormalConcept {
    FormalConcept::from_intent(ctx, ctx.derive_objects(&ctx.all_objects()))
}

pub fn bottom(ctx: &FormalContext) -> FormalConcept {
    FormalConcept::from_intent(ctx, ctx.all_attrs())
}
