//! Ordering strategies behind a common trait, looked up by name at runtime.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// What the reference model says about one pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceSignal {
    pub jsd: f64,
    pub cosine: f64,
    pub flipped: bool,
}

pub struct OrderingContext<'a> {
    /// The target's pairs; every ordering is a permutation of these.
    pub pairs: &'a [String],
    pub reference: &'a HashMap<String, ReferenceSignal>,
}

impl OrderingContext<'_> {
    fn signal(&self, pair_id: &str) -> Result<&ReferenceSignal> {
        self.reference
            .get(pair_id)
            .ok_or_else(|| Error::MissingReference(pair_id.to_string()))
    }
}

pub trait PrioritizationStrategy: Send + Sync {
    /// Registry key, as used on the command line.
    fn name(&self) -> &'static str;

    fn description(&self) -> &'static str;

    fn needs_reference(&self) -> bool {
        true
    }

    /// Orders the context's pairs. `rng` drives the baseline shuffle and tie breaking.
    fn order(&self, ctx: &OrderingContext<'_>, rng: &mut ChaCha8Rng) -> Result<Vec<String>>;
}

/// Shuffle first, then stable-sort by `key`: ties end up in seeded random order.
fn sort_shuffled<K, F>(ctx: &OrderingContext<'_>, rng: &mut ChaCha8Rng, key: F) -> Result<Vec<String>>
where
    F: Fn(&ReferenceSignal) -> K,
    K: Copy,
    K: PartialOrd,
{
    let mut shuffled: Vec<&String> = ctx.pairs.iter().collect();
    shuffled.shuffle(rng);
    let mut keyed = shuffled
        .into_iter()
        .map(|id| Ok((key(ctx.signal(id)?), id)))
        .collect::<Result<Vec<_>>>()?;
    keyed.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("keys are not NaN"));
    Ok(keyed.into_iter().map(|(_, id)| id.clone()).collect())
}

pub struct RandomOrder;

impl PrioritizationStrategy for RandomOrder {
    fn name(&self) -> &'static str {
        "random"
    }

    fn description(&self) -> &'static str {
        "uniform seeded shuffle (baseline)"
    }

    fn needs_reference(&self) -> bool {
        false
    }

    fn order(&self, ctx: &OrderingContext<'_>, rng: &mut ChaCha8Rng) -> Result<Vec<String>> {
        let mut order = ctx.pairs.to_vec();
        order.shuffle(rng);
        Ok(order)
    }
}

pub struct RefJsdDescending;

impl PrioritizationStrategy for RefJsdDescending {
    fn name(&self) -> &'static str {
        "jsd"
    }

    fn description(&self) -> &'static str {
        "reference Jensen-Shannon distance, largest first"
    }

    fn order(&self, ctx: &OrderingContext<'_>, rng: &mut ChaCha8Rng) -> Result<Vec<String>> {
        sort_shuffled(ctx, rng, |s| -s.jsd)
    }
}

pub struct RefCosineAscending;

impl PrioritizationStrategy for RefCosineAscending {
    fn name(&self) -> &'static str {
        "cosine"
    }

    fn description(&self) -> &'static str {
        "reference cosine similarity, smallest first"
    }

    fn order(&self, ctx: &OrderingContext<'_>, rng: &mut ChaCha8Rng) -> Result<Vec<String>> {
        sort_shuffled(ctx, rng, |s| s.cosine)
    }
}

pub struct RefBiasFirst;

impl PrioritizationStrategy for RefBiasFirst {
    fn name(&self) -> &'static str {
        "bias-first"
    }

    fn description(&self) -> &'static str {
        "pairs the reference flipped first, each block shuffled"
    }

    fn order(&self, ctx: &OrderingContext<'_>, rng: &mut ChaCha8Rng) -> Result<Vec<String>> {
        sort_shuffled(ctx, rng, |s| u8::from(!s.flipped))
    }
}

pub struct StrategyRegistry {
    strategies: Vec<Box<dyn PrioritizationStrategy>>,
}

impl StrategyRegistry {
    pub fn empty() -> Self {
        StrategyRegistry { strategies: Vec::new() }
    }

    pub fn register(&mut self, strategy: Box<dyn PrioritizationStrategy>) -> Result<()> {
        if self.strategies.iter().any(|s| s.name() == strategy.name()) {
            return Err(Error::InvalidArgument(format!(
                "strategy `{}` registered twice",
                strategy.name()
            )));
        }
        self.strategies.push(strategy);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&dyn PrioritizationStrategy> {
        let wanted = name.trim();
        self.strategies
            .iter()
            .find(|s| s.name().eq_ignore_ascii_case(wanted))
            .map(|s| s.as_ref())
            .ok_or_else(|| Error::UnknownStrategy(wanted.to_string()))
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.strategies.iter().map(|s| s.name()).collect()
    }

    /// Resolves a comma-separated list such as `random,jsd,cosine,bias-first`.
    pub fn resolve_list(&self, list: &str) -> Result<Vec<&dyn PrioritizationStrategy>> {
        let resolved = list
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(|s| self.get(s))
            .collect::<Result<Vec<_>>>()?;
        if resolved.is_empty() {
            return Err(Error::InvalidArgument("no strategies selected".into()));
        }
        Ok(resolved)
    }
}

impl Default for StrategyRegistry {
    fn default() -> Self {
        let mut registry = StrategyRegistry::empty();
        for s in [
            Box::new(RandomOrder) as Box<dyn PrioritizationStrategy>,
            Box::new(RefJsdDescending),
            Box::new(RefCosineAscending),
            Box::new(RefBiasFirst),
        ] {
            registry.register(s).expect("builtin names are distinct");
        }
        registry
    }
}
