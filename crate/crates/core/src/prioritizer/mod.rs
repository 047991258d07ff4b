//! Cross-model guided bias detection: order a target model's pairs using a
//! reference model's predictions and measure how much of the target's bias is
//! found per inference budget.

mod strategy;

pub use strategy::{
    OrderingContext, PrioritizationStrategy, RandomOrder, RefBiasFirst, RefCosineAscending, RefJsdDescending,
    ReferenceSignal, StrategyRegistry,
};

use std::collections::{HashMap, HashSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detector::PairVerdict;
use crate::error::{Error, Result};
use crate::metrics::ShiftRecord;
use crate::stats::{vargha_delaney_a12, wilcoxon_rank_sum, Alternative};

/// Budget grid: `k / GRID_STEPS` for `k = 1..=GRID_STEPS` (5% steps).
pub const GRID_STEPS: usize = 20;
/// Grid indices (1-based `k`) reported in benchmark tables: 20, 40, 60, 80%.
pub const HIGHLIGHT_STEPS: [usize; 4] = [4, 8, 12, 16];
pub const DEFAULT_REPETITIONS: usize = 100;

pub fn budget_fraction(step: usize) -> f64 {
    step as f64 / GRID_STEPS as f64
}

/// Pairs evaluated at grid step `k`: `ceil(k * n / GRID_STEPS)`.
pub fn budget_count(step: usize, n: usize) -> usize {
    (step * n).div_ceil(GRID_STEPS)
}

/// Joins reference shifts and verdicts into per-pair signals. The verdict's
/// flip flag wins over the one copied into the shift record.
pub fn reference_signals(shifts: &[ShiftRecord], verdicts: &[PairVerdict]) -> HashMap<String, ReferenceSignal> {
    let flips: HashMap<&str, bool> = verdicts.iter().map(|v| (v.pair_id.as_str(), v.flipped)).collect();
    shifts
        .iter()
        .map(|s| {
            (
                s.pair_id.clone(),
                ReferenceSignal {
                    jsd: s.jsd,
                    cosine: s.cosine,
                    flipped: flips.get(s.pair_id.as_str()).copied().unwrap_or(s.flipped),
                },
            )
        })
        .collect()
}

/// Orders `pairs` with `strategy`, seeding its generator with `seed`.
pub fn order_pairs(
    strategy: &dyn PrioritizationStrategy,
    seed: u64,
    pairs: &[String],
    reference: &HashMap<String, ReferenceSignal>,
) -> Result<Vec<String>> {
    let ctx = OrderingContext { pairs, reference };
    strategy.order(&ctx, &mut ChaCha8Rng::seed_from_u64(seed))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub budget: f64,
    pub detected: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionCurve {
    pub points: Vec<CurvePoint>,
    /// Smallest number of evaluated pairs that uncovers every flip.
    pub full_detection_at: usize,
    pub pairs: usize,
    pub flips: usize,
}

/// The target's pair ids and flip flags, in verdict order.
#[derive(Debug, Clone)]
pub struct TargetFlips {
    pub model_id: String,
    pub pairs: Vec<String>,
    flipped: HashMap<String, bool>,
}

impl TargetFlips {
    pub fn from_verdicts(verdicts: &[PairVerdict]) -> Self {
        TargetFlips {
            model_id: verdicts.first().map(|v| v.model_id.clone()).unwrap_or_default(),
            pairs: verdicts.iter().map(|v| v.pair_id.clone()).collect(),
            flipped: verdicts.iter().map(|v| (v.pair_id.clone(), v.flipped)).collect(),
        }
    }

    pub fn flip_count(&self) -> usize {
        self.flipped.values().filter(|f| **f).count()
    }
}

/// Fraction of the target's flips found within each grid budget of `order`.
pub fn detection_curve(order: &[String], target: &TargetFlips) -> Result<DetectionCurve> {
    let n = target.pairs.len();
    if order.len() != n {
        return Err(Error::NotAPermutation(format!(
            "{} pairs ordered, target has {n}",
            order.len()
        )));
    }
    let mut seen = HashSet::with_capacity(n);
    let mut cumulative = Vec::with_capacity(n + 1);
    cumulative.push(0usize);
    for id in order {
        let flipped = *target
            .flipped
            .get(id)
            .ok_or_else(|| Error::NotAPermutation(format!("`{id}` is not a target pair")))?;
        if !seen.insert(id.as_str()) {
            return Err(Error::NotAPermutation(format!("`{id}` appears twice")));
        }
        cumulative.push(cumulative.last().unwrap() + usize::from(flipped));
    }
    let flips = cumulative[n];
    if flips == 0 {
        return Err(Error::NoBiasInTarget(target.model_id.clone()));
    }
    let points = (1..=GRID_STEPS)
        .map(|k| CurvePoint {
            budget: budget_fraction(k),
            detected: cumulative[budget_count(k, n)] as f64 / flips as f64,
        })
        .collect();
    let full_detection_at = cumulative.iter().position(|&c| c == flips).unwrap_or(n);
    Ok(DetectionCurve {
        points,
        full_detection_at,
        pairs: n,
        flips,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Highlight {
    pub budget: f64,
    /// Mean detected share across repetitions, in percent.
    pub bd_percent: f64,
    /// Difference to the random baseline's mean, in percentage points.
    pub delta_percent: f64,
    /// Rank-sum p-value of this strategy's per-repetition detection vs random's.
    pub p_value: Option<f64>,
    pub a12: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyResult {
    pub strategy: String,
    pub mean_curve: Vec<CurvePoint>,
    /// Detected share per repetition, aligned with the budget grid.
    pub repetition_curves: Vec<Vec<f64>>,
    pub highlights: Vec<Highlight>,
}

impl StrategyResult {
    pub fn highlight(&self, budget: f64) -> Option<&Highlight> {
        self.highlights.iter().find(|h| (h.budget - budget).abs() < 1e-9)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkResult {
    pub target_model: String,
    pub reference_model: String,
    pub pairs: usize,
    pub flips: usize,
    pub repetitions: usize,
    pub base_seed: u64,
    pub alternative: Alternative,
    /// How deltas are formed; always against the mean of the random repetitions.
    pub delta_baseline: String,
    pub budgets: Vec<f64>,
    pub strategies: Vec<StrategyResult>,
}

impl BenchmarkResult {
    pub fn strategy(&self, name: &str) -> Option<&StrategyResult> {
        self.strategies.iter().find(|s| s.strategy == name)
    }
}

#[derive(Debug, Clone)]
pub struct BenchmarkConfig {
    pub repetitions: usize,
    pub base_seed: u64,
    pub alternative: Alternative,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            repetitions: DEFAULT_REPETITIONS,
            base_seed: 42,
            alternative: Alternative::TwoSided,
        }
    }
}

fn repetition_curves(
    strategy: &dyn PrioritizationStrategy,
    target: &TargetFlips,
    reference: &HashMap<String, ReferenceSignal>,
    config: &BenchmarkConfig,
) -> Result<Vec<Vec<f64>>> {
    (0..config.repetitions)
        .into_par_iter()
        .map(|rep| {
            let seed = config.base_seed.wrapping_add(rep as u64);
            let order = order_pairs(strategy, seed, &target.pairs, reference)?;
            let curve = detection_curve(&order, target)?;
            Ok(curve.points.iter().map(|p| p.detected).collect())
        })
        .collect()
}

fn mean_curve(reps: &[Vec<f64>]) -> Vec<f64> {
    (0..GRID_STEPS)
        .map(|k| reps.iter().map(|r| r[k]).sum::<f64>() / reps.len() as f64)
        .collect()
}

/// Runs every strategy `repetitions` times (repetition `i` seeded with
/// `base_seed + i`) and compares each against the random baseline at the
/// highlighted budgets.
pub fn run_benchmark(
    target_verdicts: &[PairVerdict],
    reference_model: &str,
    reference: &HashMap<String, ReferenceSignal>,
    strategies: &[&dyn PrioritizationStrategy],
    config: &BenchmarkConfig,
) -> Result<BenchmarkResult> {
    if config.repetitions == 0 {
        return Err(Error::InvalidArgument("repetitions must be at least 1".into()));
    }
    let target = TargetFlips::from_verdicts(target_verdicts);
    let flips = target.flip_count();
    if flips == 0 {
        return Err(Error::NoBiasInTarget(target.model_id.clone()));
    }

    let baseline = repetition_curves(&RandomOrder, &target, reference, config)?;
    let baseline_mean = mean_curve(&baseline);

    let mut results = Vec::with_capacity(strategies.len());
    for strategy in strategies {
        let reps = if strategy.name() == RandomOrder.name() {
            baseline.clone()
        } else {
            repetition_curves(*strategy, &target, reference, config)?
        };
        let mean = mean_curve(&reps);
        let is_baseline = strategy.name() == RandomOrder.name();
        let highlights = HIGHLIGHT_STEPS
            .iter()
            .map(|&k| {
                let idx = k - 1;
                let (p_value, a12) = if is_baseline {
                    (None, None)
                } else {
                    let mine: Vec<f64> = reps.iter().map(|r| r[idx]).collect();
                    let theirs: Vec<f64> = baseline.iter().map(|r| r[idx]).collect();
                    (
                        Some(wilcoxon_rank_sum(&mine, &theirs, config.alternative)?.p_value),
                        Some(vargha_delaney_a12(&mine, &theirs)?.a12),
                    )
                };
                Ok(Highlight {
                    budget: budget_fraction(k),
                    bd_percent: 100.0 * mean[idx],
                    delta_percent: 100.0 * (mean[idx] - baseline_mean[idx]),
                    p_value,
                    a12,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        results.push(StrategyResult {
            strategy: strategy.name().to_string(),
            mean_curve: mean
                .iter()
                .enumerate()
                .map(|(i, &d)| CurvePoint {
                    budget: budget_fraction(i + 1),
                    detected: d,
                })
                .collect(),
            repetition_curves: reps,
            highlights,
        });
    }

    Ok(BenchmarkResult {
        target_model: target.model_id.clone(),
        reference_model: reference_model.to_string(),
        pairs: target.pairs.len(),
        flips,
        repetitions: config.repetitions,
        base_seed: config.base_seed,
        alternative: config.alternative,
        delta_baseline: "random-mean".into(),
        budgets: (1..=GRID_STEPS).map(budget_fraction).collect(),
        strategies: results,
    })
}
