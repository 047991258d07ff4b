use std::collections::HashMap;

use biaslens::detector::PairVerdict;
use biaslens::dictionary::AttributeAxis;
use biaslens::mutator::MutationKind;
use biaslens::predictions::SentimentLabel;
use biaslens::prioritizer::{
    budget_count, run_benchmark, BenchmarkConfig, ReferenceSignal, StrategyRegistry, GRID_STEPS,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn verdict(i: usize, flipped: bool) -> PairVerdict {
    PairVerdict {
        model_id: "target".into(),
        pair_id: format!("p{i:04}"),
        sentence_id: format!("s{i:04}"),
        kind: MutationKind::Atomic,
        axes: vec![AttributeAxis::Gender],
        flipped,
        orig_label: SentimentLabel::Neutral,
        mut_label: if flipped {
            SentimentLabel::Positive
        } else {
            SentimentLabel::Neutral
        },
    }
}

/// Reference JSD drawn uniformly; the target flips with probability `flip_prob(jsd)`.
fn fixture(
    n: usize,
    seed: u64,
    jsd_levels: Option<u32>,
    flip_prob: impl Fn(f64) -> f64,
) -> (Vec<PairVerdict>, HashMap<String, ReferenceSignal>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut verdicts = Vec::new();
    let mut reference = HashMap::new();
    for i in 0..n {
        let mut jsd: f64 = rng.random();
        if let Some(levels) = jsd_levels {
            jsd = (jsd * levels as f64).floor() / levels as f64;
        }
        let v = verdict(i, rng.random::<f64>() < flip_prob(jsd));
        reference.insert(
            v.pair_id.clone(),
            ReferenceSignal {
                jsd,
                cosine: 1.0 - jsd,
                flipped: jsd > 0.8,
            },
        );
        verdicts.push(v);
    }
    (verdicts, reference)
}

fn bench(
    verdicts: &[PairVerdict],
    reference: &HashMap<String, ReferenceSignal>,
    repetitions: usize,
) -> biaslens::prioritizer::BenchmarkResult {
    let registry = StrategyRegistry::default();
    let strategies = registry.resolve_list("random,jsd,cosine").unwrap();
    let config = BenchmarkConfig {
        repetitions,
        ..Default::default()
    };
    run_benchmark(verdicts, "reference", reference, &strategies, &config).unwrap()
}

#[test]
fn correlated_target_jsd_curve_dominates_random() {
    let (verdicts, reference) = fixture(300, 1, None, |j| j * j * j);
    let result = bench(&verdicts, &reference, 100);
    let random = result.strategy("random").unwrap();
    let jsd = result.strategy("jsd").unwrap();
    for (r, g) in random.mean_curve.iter().zip(&jsd.mean_curve) {
        assert!(
            g.detected >= r.detected,
            "budget {}: {} < {}",
            r.budget,
            g.detected,
            r.detected
        );
    }
    let h = jsd.highlight(0.2).unwrap();
    assert!(h.delta_percent > 0.0);
    assert!(h.a12.unwrap() > 0.9);
    // Cosine is 1 - jsd here, so ascending cosine is the same ordering.
    assert_eq!(jsd.mean_curve, result.strategy("cosine").unwrap().mean_curve);
}

#[test]
fn independent_target_gains_nothing_from_guidance() {
    let (verdicts, reference) = fixture(400, 2, Some(4), |_| 0.25);
    let result = bench(&verdicts, &reference, 200);
    let h = result.strategy("jsd").unwrap().highlight(0.2).unwrap();
    assert!(h.delta_percent.abs() < 5.0, "delta {}", h.delta_percent);
    assert!((0.3..=0.7).contains(&h.a12.unwrap()), "a12 {:?}", h.a12);
    assert!(h.p_value.unwrap() > 1e-3, "p {:?}", h.p_value);
}

#[test]
fn curves_are_monotone_and_end_at_full_detection() {
    let (verdicts, reference) = fixture(137, 3, None, |j| j);
    let result = bench(&verdicts, &reference, 20);
    assert_eq!(result.budgets.len(), GRID_STEPS);
    for s in &result.strategies {
        for rep in &s.repetition_curves {
            assert!(rep.windows(2).all(|w| w[0] <= w[1]));
            assert_eq!(*rep.last().unwrap(), 1.0);
        }
    }
    assert_eq!(budget_count(GRID_STEPS, 137), 137);
    assert_eq!(budget_count(1, 137), 7);
}

#[test]
fn results_do_not_depend_on_worker_count() {
    let (verdicts, reference) = fixture(120, 4, Some(5), |j| j);
    let serial = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let wide = rayon::ThreadPoolBuilder::new().num_threads(6).build().unwrap();
    let a = serial.install(|| bench(&verdicts, &reference, 30));
    let b = wide.install(|| bench(&verdicts, &reference, 30));
    assert_eq!(a, b);
}

#[test]
fn changing_the_seed_changes_random_repetitions() {
    let (verdicts, reference) = fixture(100, 5, None, |j| j);
    let registry = StrategyRegistry::default();
    let strategies = registry.resolve_list("random").unwrap();
    let run = |base_seed| {
        let config = BenchmarkConfig {
            repetitions: 10,
            base_seed,
            ..Default::default()
        };
        run_benchmark(&verdicts, "reference", &reference, &strategies, &config).unwrap()
    };
    assert_eq!(run(9), run(9));
    assert_ne!(
        run(9).strategies[0].repetition_curves,
        run(10).strategies[0].repetition_curves
    );
}
