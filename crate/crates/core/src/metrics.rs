//! Prediction-shift metrics between original and mutant probability vectors.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::detector::PairVerdict;
use crate::error::{Error, Result};
use crate::io::{read_jsonl, write_jsonl};
use crate::predictions::{PairPrediction, PROB_SUM_TOLERANCE};

pub type ProbVector = [f64; 3];

fn on_simplex(p: &ProbVector) -> Result<ProbVector> {
    let sum = p[0] + p[1] + p[2];
    let in_range = p.iter().all(|x| x.is_finite() && *x >= 0.0);
    if !in_range || (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
        return Err(Error::NonSimplex(p.to_vec()));
    }
    Ok([p[0] / sum, p[1] / sum, p[2] / sum])
}

/// `sum_i p_i log2(p_i / m_i)`, with `0 log 0 = 0`. Uses `libm` so results
/// do not depend on the platform math library.
fn kl_to_mixture(p: &ProbVector, m: &ProbVector) -> f64 {
    let mut acc = 0.0;
    for i in 0..3 {
        if p[i] > 0.0 {
            acc += p[i] * libm::log2(p[i] / m[i]);
        }
    }
    acc
}

/// Jensen-Shannon distance with base-2 logarithms, in `[0, 1]`.
pub fn jensen_shannon_distance(p: &ProbVector, q: &ProbVector) -> Result<f64> {
    let p = on_simplex(p)?;
    let q = on_simplex(q)?;
    let m = [0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1]), 0.5 * (p[2] + q[2])];
    let divergence = 0.5 * kl_to_mixture(&p, &m) + 0.5 * kl_to_mixture(&q, &m);
    Ok(divergence.clamp(0.0, 1.0).sqrt())
}

pub fn cosine_similarity(p: &ProbVector, q: &ProbVector) -> Result<f64> {
    if p.iter().chain(q).any(|x| !x.is_finite()) {
        return Err(Error::NonFinite);
    }
    let dot = p[0] * q[0] + p[1] * q[1] + p[2] * q[2];
    let norm_p = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
    let norm_q = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2]).sqrt();
    if norm_p == 0.0 || norm_q == 0.0 {
        return Err(Error::ZeroVector);
    }
    let cos = dot / (norm_p * norm_q);
    Ok(if p.iter().chain(q).all(|x| *x >= 0.0) {
        cos.clamp(0.0, 1.0)
    } else {
        cos.clamp(-1.0, 1.0)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftRecord {
    pub model_id: String,
    pub pair_id: String,
    pub jsd: f64,
    pub cosine: f64,
    pub flipped: bool,
}

/// One shift record per pair; `flipped` comes from the matching verdict.
pub fn shift_records(pairs: &[PairPrediction], verdicts: &[PairVerdict]) -> Result<Vec<ShiftRecord>> {
    let flips: HashMap<(&str, &str), bool> = verdicts
        .iter()
        .map(|v| ((v.model_id.as_str(), v.pair_id.as_str()), v.flipped))
        .collect();
    pairs
        .iter()
        .map(|pair| {
            let flipped = match flips.get(&(pair.model_id.as_str(), pair.pair_id.as_str())) {
                Some(&f) => f,
                None => pair.orig.label != pair.mutant.label,
            };
            Ok(ShiftRecord {
                model_id: pair.model_id.clone(),
                pair_id: pair.pair_id.clone(),
                jsd: jensen_shannon_distance(&pair.orig.probs, &pair.mutant.probs)?,
                cosine: cosine_similarity(&pair.orig.probs, &pair.mutant.probs)?,
                flipped,
            })
        })
        .collect()
}

pub fn save_shifts(path: &Path, shifts: &[ShiftRecord]) -> Result<()> {
    write_jsonl(path, shifts)
}

pub fn load_shifts(path: &Path) -> Result<Vec<ShiftRecord>> {
    Ok(read_jsonl(path)?.into_iter().map(|(_, r)| r).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identical_distributions() {
        let p = [0.2, 0.3, 0.5];
        assert_eq!(jensen_shannon_distance(&p, &p).unwrap(), 0.0);
        assert!((cosine_similarity(&[0.1, 0.2, 0.7], &[0.1, 0.2, 0.7]).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn disjoint_supports() {
        assert_eq!(
            jensen_shannon_distance(&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]).unwrap(),
            1.0
        );
        assert_eq!(cosine_similarity(&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn hand_evaluated_values() {
        // m = (0.5, 0.25, 0.25); each KL term = 0.5 * log2(0.5/0.25) = 0.5
        let d = jensen_shannon_distance(&[0.5, 0.5, 0.0], &[0.5, 0.0, 0.5]).unwrap();
        assert!((d - 0.5f64.sqrt()).abs() < 1e-12);
        let c = cosine_similarity(&[1.0, 0.0, 0.0], &[0.5, 0.5, 0.0]).unwrap();
        assert!((c - 1.0 / 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn rejects_off_simplex_and_zero_vectors() {
        assert!(matches!(
            jensen_shannon_distance(&[0.5, 0.5, 0.5], &[0.2, 0.3, 0.5]),
            Err(Error::NonSimplex(_))
        ));
        assert!(jensen_shannon_distance(&[-0.1, 0.6, 0.5], &[0.2, 0.3, 0.5]).is_err());
        assert!(matches!(
            cosine_similarity(&[0.0; 3], &[0.2, 0.3, 0.5]),
            Err(Error::ZeroVector)
        ));
    }

    #[test]
    fn empty_input_gives_empty_output() {
        assert!(shift_records(&[], &[]).unwrap().is_empty());
    }

    fn simplex() -> impl Strategy<Value = ProbVector> {
        (0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0, 0usize..4).prop_map(|(a, b, c, zero)| {
            let mut v = [a, b, c];
            if zero < 3 {
                v[zero] = 0.0;
            }
            let s: f64 = v.iter().sum();
            if s == 0.0 {
                [1.0, 0.0, 0.0]
            } else {
                [v[0] / s, v[1] / s, v[2] / s]
            }
        })
    }

    proptest! {
        #[test]
        fn symmetric_and_bounded(p in simplex(), q in simplex()) {
            let d = jensen_shannon_distance(&p, &q).unwrap();
            let c = cosine_similarity(&p, &q).unwrap();
            prop_assert_eq!(d.to_bits(), jensen_shannon_distance(&q, &p).unwrap().to_bits());
            prop_assert_eq!(c.to_bits(), cosine_similarity(&q, &p).unwrap().to_bits());
            prop_assert!((0.0..=1.0).contains(&d));
            prop_assert!((0.0..=1.0).contains(&c));
        }

        #[test]
        fn identity(p in simplex()) {
            prop_assert!(jensen_shannon_distance(&p, &p).unwrap().abs() < 1e-12);
            prop_assert!((cosine_similarity(&p, &p).unwrap() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn distance_grows_along_the_mixing_line(p in simplex(), q in simplex()) {
            let mut prev = 0.0;
            for step in 0..=20 {
                let t = step as f64 / 20.0;
                let mix = [
                    (1.0 - t) * p[0] + t * q[0],
                    (1.0 - t) * p[1] + t * q[1],
                    (1.0 - t) * p[2] + t * q[2],
                ];
                let d = jensen_shannon_distance(&p, &mix).unwrap();
                prop_assert!(d + 1e-9 >= prev, "t={} d={} prev={}", t, d, prev);
                prev = d;
            }
        }
    }
}
