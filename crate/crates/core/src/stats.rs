//! Rank-sum (Mann-Whitney) tests, Vargha-Delaney A12, and the flipped vs
//! non-flipped shift separation analysis built on them.
//!
//! Groups compared here are independent samples, so the rank-sum form of the
//! Wilcoxon test is used throughout (not signed-rank).

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use libm::erfc;
use serde::{Deserialize, Serialize};

use crate::detector::PairVerdict;
use crate::error::{Error, Result};
use crate::metrics::ShiftRecord;

/// Exact enumeration is used when `n1 * n2` is at most this.
pub const EXACT_THRESHOLD: usize = 400;
pub const P_VALUE_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Alternative {
    #[default]
    TwoSided,
    /// `x` tends to be larger than `y`.
    Greater,
    Less,
}

impl FromStr for Alternative {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "two-sided" | "two_sided" | "twosided" => Ok(Alternative::TwoSided),
            "greater" => Ok(Alternative::Greater),
            "less" => Ok(Alternative::Less),
            other => Err(Error::InvalidArgument(format!("unknown alternative `{other}`"))),
        }
    }
}

impl fmt::Display for Alternative {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Alternative::TwoSided => "two-sided",
            Alternative::Greater => "greater",
            Alternative::Less => "less",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TestMethod {
    ExactPermutation,
    NormalApproxTieCorrected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    /// Mann-Whitney U of the first sample.
    pub statistic: f64,
    pub p_value: f64,
    pub method: TestMethod,
    pub alternative: Alternative,
    pub n1: usize,
    pub n2: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectSize {
    pub a12: f64,
}

fn check_sample(x: &[f64]) -> Result<()> {
    if x.is_empty() {
        return Err(Error::EmptySample);
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    Ok(())
}

/// Midranks doubled so they stay integral: a tie over 1-based positions
/// `i..=j` gets `i + j`.
pub fn doubled_midranks(values: &[f64]) -> Vec<u64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0u64; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end + 1 < order.len() && values[order[end + 1]] == values[order[start]] {
            end += 1;
        }
        let doubled = (start + 1 + end + 1) as u64;
        for &idx in &order[start..=end] {
            ranks[idx] = doubled;
        }
        start = end + 1;
    }
    ranks
}

/// Sizes of tie groups in a pooled sample.
fn tie_sizes(values: &[f64]) -> Vec<usize> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut sizes = Vec::new();
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        sizes.push(j - i + 1);
        i = j + 1;
    }
    sizes
}

struct Pooled {
    ranks: Vec<u64>,
    n1: usize,
    /// Twice the rank sum of the first sample.
    w2: u64,
}

fn pool(x: &[f64], y: &[f64]) -> Pooled {
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    let ranks = doubled_midranks(&pooled);
    let w2 = ranks[..x.len()].iter().sum();
    Pooled { ranks, n1: x.len(), w2 }
}

/// Twice the Mann-Whitney U of `x`: `2 * #{x > y} + #{x = y}`.
pub fn doubled_u(x: &[f64], y: &[f64]) -> Result<u64> {
    check_sample(x)?;
    check_sample(y)?;
    let p = pool(x, y);
    Ok(p.w2 - (x.len() * (x.len() + 1)) as u64)
}

/// Counts of size-`k` sub-multisets of `ranks` by their sum.
fn subset_sum_counts(ranks: &[u64], k: usize) -> Vec<u128> {
    let total: u64 = ranks.iter().sum();
    let width = total as usize + 1;
    let mut table = vec![vec![0u128; width]; k + 1];
    table[0][0] = 1;
    let mut reach = 0usize;
    for &r in ranks {
        let r = r as usize;
        reach += r;
        for j in (1..=k).rev() {
            let (lower, upper) = table.split_at_mut(j);
            let (prev, cur) = (&lower[j - 1], &mut upper[0]);
            for s in (r..=reach.min(width - 1)).rev() {
                if prev[s - r] != 0 {
                    cur[s] += prev[s - r];
                }
            }
        }
    }
    table.swap_remove(k)
}

fn exact_p(p: &Pooled, n2: usize, alternative: Alternative) -> f64 {
    let total: u64 = p.ranks.iter().sum();
    // Enumerate the smaller sample's rank sum; the other is determined by it.
    let (k, observed, mirrored) = if p.n1 <= n2 {
        (p.n1, p.w2, false)
    } else {
        (n2, total - p.w2, true)
    };
    let counts = subset_sum_counts(&p.ranks, k);
    let all: u128 = counts.iter().sum();
    let mut at_most: u128 = 0;
    let mut at_least: u128 = 0;
    for (s, &c) in counts.iter().enumerate() {
        let s = s as u64;
        if s <= observed {
            at_most += c;
        }
        if s >= observed {
            at_least += c;
        }
    }
    // With the mirrored sample, large y-sums mean small x-sums.
    let (x_ge, x_le) = if mirrored {
        (at_most, at_least)
    } else {
        (at_least, at_most)
    };
    let greater = x_ge as f64 / all as f64;
    let less = x_le as f64 / all as f64;
    match alternative {
        Alternative::Greater => greater,
        Alternative::Less => less,
        Alternative::TwoSided => (2.0 * greater.min(less)).min(1.0),
    }
}

fn normal_sf(z: f64) -> f64 {
    0.5 * erfc(z / std::f64::consts::SQRT_2)
}

fn normal_p(u: f64, n1: usize, n2: usize, ties: &[usize], alternative: Alternative) -> f64 {
    let (n1f, n2f) = (n1 as f64, n2 as f64);
    let n = n1f + n2f;
    let tie_term = ties.iter().map(|&t| (t as u128).pow(3) - t as u128).sum::<u128>() as f64;
    let var = n1f * n2f / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
    if var <= 0.0 {
        return 1.0;
    }
    let sd = var.sqrt();
    let mean = n1f * n2f / 2.0;
    match alternative {
        Alternative::Greater => normal_sf((u - mean - 0.5) / sd),
        Alternative::Less => normal_sf(-(u - mean + 0.5) / sd),
        Alternative::TwoSided => (2.0 * normal_sf(((u - mean).abs() - 0.5) / sd)).min(1.0),
    }
}

/// Wilcoxon rank-sum test with midranks for ties. Exact when
/// `n1 * n2 <= EXACT_THRESHOLD`, otherwise normal approximation with tie and
/// continuity corrections.
pub fn wilcoxon_rank_sum(x: &[f64], y: &[f64], alternative: Alternative) -> Result<TestResult> {
    check_sample(x)?;
    check_sample(y)?;
    let (n1, n2) = (x.len(), y.len());
    let pooled = pool(x, y);
    let u2 = pooled.w2 - (n1 * (n1 + 1)) as u64;
    let u = u2 as f64 / 2.0;
    let (p, method) = if n1 * n2 <= EXACT_THRESHOLD {
        (exact_p(&pooled, n2, alternative), TestMethod::ExactPermutation)
    } else {
        let all: Vec<f64> = x.iter().chain(y).copied().collect();
        (
            normal_p(u, n1, n2, &tie_sizes(&all), alternative),
            TestMethod::NormalApproxTieCorrected,
        )
    };
    Ok(TestResult {
        statistic: u,
        p_value: p.clamp(P_VALUE_FLOOR, 1.0),
        method,
        alternative,
        n1,
        n2,
    })
}

/// A12 from twice the dominance count. The larger side is divided directly and
/// the smaller taken as its complement, so `a12(x,y) + a12(y,x) == 1` exactly.
pub fn a12_from_doubled_u(u2: u64, n1: usize, n2: usize) -> f64 {
    let denom = 2 * (n1 as u64) * (n2 as u64);
    if 2 * u2 >= denom {
        u2 as f64 / denom as f64
    } else {
        1.0 - (denom - u2) as f64 / denom as f64
    }
}

/// Vargha-Delaney A12: probability that a draw from `x` exceeds one from `y`, ties counting half.
pub fn vargha_delaney_a12(x: &[f64], y: &[f64]) -> Result<EffectSize> {
    let u2 = doubled_u(x, y)?;
    Ok(EffectSize {
        a12: a12_from_doubled_u(u2, x.len(), y.len()),
    })
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Some(quantile_sorted(&sorted, 0.5))
}

/// Box-plot summary with whiskers at the most extreme data within 1.5 IQR of the quartiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxSummary {
    pub n: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub whisker_low: f64,
    pub whisker_high: f64,
    pub outliers: usize,
}

impl BoxSummary {
    pub fn from_values(values: &[f64]) -> Option<BoxSummary> {
        if values.is_empty() {
            return None;
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let q1 = quantile_sorted(&sorted, 0.25);
        let q3 = quantile_sorted(&sorted, 0.75);
        let iqr = q3 - q1;
        let (lo_fence, hi_fence) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
        let inside: Vec<f64> = sorted
            .iter()
            .copied()
            .filter(|v| *v >= lo_fence && *v <= hi_fence)
            .collect();
        Some(BoxSummary {
            n: sorted.len(),
            min: sorted[0],
            q1,
            median: quantile_sorted(&sorted, 0.5),
            q3,
            max: sorted[sorted.len() - 1],
            whisker_low: inside.first().copied().unwrap_or(q1),
            whisker_high: inside.last().copied().unwrap_or(q3),
            outliers: sorted.len() - inside.len(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSeparation {
    pub metric: String,
    pub flipped: Option<BoxSummary>,
    pub non_flipped: Option<BoxSummary>,
    pub test: Option<TestResult>,
    /// A12 of flipped over non-flipped values.
    pub effect: Option<EffectSize>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationReport {
    pub reference_model: String,
    pub target_model: String,
    pub matched_pairs: usize,
    pub unmatched_pairs: usize,
    pub metrics: Vec<MetricSeparation>,
}

impl SeparationReport {
    pub fn metric(&self, name: &str) -> Option<&MetricSeparation> {
        self.metrics.iter().find(|m| m.metric == name)
    }
}

fn separate(metric: &str, flipped: &[f64], non_flipped: &[f64], alternative: Alternative) -> Result<MetricSeparation> {
    let mut out = MetricSeparation {
        metric: metric.to_string(),
        flipped: BoxSummary::from_values(flipped),
        non_flipped: BoxSummary::from_values(non_flipped),
        test: None,
        effect: None,
        note: None,
    };
    if flipped.is_empty() || non_flipped.is_empty() {
        out.note = Some("not computable: a group is empty".into());
        return Ok(out);
    }
    out.test = Some(wilcoxon_rank_sum(flipped, non_flipped, alternative)?);
    out.effect = Some(vargha_delaney_a12(flipped, non_flipped)?);
    Ok(out)
}

/// Splits reference-model shifts by the target model's flip verdicts (joined on
/// pair id) and compares the two groups for JSD and cosine.
pub fn shift_separation_report(
    reference_shifts: &[ShiftRecord],
    target_verdicts: &[PairVerdict],
    alternative: Alternative,
) -> Result<SeparationReport> {
    let target: HashMap<&str, bool> = target_verdicts
        .iter()
        .map(|v| (v.pair_id.as_str(), v.flipped))
        .collect();
    let mut groups: [[Vec<f64>; 2]; 2] = Default::default();
    let mut unmatched = 0;
    for s in reference_shifts {
        match target.get(s.pair_id.as_str()) {
            Some(&flipped) => {
                let g = usize::from(flipped);
                groups[0][g].push(s.jsd);
                groups[1][g].push(s.cosine);
            }
            None => unmatched += 1,
        }
    }
    let matched = groups[0][0].len() + groups[0][1].len();
    let [jsd, cosine] = groups;
    Ok(SeparationReport {
        reference_model: reference_shifts.first().map(|s| s.model_id.clone()).unwrap_or_default(),
        target_model: target_verdicts.first().map(|v| v.model_id.clone()).unwrap_or_default(),
        matched_pairs: matched,
        unmatched_pairs: unmatched,
        metrics: vec![
            separate("jsd", &jsd[1], &jsd[0], alternative)?,
            separate("cosine", &cosine[1], &cosine[0], alternative)?,
        ],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_samples_two_sided_is_one() {
        let r = wilcoxon_rank_sum(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0], Alternative::TwoSided).unwrap();
        assert_eq!(r.p_value, 1.0);
        assert_eq!(r.method, TestMethod::ExactPermutation);
        assert_eq!(r.statistic, 4.5);
    }

    #[test]
    fn fully_separated_greater_is_one_in_twenty() {
        let r = wilcoxon_rank_sum(&[10.0, 11.0, 12.0], &[1.0, 2.0, 3.0], Alternative::Greater).unwrap();
        assert!((r.p_value - 0.05).abs() < 1e-15);
        assert_eq!(r.statistic, 9.0);
        let less = wilcoxon_rank_sum(&[10.0, 11.0, 12.0], &[1.0, 2.0, 3.0], Alternative::Less).unwrap();
        assert_eq!(less.p_value, 1.0);
    }

    #[test]
    fn exact_mirrors_when_first_sample_is_larger() {
        let x = [5.0, 6.0, 7.0, 8.0, 9.0];
        let y = [1.0, 2.0];
        let a = wilcoxon_rank_sum(&x, &y, Alternative::Greater).unwrap();
        let b = wilcoxon_rank_sum(&y, &x, Alternative::Less).unwrap();
        assert_eq!(a.p_value, b.p_value);
        assert!((a.p_value - 1.0 / 21.0).abs() < 1e-15);
    }

    #[test]
    fn switches_to_normal_above_threshold() {
        let x: Vec<f64> = (0..21).map(f64::from).collect();
        let y: Vec<f64> = (0..20).map(f64::from).collect();
        assert_eq!(
            wilcoxon_rank_sum(&x, &y, Alternative::TwoSided).unwrap().method,
            TestMethod::NormalApproxTieCorrected
        );
        let y: Vec<f64> = (0..19).map(f64::from).collect();
        assert_eq!(
            wilcoxon_rank_sum(&x, &y, Alternative::TwoSided).unwrap().method,
            TestMethod::ExactPermutation
        );
    }

    #[test]
    fn all_tied_normal_case_is_one() {
        let x = vec![0.5; 30];
        let y = vec![0.5; 30];
        assert_eq!(wilcoxon_rank_sum(&x, &y, Alternative::TwoSided).unwrap().p_value, 1.0);
    }

    #[test]
    fn empty_and_non_finite_samples() {
        assert!(matches!(
            wilcoxon_rank_sum(&[], &[1.0], Alternative::TwoSided),
            Err(Error::EmptySample)
        ));
        assert!(matches!(vargha_delaney_a12(&[1.0], &[]), Err(Error::EmptySample)));
        assert!(matches!(vargha_delaney_a12(&[f64::NAN], &[1.0]), Err(Error::NonFinite)));
    }

    #[test]
    fn a12_hand_cases() {
        assert_eq!(vargha_delaney_a12(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap().a12, 0.5);
        assert_eq!(vargha_delaney_a12(&[5.0, 6.0], &[1.0, 2.0]).unwrap().a12, 1.0);
        assert_eq!(vargha_delaney_a12(&[1.0, 2.0], &[2.0, 3.0]).unwrap().a12, 0.125);
    }

    #[test]
    fn midranks_with_ties() {
        assert_eq!(doubled_midranks(&[1.0, 2.0, 2.0, 4.0]), vec![2, 5, 5, 8]);
    }

    #[test]
    fn quantiles_and_box() {
        let b = BoxSummary::from_values(&[1.0, 2.0, 3.0, 4.0, 100.0]).unwrap();
        assert_eq!((b.q1, b.median, b.q3), (2.0, 3.0, 4.0));
        assert_eq!(b.whisker_high, 4.0);
        assert_eq!(b.outliers, 1);
        assert_eq!(median(&[3.0, 1.0, 2.0, 4.0]), Some(2.5));
        assert!(BoxSummary::from_values(&[]).is_none());
    }

    #[test]
    fn alternative_parses() {
        assert_eq!("two-sided".parse::<Alternative>().unwrap(), Alternative::TwoSided);
        assert_eq!("Greater".parse::<Alternative>().unwrap(), Alternative::Greater);
        assert!("both".parse::<Alternative>().is_err());
    }
}
