//! Shared and disjoint bias-revealing pairs across models.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use crate::detector::PairVerdict;
use crate::error::{Error, Result};

pub const MIN_MODELS: usize = 2;
pub const MAX_MODELS: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    /// Models that flipped every pair in this region, and no other model did.
    pub models: Vec<String>,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapReport {
    pub model_ids: Vec<String>,
    pub set_sizes: Vec<usize>,
    pub union_size: usize,
    /// Every non-empty subset of models, by ascending membership bitmask.
    pub regions: Vec<Region>,
    pub pairwise_intersection: Vec<Vec<usize>>,
    /// `|A ∩ B| / |A ∪ B|`; absent when both sets are empty.
    pub pairwise_jaccard: Vec<Vec<Option<f64>>>,
    /// Row model's share of its flips also flipped by the column model, `|A ∩ B| / |A|`.
    pub pairwise_shared_fraction: Vec<Vec<Option<f64>>>,
}

impl OverlapReport {
    pub fn region(&self, models: &[&str]) -> Option<usize> {
        let wanted: BTreeSet<&str> = models.iter().copied().collect();
        self.regions
            .iter()
            .find(|r| r.models.iter().map(String::as_str).collect::<BTreeSet<_>>() == wanted)
            .map(|r| r.count)
    }
}

/// Flipped pair ids of one model's verdicts.
pub fn flipped_set(verdicts: &[PairVerdict]) -> BTreeSet<String> {
    verdicts
        .iter()
        .filter(|v| v.flipped)
        .map(|v| v.pair_id.clone())
        .collect()
}

/// Exact region decomposition of the models' flipped sets plus pairwise matrices.
pub fn overlap_report(sets: &[(String, BTreeSet<String>)]) -> Result<OverlapReport> {
    let k = sets.len();
    if !(MIN_MODELS..=MAX_MODELS).contains(&k) {
        return Err(Error::OverlapModelCount(k));
    }
    let mut seen = HashSet::new();
    for (id, _) in sets {
        if !seen.insert(id.as_str()) {
            return Err(Error::DuplicateModel(id.clone()));
        }
    }

    let mut membership: BTreeMap<&str, usize> = BTreeMap::new();
    for (i, (_, set)) in sets.iter().enumerate() {
        for pair in set {
            *membership.entry(pair.as_str()).or_insert(0) |= 1 << i;
        }
    }
    let mut region_counts = vec![0usize; 1 << k];
    for mask in membership.values() {
        region_counts[*mask] += 1;
    }
    let regions = (1..1usize << k)
        .map(|mask| Region {
            models: (0..k)
                .filter(|i| mask & (1 << i) != 0)
                .map(|i| sets[i].0.clone())
                .collect(),
            count: region_counts[mask],
        })
        .collect();

    let mut inter = vec![vec![0usize; k]; k];
    let mut jaccard = vec![vec![None; k]; k];
    let mut shared = vec![vec![None; k]; k];
    for a in 0..k {
        for b in 0..k {
            let (sa, sb) = (&sets[a].1, &sets[b].1);
            let both = sa.intersection(sb).count();
            let union = sa.len() + sb.len() - both;
            inter[a][b] = both;
            if union > 0 {
                jaccard[a][b] = Some(both as f64 / union as f64);
            }
            if !sa.is_empty() {
                shared[a][b] = Some(both as f64 / sa.len() as f64);
            }
        }
    }

    Ok(OverlapReport {
        model_ids: sets.iter().map(|(id, _)| id.clone()).collect(),
        set_sizes: sets.iter().map(|(_, s)| s.len()).collect(),
        union_size: membership.len(),
        regions,
        pairwise_intersection: inter,
        pairwise_jaccard: jaccard,
        pairwise_shared_fraction: shared,
    })
}
