//! Label-flip bias detection and per-model bias ratios.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dictionary::AttributeAxis;
use crate::error::{Error, Result};
use crate::io::{read_jsonl, write_jsonl};
use crate::mutator::{MutationDataset, MutationKind};
use crate::predictions::{PairPrediction, SentimentLabel};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairVerdict {
    pub model_id: String,
    pub pair_id: String,
    pub sentence_id: String,
    pub kind: MutationKind,
    pub axes: Vec<AttributeAxis>,
    pub flipped: bool,
    pub orig_label: SentimentLabel,
    pub mut_label: SentimentLabel,
}

/// One verdict per joined pair: flipped iff the labels differ.
pub fn detect(pairs: &[PairPrediction], dataset: &MutationDataset) -> Result<Vec<PairVerdict>> {
    let by_id = dataset.by_id();
    pairs
        .iter()
        .map(|p| {
            let pair = by_id.get(p.pair_id.as_str()).ok_or_else(|| {
                Error::InvalidArgument(format!("pair `{}` is not in the mutation dataset", p.pair_id))
            })?;
            Ok(PairVerdict {
                model_id: p.model_id.clone(),
                pair_id: p.pair_id.clone(),
                sentence_id: p.sentence_id.clone(),
                kind: pair.kind,
                axes: pair.axes.clone(),
                flipped: p.orig.label != p.mutant.label,
                orig_label: p.orig.label,
                mut_label: p.mutant.label,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasCell {
    pub kind: MutationKind,
    pub axis: AttributeAxis,
    pub revealing: usize,
    pub total: usize,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasTotal {
    pub kind: MutationKind,
    pub revealing: usize,
    pub total: usize,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissingCounterpart {
    pub pair_id: String,
    pub axis: AttributeAxis,
    pub source: String,
    pub replacement: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HiddenBias {
    pub intersectional_flips: usize,
    pub hidden: usize,
    /// Absent when there are no intersectional flips.
    pub ratio: Option<f64>,
    pub hidden_pairs: Vec<String>,
    pub missing_counterparts: Vec<MissingCounterpart>,
}

/// Kind x axis grid of bias ratios for one model. Empty cells are omitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasSummary {
    pub model_id: String,
    pub cells: Vec<BiasCell>,
    pub totals: Vec<BiasTotal>,
    pub hidden_intersectional: Option<HiddenBias>,
}

impl BiasSummary {
    pub fn cell(&self, kind: MutationKind, axis: AttributeAxis) -> Option<&BiasCell> {
        self.cells.iter().find(|c| c.kind == kind && c.axis == axis)
    }

    pub fn total(&self, kind: MutationKind) -> Option<&BiasTotal> {
        self.totals.iter().find(|t| t.kind == kind)
    }
}

fn single_model(verdicts: &[PairVerdict]) -> Result<String> {
    let mut model: Option<&str> = None;
    for v in verdicts {
        match model {
            None => model = Some(&v.model_id),
            Some(m) if m != v.model_id => return Err(Error::MixedModels(m.to_string(), v.model_id.clone())),
            _ => {}
        }
    }
    Ok(model.unwrap_or_default().to_string())
}

/// Bias ratios per (kind, axis) and per kind. Intersectional pairs count in
/// both of their axis cells but once in the kind total.
pub fn bias_ratios(verdicts: &[PairVerdict]) -> Result<BiasSummary> {
    let model_id = single_model(verdicts)?;
    let mut cells: BTreeMap<(MutationKind, AttributeAxis), (usize, usize)> = BTreeMap::new();
    let mut totals: BTreeMap<MutationKind, (usize, usize)> = BTreeMap::new();
    for v in verdicts {
        let hit = usize::from(v.flipped);
        for &axis in &v.axes {
            let c = cells.entry((v.kind, axis)).or_default();
            c.0 += hit;
            c.1 += 1;
        }
        let t = totals.entry(v.kind).or_default();
        t.0 += hit;
        t.1 += 1;
    }
    Ok(BiasSummary {
        model_id,
        cells: cells
            .into_iter()
            .map(|((kind, axis), (revealing, total))| BiasCell {
                kind,
                axis,
                revealing,
                total,
                ratio: revealing as f64 / total as f64,
            })
            .collect(),
        totals: totals
            .into_iter()
            .map(|(kind, (revealing, total))| BiasTotal {
                kind,
                revealing,
                total,
                ratio: revealing as f64 / total as f64,
            })
            .collect(),
        hidden_intersectional: None,
    })
}

/// Share of intersectional flips whose constituent atomic mutations (same
/// sentence, axis, source and replacement) both fail to flip. A missing atomic
/// counterpart counts as not flipped and is reported.
pub fn hidden_intersectional_ratio(verdicts: &[PairVerdict], dataset: &MutationDataset) -> Result<HiddenBias> {
    single_model(verdicts)?;
    let flipped: HashMap<&str, bool> = verdicts.iter().map(|v| (v.pair_id.as_str(), v.flipped)).collect();
    let mut atomic: HashMap<(&str, AttributeAxis, &str, &str), &str> = HashMap::new();
    for pair in dataset.pairs.iter().filter(|p| p.kind == MutationKind::Atomic) {
        let s = &pair.substitutions[0];
        atomic.insert(
            (
                pair.sentence_id.as_str(),
                s.axis,
                s.source.as_str(),
                s.replacement.as_str(),
            ),
            pair.pair_id.as_str(),
        );
    }
    let by_id = dataset.by_id();

    let mut result = HiddenBias {
        intersectional_flips: 0,
        hidden: 0,
        ratio: None,
        hidden_pairs: Vec::new(),
        missing_counterparts: Vec::new(),
    };
    for v in verdicts
        .iter()
        .filter(|v| v.kind == MutationKind::Intersectional && v.flipped)
    {
        let pair = by_id
            .get(v.pair_id.as_str())
            .ok_or_else(|| Error::InvalidArgument(format!("pair `{}` is not in the mutation dataset", v.pair_id)))?;
        result.intersectional_flips += 1;
        let mut any_atomic_flip = false;
        for s in &pair.substitutions {
            let key = (
                pair.sentence_id.as_str(),
                s.axis,
                s.source.as_str(),
                s.replacement.as_str(),
            );
            match atomic.get(&key).and_then(|id| flipped.get(id)) {
                Some(&f) => any_atomic_flip |= f,
                None => result.missing_counterparts.push(MissingCounterpart {
                    pair_id: v.pair_id.clone(),
                    axis: s.axis,
                    source: s.source.clone(),
                    replacement: s.replacement.clone(),
                }),
            }
        }
        if !any_atomic_flip {
            result.hidden += 1;
            result.hidden_pairs.push(v.pair_id.clone());
        }
    }
    if result.intersectional_flips > 0 {
        result.ratio = Some(result.hidden as f64 / result.intersectional_flips as f64);
    }
    Ok(result)
}

/// Groups verdicts by model, preserving first-seen order.
pub fn group_by_model(verdicts: Vec<PairVerdict>) -> Vec<(String, Vec<PairVerdict>)> {
    let mut groups: Vec<(String, Vec<PairVerdict>)> = Vec::new();
    for v in verdicts {
        match groups.iter_mut().find(|(m, _)| *m == v.model_id) {
            Some((_, g)) => g.push(v),
            None => groups.push((v.model_id.clone(), vec![v])),
        }
    }
    groups
}

pub fn save_verdicts(path: &Path, verdicts: &[PairVerdict]) -> Result<()> {
    write_jsonl(path, verdicts)
}

pub fn load_verdicts(path: &Path) -> Result<Vec<PairVerdict>> {
    let mut out = Vec::new();
    for (line, v) in read_jsonl::<PairVerdict>(path)? {
        if v.flipped != (v.orig_label != v.mut_label) {
            return Err(Error::Malformed {
                line,
                message: format!("verdict `{}` has an inconsistent flipped flag", v.pair_id),
            });
        }
        out.push(v);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mutator::{MutationPair, Substitution};
    use crate::predictions::PredictionRecord;

    fn record(variant: &str, label: SentimentLabel) -> PredictionRecord {
        let mut probs = [0.1, 0.1, 0.1];
        probs[label.index()] = 0.8;
        PredictionRecord {
            model_id: "m".into(),
            variant_id: variant.into(),
            label,
            probs,
        }
    }

    fn joined(pair_id: &str, orig: SentimentLabel, mutant: SentimentLabel) -> PairPrediction {
        PairPrediction {
            model_id: "m".into(),
            pair_id: pair_id.into(),
            sentence_id: "s".into(),
            orig: record("s", orig),
            mutant: record(&format!("{pair_id}#mut"), mutant),
        }
    }

    fn sub(axis: AttributeAxis, source: &str, replacement: &str) -> Substitution {
        Substitution {
            axis,
            source: source.into(),
            replacement: replacement.into(),
            occurrence_count: 1,
        }
    }

    fn pair(id: &str, sentence: &str, subs: Vec<Substitution>) -> MutationPair {
        let kind = if subs.len() == 1 {
            MutationKind::Atomic
        } else {
            MutationKind::Intersectional
        };
        MutationPair {
            pair_id: id.into(),
            sentence_id: sentence.into(),
            kind,
            axes: subs.iter().map(|s| s.axis).collect(),
            substitutions: subs,
            mutant_text: format!("mutant {id}"),
        }
    }

    fn verdict(id: &str, sentence: &str, kind: MutationKind, axes: Vec<AttributeAxis>, flipped: bool) -> PairVerdict {
        PairVerdict {
            model_id: "m".into(),
            pair_id: id.into(),
            sentence_id: sentence.into(),
            kind,
            axes,
            flipped,
            orig_label: SentimentLabel::Positive,
            mut_label: if flipped {
                SentimentLabel::Negative
            } else {
                SentimentLabel::Positive
            },
        }
    }

    #[test]
    fn label_change_flips() {
        use SentimentLabel::*;
        let dataset = MutationDataset {
            pairs: vec![
                pair("a", "s", vec![sub(AttributeAxis::Gender, "he", "she")]),
                pair("b", "s", vec![sub(AttributeAxis::Gender, "he", "they")]),
            ],
        };
        let v = detect(
            &[joined("a", Positive, Negative), joined("b", Neutral, Neutral)],
            &dataset,
        )
        .unwrap();
        assert!(v[0].flipped);
        assert!(!v[1].flipped);
        assert_eq!(v[0].axes, vec![AttributeAxis::Gender]);
    }

    #[test]
    fn detect_requires_known_pairs() {
        use SentimentLabel::*;
        assert!(detect(&[joined("zz", Positive, Negative)], &MutationDataset::default()).is_err());
    }

    #[test]
    fn gender_atomic_ratio() {
        let verdicts: Vec<_> = (0..100)
            .map(|i| {
                verdict(
                    &format!("p{i}"),
                    "s",
                    MutationKind::Atomic,
                    vec![AttributeAxis::Gender],
                    i < 2,
                )
            })
            .collect();
        let s = bias_ratios(&verdicts).unwrap();
        let cell = s.cell(MutationKind::Atomic, AttributeAxis::Gender).unwrap();
        assert_eq!((cell.revealing, cell.total), (2, 100));
        assert!((cell.ratio - 0.02).abs() < 1e-15);
        assert!(s.cell(MutationKind::Atomic, AttributeAxis::Body).is_none());
        assert!(s.total(MutationKind::Intersectional).is_none());
    }

    #[test]
    fn intersectional_counts_in_both_axis_cells() {
        let v = vec![verdict(
            "x",
            "s",
            MutationKind::Intersectional,
            vec![AttributeAxis::Gender, AttributeAxis::Race],
            true,
        )];
        let s = bias_ratios(&v).unwrap();
        assert_eq!(
            s.cell(MutationKind::Intersectional, AttributeAxis::Gender)
                .unwrap()
                .revealing,
            1
        );
        assert_eq!(
            s.cell(MutationKind::Intersectional, AttributeAxis::Race)
                .unwrap()
                .revealing,
            1
        );
        assert_eq!(s.total(MutationKind::Intersectional).unwrap().total, 1);
    }

    #[test]
    fn mixed_models_rejected() {
        let mut a = verdict("a", "s", MutationKind::Atomic, vec![AttributeAxis::Gender], false);
        let b = a.clone();
        a.model_id = "other".into();
        assert!(matches!(bias_ratios(&[a, b]), Err(Error::MixedModels(..))));
    }

    fn linked_fixture(atomic_flips: (bool, bool)) -> (MutationDataset, Vec<PairVerdict>) {
        let g = sub(AttributeAxis::Gender, "he", "she");
        let r = sub(AttributeAxis::Race, "american", "asian");
        let dataset = MutationDataset {
            pairs: vec![
                pair("g", "s", vec![g.clone()]),
                pair("r", "s", vec![r.clone()]),
                pair("gr", "s", vec![g, r]),
            ],
        };
        let verdicts = vec![
            verdict(
                "g",
                "s",
                MutationKind::Atomic,
                vec![AttributeAxis::Gender],
                atomic_flips.0,
            ),
            verdict(
                "r",
                "s",
                MutationKind::Atomic,
                vec![AttributeAxis::Race],
                atomic_flips.1,
            ),
            verdict(
                "gr",
                "s",
                MutationKind::Intersectional,
                vec![AttributeAxis::Gender, AttributeAxis::Race],
                true,
            ),
        ];
        (dataset, verdicts)
    }

    #[test]
    fn flip_with_flipping_counterparts_is_not_hidden() {
        let (d, v) = linked_fixture((true, true));
        let h = hidden_intersectional_ratio(&v, &d).unwrap();
        assert_eq!((h.intersectional_flips, h.hidden), (1, 0));
        assert_eq!(h.ratio, Some(0.0));
    }

    #[test]
    fn flip_without_flipping_counterparts_is_hidden() {
        let (d, v) = linked_fixture((false, false));
        let h = hidden_intersectional_ratio(&v, &d).unwrap();
        assert_eq!(h.hidden_pairs, vec!["gr".to_string()]);
        assert_eq!(h.ratio, Some(1.0));
    }

    #[test]
    fn missing_counterpart_is_reported() {
        let (mut d, mut v) = linked_fixture((false, false));
        d.pairs.remove(1);
        v.remove(1);
        let h = hidden_intersectional_ratio(&v, &d).unwrap();
        assert_eq!(h.hidden, 1);
        assert_eq!(h.missing_counterparts.len(), 1);
        assert_eq!(h.missing_counterparts[0].axis, AttributeAxis::Race);
    }

    #[test]
    fn no_intersectional_flips_means_no_ratio() {
        let (d, mut v) = linked_fixture((false, false));
        v[2].flipped = false;
        assert_eq!(hidden_intersectional_ratio(&v, &d).unwrap().ratio, None);
    }
}
