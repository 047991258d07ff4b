//! Model prediction records: ingestion, validation, and the original/mutant join.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::io::{read_jsonl, write_jsonl};
use crate::mutator::{mutant_variant_id, MutationDataset};

/// Tolerance on the probability-sum check.
pub const PROB_SUM_TOLERANCE: f64 = 1e-6;

/// Class order used for every probability vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SentimentLabel {
    Negative,
    Neutral,
    Positive,
}

impl SentimentLabel {
    pub const ORDER: [SentimentLabel; 3] = [
        SentimentLabel::Negative,
        SentimentLabel::Neutral,
        SentimentLabel::Positive,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SentimentLabel::Negative => "negative",
            SentimentLabel::Neutral => "neutral",
            SentimentLabel::Positive => "positive",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// Argmax with ties going to the earlier class.
    pub fn argmax(probs: &[f64; 3]) -> SentimentLabel {
        let mut best = 0;
        for i in 1..3 {
            if probs[i] > probs[best] {
                best = i;
            }
        }
        Self::ORDER[best]
    }
}

impl fmt::Display for SentimentLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SentimentLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "negative" => Ok(SentimentLabel::Negative),
            "neutral" => Ok(SentimentLabel::Neutral),
            "positive" => Ok(SentimentLabel::Positive),
            _ => Err(Error::UnknownLabel(s.to_string())),
        }
    }
}

impl Serialize for SentimentLabel {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for SentimentLabel {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub model_id: String,
    pub variant_id: String,
    pub label: SentimentLabel,
    pub probs: [f64; 3],
}

/// Checks range, sum, and label/argmax agreement, then re-normalizes.
pub fn validate_probs(line: usize, variant_id: &str, label: SentimentLabel, probs: &[f64]) -> Result<[f64; 3]> {
    if probs.len() != 3 {
        return Err(Error::Malformed {
            line,
            message: format!("`{variant_id}` has {} probabilities, expected 3", probs.len()),
        });
    }
    for &p in probs {
        if !p.is_finite() || !(0.0..=1.0).contains(&p) {
            return Err(Error::ProbOutOfRange {
                line,
                variant_id: variant_id.to_string(),
                value: p,
            });
        }
    }
    let sum = probs[0] + probs[1] + probs[2];
    if (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
        return Err(Error::ProbSumViolation {
            line,
            variant_id: variant_id.to_string(),
            sum,
        });
    }
    let normalized = [probs[0] / sum, probs[1] / sum, probs[2] / sum];
    let argmax = SentimentLabel::argmax(&[probs[0], probs[1], probs[2]]);
    if argmax != label {
        return Err(Error::LabelArgmaxMismatch {
            line,
            variant_id: variant_id.to_string(),
            label: label.to_string(),
            argmax: argmax.to_string(),
        });
    }
    Ok(normalized)
}

#[derive(Debug, Deserialize)]
struct RawLine {
    model_id: Option<String>,
    variant_id: Option<String>,
    label: Option<String>,
    probs: Option<Vec<f64>>,
}

/// Validated predictions of one model, keyed by variant id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PredictionSet {
    pub model_id: String,
    pub records: Vec<PredictionRecord>,
    index: HashMap<String, usize>,
}

impl PredictionSet {
    pub fn new(model_id: impl Into<String>) -> Self {
        PredictionSet {
            model_id: model_id.into(),
            ..Default::default()
        }
    }

    pub fn insert(&mut self, line: usize, record: PredictionRecord) -> Result<()> {
        if record.model_id != self.model_id {
            return Err(Error::ModelIdMismatch {
                expected: self.model_id.clone(),
                found: record.model_id,
            });
        }
        if self.index.contains_key(&record.variant_id) {
            return Err(Error::DuplicateVariant {
                line,
                model_id: self.model_id.clone(),
                variant_id: record.variant_id,
            });
        }
        self.index.insert(record.variant_id.clone(), self.records.len());
        self.records.push(record);
        Ok(())
    }

    pub fn get(&self, variant_id: &str) -> Option<&PredictionRecord> {
        self.index.get(variant_id).map(|&i| &self.records[i])
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn summary(&self) -> IngestSummary {
        let mut by_label = BTreeMap::new();
        for r in &self.records {
            *by_label.entry(r.label.to_string()).or_insert(0) += 1;
        }
        IngestSummary {
            model_id: self.model_id.clone(),
            records: self.records.len(),
            by_label,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub model_id: String,
    pub records: usize,
    pub by_label: BTreeMap<String, usize>,
}

/// Reads a prediction JSONL file. The model id comes from `model_id` or from
/// a leading `{"model_id": ...}` header line; if both are given they must agree.
pub fn ingest_predictions(path: &Path, model_id: Option<&str>) -> Result<PredictionSet> {
    let lines = read_jsonl::<RawLine>(path)?;
    let mut resolved = model_id.map(str::to_string);
    let mut set: Option<PredictionSet> = None;

    for (pos, (line, raw)) in lines.into_iter().enumerate() {
        let Some(variant_id) = raw.variant_id else {
            match (pos, raw.model_id, raw.label, raw.probs) {
                (0, Some(header), None, None) => {
                    if let Some(flag) = &resolved {
                        if *flag != header {
                            return Err(Error::ModelIdMismatch {
                                expected: flag.clone(),
                                found: header,
                            });
                        }
                    }
                    resolved = Some(header);
                    continue;
                }
                _ => {
                    return Err(Error::Malformed {
                        line,
                        message: "missing variant_id".into(),
                    })
                }
            }
        };
        if resolved.is_none() {
            resolved = raw.model_id.clone();
        }
        let model = resolved.clone().ok_or(Error::MissingModelId)?;
        if let Some(m) = raw.model_id {
            if m != model {
                return Err(Error::ModelIdMismatch {
                    expected: model,
                    found: m,
                });
            }
        }
        let label: SentimentLabel = raw
            .label
            .ok_or_else(|| Error::Malformed {
                line,
                message: format!("`{variant_id}` has no label"),
            })?
            .parse()?;
        let probs = raw.probs.ok_or_else(|| Error::Malformed {
            line,
            message: format!("`{variant_id}` has no probs"),
        })?;
        let probs = validate_probs(line, &variant_id, label, &probs)?;
        set.get_or_insert_with(|| PredictionSet::new(model.clone())).insert(
            line,
            PredictionRecord {
                model_id: model,
                variant_id,
                label,
                probs,
            },
        )?;
    }

    match (set, resolved) {
        (Some(set), _) => Ok(set),
        (None, Some(model)) => Ok(PredictionSet::new(model)),
        (None, None) => Err(Error::MissingModelId),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairPrediction {
    pub model_id: String,
    pub pair_id: String,
    pub sentence_id: String,
    pub orig: PredictionRecord,
    #[serde(rename = "mut")]
    pub mutant: PredictionRecord,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageGap {
    pub pair_id: String,
    pub missing_original: bool,
    pub missing_mutant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub model_id: String,
    pub total_pairs: usize,
    pub joined_pairs: usize,
    pub coverage: f64,
    pub gaps: Vec<CoverageGap>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JoinResult {
    pub joined: Vec<PairPrediction>,
    pub coverage: CoverageReport,
}

/// Pairs each mutation with the model's original and mutant predictions.
/// Pairs missing either side are reported as gaps.
pub fn join_pairs(records: &PredictionSet, dataset: &MutationDataset) -> JoinResult {
    let mut joined = Vec::new();
    let mut gaps = Vec::new();
    for pair in &dataset.pairs {
        let orig = records.get(&pair.sentence_id);
        let mutant = records.get(&mutant_variant_id(&pair.pair_id));
        match (orig, mutant) {
            (Some(o), Some(m)) => joined.push(PairPrediction {
                model_id: records.model_id.clone(),
                pair_id: pair.pair_id.clone(),
                sentence_id: pair.sentence_id.clone(),
                orig: o.clone(),
                mutant: m.clone(),
            }),
            (o, m) => gaps.push(CoverageGap {
                pair_id: pair.pair_id.clone(),
                missing_original: o.is_none(),
                missing_mutant: m.is_none(),
            }),
        }
    }
    let total = dataset.len();
    let coverage = if total == 0 {
        1.0
    } else {
        joined.len() as f64 / total as f64
    };
    JoinResult {
        coverage: CoverageReport {
            model_id: records.model_id.clone(),
            total_pairs: total,
            joined_pairs: joined.len(),
            coverage,
            gaps,
        },
        joined,
    }
}

pub fn save_joined(path: &Path, joined: &[PairPrediction]) -> Result<()> {
    write_jsonl(path, joined)
}

/// Loads a joined file, re-validating both sides of every pair.
pub fn load_joined(path: &Path) -> Result<Vec<PairPrediction>> {
    let mut out = Vec::new();
    for (line, mut pair) in read_jsonl::<PairPrediction>(path)? {
        for side in [&pair.orig, &pair.mutant] {
            if side.model_id != pair.model_id {
                return Err(Error::ModelIdMismatch {
                    expected: pair.model_id.clone(),
                    found: side.model_id.clone(),
                });
            }
        }
        if pair.orig.variant_id != pair.sentence_id || pair.mutant.variant_id != mutant_variant_id(&pair.pair_id) {
            return Err(Error::Malformed {
                line,
                message: format!("variant ids of pair `{}` do not match its keys", pair.pair_id),
            });
        }
        pair.orig.probs = validate_probs(line, &pair.orig.variant_id, pair.orig.label, &pair.orig.probs)?;
        pair.mutant.probs = validate_probs(line, &pair.mutant.variant_id, pair.mutant.label, &pair.mutant.probs)?;
        out.push(pair);
    }
    Ok(out)
}
