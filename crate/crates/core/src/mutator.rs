//! Counterfactual mutation of corpus sentences.
//!
//! A substitution replaces every occurrence of one dictionary source term.
//! Atomic mutants apply one substitution; intersectional mutants apply two
//! substitutions drawn from distinct axes.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::ops::Range;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use unicode_segmentation::UnicodeSegmentation;

use crate::dictionary::{AttributeAxis, BiasDictionary, TermEntry, MAX_SOURCE_TOKENS};
use crate::error::{Error, Result};
use crate::io::{fnv1a64, read_jsonl, write_jsonl};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusSentence {
    pub sentence_id: String,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MutationKind {
    Atomic,
    Intersectional,
}

impl MutationKind {
    pub const ALL: [MutationKind; 2] = [MutationKind::Atomic, MutationKind::Intersectional];

    pub fn as_str(self) -> &'static str {
        match self {
            MutationKind::Atomic => "atomic",
            MutationKind::Intersectional => "intersectional",
        }
    }
}

impl fmt::Display for MutationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which mutation kinds a corpus run produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MutationKinds {
    pub atomic: bool,
    pub intersectional: bool,
}

impl MutationKinds {
    pub const BOTH: MutationKinds = MutationKinds {
        atomic: true,
        intersectional: true,
    };
}

impl FromStr for MutationKinds {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut kinds = MutationKinds {
            atomic: false,
            intersectional: false,
        };
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part.to_ascii_lowercase().as_str() {
                "atomic" => kinds.atomic = true,
                "intersectional" => kinds.intersectional = true,
                other => return Err(Error::InvalidArgument(format!("unknown mutation kind `{other}`"))),
            }
        }
        if !kinds.atomic && !kinds.intersectional {
            return Err(Error::InvalidArgument("no mutation kind selected".into()));
        }
        Ok(kinds)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Substitution {
    pub axis: AttributeAxis,
    pub source: String,
    pub replacement: String,
    pub occurrence_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MutationPair {
    pub pair_id: String,
    pub sentence_id: String,
    pub kind: MutationKind,
    pub axes: Vec<AttributeAxis>,
    pub substitutions: Vec<Substitution>,
    pub mutant_text: String,
}

impl MutationPair {
    /// Variant id under which predictions for the mutant are filed.
    pub fn mutant_variant_id(&self) -> String {
        mutant_variant_id(&self.pair_id)
    }
}

pub fn mutant_variant_id(pair_id: &str) -> String {
    format!("{pair_id}#mut")
}

/// FNV-1a over `sentence_id`, then per substitution (sorted by axis, source,
/// replacement) `0x1F axis 0x1E source 0x1E replacement`. Rendered as 16 hex digits.
pub fn pair_id(sentence_id: &str, substitutions: &[Substitution]) -> String {
    let mut subs: Vec<&Substitution> = substitutions.iter().collect();
    subs.sort_by(|a, b| (a.axis, &a.source, &a.replacement).cmp(&(b.axis, &b.source, &b.replacement)));
    let mut canonical = String::from(sentence_id);
    for s in subs {
        canonical.push('\u{1f}');
        canonical.push_str(s.axis.as_str());
        canonical.push('\u{1e}');
        canonical.push_str(&s.source);
        canonical.push('\u{1e}');
        canonical.push_str(&s.replacement);
    }
    format!("{:016x}", fnv1a64(canonical.as_bytes()))
}

/// A dictionary entry found in a text, with the byte spans of every occurrence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TermMatch<'d> {
    pub entry: &'d TermEntry,
    pub spans: Vec<Range<usize>>,
}

impl TermMatch<'_> {
    pub fn positions(&self) -> Vec<usize> {
        self.spans.iter().map(|s| s.start).collect()
    }
}

/// Finds dictionary terms on word boundaries, preferring the longest source
/// at each position. Matches are returned in dictionary order.
pub fn find_matches<'d>(text: &str, dict: &'d BiasDictionary) -> Vec<TermMatch<'d>> {
    let mut by_source: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, entry) in dict.entries.iter().enumerate() {
        by_source.entry(entry.source.as_str()).or_default().push(i);
    }
    let longest = dict
        .entries
        .iter()
        .map(TermEntry::token_count)
        .max()
        .unwrap_or(1)
        .min(MAX_SOURCE_TOKENS);

    let words: Vec<(usize, &str)> = text.unicode_word_indices().collect();
    let lowered: Vec<String> = words.iter().map(|(_, w)| w.to_lowercase()).collect();
    let mut spans: BTreeMap<usize, Vec<Range<usize>>> = BTreeMap::new();

    let mut i = 0;
    while i < words.len() {
        let mut consumed = 1;
        for len in (1..=longest.min(words.len() - i)).rev() {
            let contiguous = (i..i + len - 1).all(|j| {
                let gap_start = words[j].0 + words[j].1.len();
                text[gap_start..words[j + 1].0].chars().all(char::is_whitespace)
            });
            if !contiguous {
                continue;
            }
            let candidate = lowered[i..i + len].join(" ");
            if let Some(indices) = by_source.get(candidate.as_str()) {
                let last = &words[i + len - 1];
                let span = words[i].0..last.0 + last.1.len();
                for &idx in indices {
                    spans.entry(idx).or_default().push(span.clone());
                }
                consumed = len;
                break;
            }
        }
        i += consumed;
    }

    spans
        .into_iter()
        .map(|(idx, spans)| TermMatch {
            entry: &dict.entries[idx],
            spans,
        })
        .collect()
}

/// Copies the surface case of `occurrence` onto `replacement`.
fn adapt_case(occurrence: &str, replacement: &str) -> String {
    let letters: Vec<char> = occurrence.chars().filter(|c| c.is_alphabetic()).collect();
    if letters.len() >= 2 && letters.iter().all(|c| c.is_uppercase()) {
        return replacement.to_uppercase();
    }
    match occurrence.chars().next() {
        Some(first) if first.is_uppercase() => {
            let mut chars = replacement.chars();
            match chars.next() {
                Some(head) => head.to_uppercase().chain(chars).collect(),
                None => String::new(),
            }
        }
        _ => replacement.to_string(),
    }
}

/// Applies span-disjoint edits to `text`.
fn apply_edits(text: &str, edits: &[(&Range<usize>, &str)]) -> String {
    let mut sorted: Vec<&(&Range<usize>, &str)> = edits.iter().collect();
    sorted.sort_by_key(|(span, _)| span.start);
    let mut out = String::with_capacity(text.len() + 16);
    let mut cursor = 0;
    for (span, replacement) in sorted {
        out.push_str(&text[cursor..span.start]);
        out.push_str(&adapt_case(&text[(*span).clone()], replacement));
        cursor = span.end;
    }
    out.push_str(&text[cursor..]);
    out
}

struct SubstitutionOption<'a> {
    substitution: Substitution,
    spans: &'a [Range<usize>],
}

fn options<'a>(matches: &'a [TermMatch<'_>]) -> Vec<SubstitutionOption<'a>> {
    matches
        .iter()
        .flat_map(|m| {
            m.entry.replacements.iter().map(move |r| SubstitutionOption {
                substitution: Substitution {
                    axis: m.entry.axis,
                    source: m.entry.source.clone(),
                    replacement: r.clone(),
                    occurrence_count: m.spans.len(),
                },
                spans: &m.spans,
            })
        })
        .collect()
}

fn build_pair(sentence: &CorpusSentence, kind: MutationKind, picked: &[&SubstitutionOption<'_>]) -> MutationPair {
    let edits: Vec<(&Range<usize>, &str)> = picked
        .iter()
        .flat_map(|o| o.spans.iter().map(move |s| (s, o.substitution.replacement.as_str())))
        .collect();
    let mut substitutions: Vec<Substitution> = picked.iter().map(|o| o.substitution.clone()).collect();
    substitutions.sort();
    let mut axes: Vec<AttributeAxis> = substitutions.iter().map(|s| s.axis).collect();
    axes.dedup();
    MutationPair {
        pair_id: pair_id(&sentence.sentence_id, &substitutions),
        sentence_id: sentence.sentence_id.clone(),
        kind,
        axes,
        substitutions,
        mutant_text: apply_edits(&sentence.text, &edits),
    }
}

fn spans_overlap(a: &[Range<usize>], b: &[Range<usize>]) -> bool {
    a.iter().any(|x| b.iter().any(|y| x.start < y.end && y.start < x.end))
}

fn keep_unique(pairs: Vec<MutationPair>, original: &str) -> Vec<MutationPair> {
    let mut seen = HashSet::new();
    pairs
        .into_iter()
        .filter(|p| p.mutant_text != original && seen.insert(p.mutant_text.clone()))
        .collect()
}

/// One mutant per (matched entry, replacement), each replacing all occurrences.
pub fn mutate_atomic(sentence: &CorpusSentence, dict: &BiasDictionary) -> Vec<MutationPair> {
    let matches = find_matches(&sentence.text, dict);
    let pairs = options(&matches)
        .iter()
        .map(|o| build_pair(sentence, MutationKind::Atomic, &[o]))
        .collect();
    keep_unique(pairs, &sentence.text)
}

/// One mutant per unordered pair of substitutions on distinct axes.
pub fn mutate_intersectional(sentence: &CorpusSentence, dict: &BiasDictionary) -> Vec<MutationPair> {
    let matches = find_matches(&sentence.text, dict);
    let opts = options(&matches);
    let mut pairs = Vec::new();
    for (i, a) in opts.iter().enumerate() {
        for b in &opts[i + 1..] {
            if a.substitution.axis == b.substitution.axis || spans_overlap(a.spans, b.spans) {
                continue;
            }
            pairs.push(build_pair(sentence, MutationKind::Intersectional, &[a, b]));
        }
    }
    keep_unique(pairs, &sentence.text)
}

pub fn mutate_sentence(sentence: &CorpusSentence, dict: &BiasDictionary, kinds: MutationKinds) -> Vec<MutationPair> {
    let mut out = Vec::new();
    if kinds.atomic {
        out.extend(mutate_atomic(sentence, dict));
    }
    if kinds.intersectional {
        out.extend(mutate_intersectional(sentence, dict));
    }
    out
}

/// The mutation pairs of a corpus, in corpus order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MutationDataset {
    pub pairs: Vec<MutationPair>,
}

impl MutationDataset {
    pub fn load(path: &Path) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut pairs = Vec::new();
        for (line, pair) in read_jsonl::<MutationPair>(path)? {
            let expected = match pair.kind {
                MutationKind::Atomic => 1,
                MutationKind::Intersectional => 2,
            };
            if pair.substitutions.len() != expected {
                return Err(Error::Malformed {
                    line,
                    message: format!("{} pair with {} substitutions", pair.kind, pair.substitutions.len()),
                });
            }
            if !seen.insert(pair.pair_id.clone()) {
                return Err(Error::Malformed {
                    line,
                    message: format!("duplicate pair_id `{}`", pair.pair_id),
                });
            }
            pairs.push(pair);
        }
        Ok(MutationDataset { pairs })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_jsonl(path, &self.pairs)
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn by_id(&self) -> HashMap<&str, &MutationPair> {
        self.pairs.iter().map(|p| (p.pair_id.as_str(), p)).collect()
    }

    /// Pairs touching each axis, per kind. An intersectional pair counts once for each of its axes.
    pub fn axis_counts(&self) -> BTreeMap<(MutationKind, AttributeAxis), usize> {
        let mut counts = BTreeMap::new();
        for pair in &self.pairs {
            for &axis in &pair.axes {
                *counts.entry((pair.kind, axis)).or_insert(0) += 1;
            }
        }
        counts
    }

    pub fn kind_counts(&self) -> BTreeMap<MutationKind, usize> {
        let mut counts = BTreeMap::new();
        for pair in &self.pairs {
            *counts.entry(pair.kind).or_insert(0) += 1;
        }
        counts
    }
}

pub fn load_corpus(path: &Path) -> Result<Vec<CorpusSentence>> {
    let mut seen = HashSet::new();
    let mut corpus = Vec::new();
    for (line, sentence) in read_jsonl::<CorpusSentence>(path)? {
        if sentence.text.trim().is_empty() {
            return Err(Error::Malformed {
                line,
                message: format!("sentence `{}` has empty text", sentence.sentence_id),
            });
        }
        if !seen.insert(sentence.sentence_id.clone()) {
            return Err(Error::DuplicateSentenceId(sentence.sentence_id));
        }
        corpus.push(sentence);
    }
    Ok(corpus)
}

/// Mutates every sentence; fans out per sentence and merges in corpus order.
pub fn mutate_corpus(
    corpus: &[CorpusSentence],
    dict: &BiasDictionary,
    kinds: MutationKinds,
) -> Result<MutationDataset> {
    let mut seen = HashSet::new();
    for s in corpus {
        if !seen.insert(s.sentence_id.as_str()) {
            return Err(Error::DuplicateSentenceId(s.sentence_id.clone()));
        }
    }
    let per_sentence: Vec<Vec<MutationPair>> = corpus.par_iter().map(|s| mutate_sentence(s, dict, kinds)).collect();
    Ok(MutationDataset {
        pairs: per_sentence.into_iter().flatten().collect(),
    })
}

/// Inference input line: one text variant to classify.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextRecord {
    pub variant_id: String,
    pub text: String,
}

/// Originals followed by their mutants, sentence by sentence.
pub fn variant_texts(corpus: &[CorpusSentence], dataset: &MutationDataset) -> Vec<TextRecord> {
    let mut by_sentence: HashMap<&str, Vec<&MutationPair>> = HashMap::new();
    for pair in &dataset.pairs {
        by_sentence.entry(pair.sentence_id.as_str()).or_default().push(pair);
    }
    let mut out = Vec::new();
    for s in corpus {
        out.push(TextRecord {
            variant_id: s.sentence_id.clone(),
            text: s.text.clone(),
        });
        for pair in by_sentence.get(s.sentence_id.as_str()).into_iter().flatten() {
            out.push(TextRecord {
                variant_id: pair.mutant_variant_id(),
                text: pair.mutant_text.clone(),
            });
        }
    }
    out
}
