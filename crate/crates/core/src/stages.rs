//! File-to-file stage runners shared by the CLI subcommands and the pipeline.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::detector::{self, bias_ratios, hidden_intersectional_ratio, load_verdicts, save_verdicts, BiasSummary};
use crate::dictionary::BiasDictionary;
use crate::error::{Error, Result};
use crate::io::{write_json, write_jsonl};
use crate::metrics::{load_shifts, save_shifts, shift_records};
use crate::mutator::{load_corpus, mutate_corpus, variant_texts, MutationDataset, MutationKinds};
use crate::overlap::{flipped_set, overlap_report, OverlapReport};
use crate::predictions::{ingest_predictions, join_pairs, load_joined, save_joined, CoverageReport};
use crate::prioritizer::{reference_signals, run_benchmark, BenchmarkConfig, StrategyRegistry};
use crate::report::BenchmarkOutcome;
use crate::stats::{shift_separation_report, Alternative, SeparationReport};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MutateSummary {
    pub sentences: usize,
    pub pairs: usize,
    pub per_kind: BTreeMap<String, usize>,
    /// Pairs touching each axis, per kind (`kind/axis`).
    pub per_kind_axis: BTreeMap<String, usize>,
}

pub fn mutate(
    corpus: &Path,
    dict: &Path,
    kinds: MutationKinds,
    out: &Path,
    emit_texts: Option<&Path>,
) -> Result<MutateSummary> {
    let dictionary = BiasDictionary::load(dict)?;
    let sentences = load_corpus(corpus)?;
    let dataset = mutate_corpus(&sentences, &dictionary, kinds)?;
    dataset.save(out)?;
    if let Some(texts) = emit_texts {
        write_jsonl(texts, &variant_texts(&sentences, &dataset))?;
    }
    Ok(MutateSummary {
        sentences: sentences.len(),
        pairs: dataset.len(),
        per_kind: dataset
            .kind_counts()
            .into_iter()
            .map(|(k, n)| (k.to_string(), n))
            .collect(),
        per_kind_axis: dataset
            .axis_counts()
            .into_iter()
            .map(|((k, a), n)| (format!("{k}/{a}"), n))
            .collect(),
    })
}

pub fn ingest(
    pred: &Path,
    model: Option<&str>,
    pairs: &Path,
    out: &Path,
    coverage_out: &Path,
) -> Result<CoverageReport> {
    let records = ingest_predictions(pred, model)?;
    let dataset = MutationDataset::load(pairs)?;
    let joined = join_pairs(&records, &dataset);
    save_joined(out, &joined.joined)?;
    write_json(coverage_out, &joined.coverage)?;
    Ok(joined.coverage)
}

/// Sidecar path next to `out`: `joined.jsonl` -> `joined.coverage.json`.
pub fn sidecar(out: &Path, suffix: &str) -> PathBuf {
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    out.with_file_name(format!("{stem}.{suffix}"))
}

pub fn detect(joined: &Path, pairs: &Path, out: &Path, summary_out: &Path) -> Result<BiasSummary> {
    let dataset = MutationDataset::load(pairs)?;
    let joined = load_joined(joined)?;
    let verdicts = detector::detect(&joined, &dataset)?;
    let mut summary = bias_ratios(&verdicts)?;
    summary.hidden_intersectional = Some(hidden_intersectional_ratio(&verdicts, &dataset)?);
    save_verdicts(out, &verdicts)?;
    write_json(summary_out, &summary)?;
    Ok(summary)
}

pub fn metrics(joined: &Path, verdicts: &Path, out: &Path) -> Result<usize> {
    let joined = load_joined(joined)?;
    let verdicts = load_verdicts(verdicts)?;
    let shifts = shift_records(&joined, &verdicts)?;
    save_shifts(out, &shifts)?;
    Ok(shifts.len())
}

pub fn overlap(verdict_files: &[PathBuf], out: &Path) -> Result<OverlapReport> {
    let mut sets = Vec::new();
    for path in verdict_files {
        for (model, verdicts) in detector::group_by_model(load_verdicts(path)?) {
            sets.push((model, flipped_set(&verdicts)));
        }
    }
    let report = overlap_report(&sets)?;
    write_json(out, &report)?;
    Ok(report)
}

pub fn separation(
    ref_shifts: &Path,
    target_verdicts: &Path,
    alternative: Alternative,
    out: &Path,
) -> Result<SeparationReport> {
    let shifts = load_shifts(ref_shifts)?;
    let verdicts = load_verdicts(target_verdicts)?;
    let report = shift_separation_report(&shifts, &verdicts, alternative)?;
    write_json(out, &report)?;
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct PrioritizeArgs<'a> {
    pub target_verdicts: &'a Path,
    pub ref_shifts: &'a Path,
    pub ref_verdicts: &'a Path,
    pub strategies: &'a str,
    pub config: BenchmarkConfig,
    pub out: &'a Path,
}

/// Runs the benchmark; a target without flips yields an `Undefined` outcome
/// rather than an error.
pub fn prioritize(args: &PrioritizeArgs<'_>) -> Result<BenchmarkOutcome> {
    let registry = StrategyRegistry::default();
    let strategies = registry.resolve_list(args.strategies)?;
    let target = load_verdicts(args.target_verdicts)?;
    let shifts = load_shifts(args.ref_shifts)?;
    let ref_verdicts = load_verdicts(args.ref_verdicts)?;
    let reference_model = shifts.first().map(|s| s.model_id.clone()).unwrap_or_default();
    let reference = reference_signals(&shifts, &ref_verdicts);
    let outcome = match run_benchmark(&target, &reference_model, &reference, &strategies, &args.config) {
        Ok(result) => BenchmarkOutcome::Defined(result),
        Err(Error::NoBiasInTarget(model)) => BenchmarkOutcome::Undefined {
            target_model: model.clone(),
            reference_model,
            undefined: format!("target `{model}` has no bias-revealing pairs"),
        },
        Err(e) => return Err(e),
    };
    write_json(args.out, &outcome)?;
    Ok(outcome)
}
