//! End-to-end audit runs driven by a declarative TOML config.
//!
//! ```toml
//! corpus = "corpus.jsonl"            # paths are relative to the config file
//! dictionary = "../dict/example.tsv"
//! kinds = ["atomic", "intersectional"]
//! seed = 42
//! repetitions = 100
//! strategies = ["random", "jsd", "cosine", "bias-first"]
//! alternative = "two-sided"
//! formats = ["json", "csv", "svg"]
//!
//! [[models]]
//! id = "distilroberta"
//! predictions = "predictions/distilroberta.jsonl"
//! role = "reference"                 # target | reference | both | audit
//!
//! [[pairings]]                       # optional; defaults to targets x references
//! target = "finma"
//! reference = "distilroberta"
//! ```
//!
//! Every stage records the digests of its outputs in `manifest.json`. On a
//! rerun with unchanged config and inputs, a stage is skipped when its outputs
//! are intact and none of its dependencies ran.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{file_digest, read_json, write_json};
use crate::mutator::MutationKinds;
use crate::prioritizer::{BenchmarkConfig, DEFAULT_REPETITIONS};
use crate::report::{file_stem, render_report, AuditReport, Formats};
use crate::stages;
use crate::stats::Alternative;

pub const SEED_ENV: &str = "BIASLENS_SEED";
pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Target,
    Reference,
    Both,
    #[default]
    Audit,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub id: String,
    pub predictions: PathBuf,
    #[serde(default)]
    pub role: Role,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pairing {
    pub target: String,
    pub reference: String,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub corpus: Option<PathBuf>,
    pub dictionary: Option<PathBuf>,
    pub kinds: Option<Vec<String>>,
    pub seed: Option<u64>,
    pub repetitions: Option<usize>,
    pub strategies: Option<Vec<String>>,
    pub alternative: Option<String>,
    pub formats: Option<Vec<String>>,
    #[serde(default)]
    pub models: Vec<ModelConfig>,
    #[serde(default)]
    pub pairings: Vec<Pairing>,
}

/// Command-line overrides; `None` keeps the config value.
#[derive(Debug, Clone, Default)]
pub struct PipelineOptions {
    pub config: PathBuf,
    pub run_dir: PathBuf,
    pub seed: Option<u64>,
    pub repetitions: Option<usize>,
    pub strategies: Option<String>,
    pub formats: Option<String>,
    pub force: bool,
    pub invocation: Vec<String>,
}

/// Config with paths resolved and overrides applied.
#[derive(Debug, Clone)]
pub struct ResolvedConfig {
    pub corpus: PathBuf,
    pub dictionary: PathBuf,
    pub kinds: MutationKinds,
    pub kinds_label: String,
    pub seed: u64,
    pub repetitions: usize,
    pub strategies: String,
    pub alternative: Alternative,
    pub formats: Formats,
    pub formats_label: String,
    pub models: Vec<ModelConfig>,
    pub pairings: Vec<Pairing>,
    pub config_digest: String,
}

fn resolve_path(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "input file not found"),
        ))
    }
}

impl ResolvedConfig {
    pub fn load(opts: &PipelineOptions) -> Result<ResolvedConfig> {
        let text = fs::read_to_string(&opts.config).map_err(|e| Error::io(&opts.config, e))?;
        let raw: PipelineConfig = toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
        let base = opts.config.parent().unwrap_or(Path::new("."));

        let corpus = resolve_path(
            base,
            raw.corpus
                .as_deref()
                .ok_or_else(|| Error::Config("missing key `corpus`".into()))?,
        );
        let dictionary = resolve_path(
            base,
            raw.dictionary
                .as_deref()
                .ok_or_else(|| Error::Config("missing key `dictionary`".into()))?,
        );

        let kinds_label = raw
            .kinds
            .map(|k| k.join(","))
            .unwrap_or_else(|| "atomic,intersectional".into());
        let kinds: MutationKinds = kinds_label.parse().map_err(|e: Error| Error::Config(e.to_string()))?;

        let env_seed = match std::env::var(SEED_ENV) {
            Ok(v) => Some(
                v.trim()
                    .parse::<u64>()
                    .map_err(|_| Error::Config(format!("{SEED_ENV}=`{v}` is not an integer")))?,
            ),
            Err(_) => None,
        };
        let seed = opts.seed.or(raw.seed).or(env_seed).unwrap_or(DEFAULT_SEED);
        let repetitions = opts.repetitions.or(raw.repetitions).unwrap_or(DEFAULT_REPETITIONS);
        if repetitions == 0 {
            return Err(Error::Config("repetitions must be at least 1".into()));
        }
        let strategies = opts
            .strategies
            .clone()
            .or(raw.strategies.map(|s| s.join(",")))
            .unwrap_or_else(|| "random,jsd,cosine,bias-first".into());
        crate::prioritizer::StrategyRegistry::default()
            .resolve_list(&strategies)
            .map_err(|e| Error::Config(e.to_string()))?;
        let alternative: Alternative = raw
            .alternative
            .as_deref()
            .unwrap_or("two-sided")
            .parse()
            .map_err(|e: Error| Error::Config(e.to_string()))?;
        let formats_label = opts
            .formats
            .clone()
            .or(raw.formats.map(|f| f.join(",")))
            .unwrap_or_else(|| "json,csv,svg".into());
        let formats: Formats = formats_label.parse().map_err(|e: Error| Error::Config(e.to_string()))?;

        let mut seen = HashSet::new();
        let mut stems = HashSet::new();
        let mut models = raw.models;
        for m in &mut models {
            if m.id.trim().is_empty() {
                return Err(Error::Config("model with empty id".into()));
            }
            if !seen.insert(m.id.clone()) || !stems.insert(file_stem(&m.id)) {
                return Err(Error::Config(format!("duplicate model id `{}`", m.id)));
            }
            m.predictions = resolve_path(base, &m.predictions);
        }

        let pairings = if raw.pairings.is_empty() {
            let targets = models.iter().filter(|m| matches!(m.role, Role::Target | Role::Both));
            targets
                .flat_map(|t| {
                    models
                        .iter()
                        .filter(|r| matches!(r.role, Role::Reference | Role::Both) && r.id != t.id)
                        .map(|r| Pairing {
                            target: t.id.clone(),
                            reference: r.id.clone(),
                        })
                })
                .collect()
        } else {
            raw.pairings
        };
        for p in &pairings {
            for id in [&p.target, &p.reference] {
                if !seen.contains(id) {
                    return Err(Error::Config(format!("pairing names unknown model `{id}`")));
                }
            }
        }

        require_file(&corpus)?;
        require_file(&dictionary)?;
        for m in &models {
            require_file(&m.predictions)?;
        }

        Ok(ResolvedConfig {
            corpus,
            dictionary,
            kinds,
            kinds_label,
            seed,
            repetitions,
            strategies,
            alternative,
            formats,
            formats_label,
            models,
            pairings,
            config_digest: file_digest(&opts.config)?,
        })
    }

    fn settings(&self) -> BTreeMap<String, String> {
        BTreeMap::from([
            ("alternative".to_string(), self.alternative.to_string()),
            ("formats".to_string(), self.formats_label.clone()),
            ("kinds".to_string(), self.kinds_label.clone()),
            ("repetitions".to_string(), self.repetitions.to_string()),
            ("strategies".to_string(), self.strategies.clone()),
        ])
    }

    fn input_digests(&self) -> Result<BTreeMap<String, String>> {
        let mut inputs = BTreeMap::new();
        inputs.insert("corpus".to_string(), file_digest(&self.corpus)?);
        inputs.insert("dictionary".to_string(), file_digest(&self.dictionary)?);
        for m in &self.models {
            inputs.insert(format!("predictions/{}", m.id), file_digest(&m.predictions)?);
        }
        Ok(inputs)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    /// Run-dir-relative path to SHA-256.
    pub outputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub toolkit_version: String,
    pub invocation: Vec<String>,
    pub config_digest: String,
    pub seed: u64,
    pub settings: BTreeMap<String, String>,
    pub inputs: BTreeMap<String, String>,
    pub stages: Vec<StageRecord>,
    pub complete: bool,
}

impl RunManifest {
    fn stage(&self, name: &str) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.name == name)
    }

    fn same_run_inputs(&self, other: &RunManifest) -> bool {
        self.toolkit_version == other.toolkit_version
            && self.config_digest == other.config_digest
            && self.seed == other.seed
            && self.settings == other.settings
            && self.inputs == other.inputs
    }
}

/// Stages in execution order with their dependencies.
pub const STAGES: [(&str, &[&str]); 8] = [
    ("mutate", &[]),
    ("ingest", &["mutate"]),
    ("detect", &["mutate", "ingest"]),
    ("metrics", &["ingest", "detect"]),
    ("overlap", &["detect"]),
    ("separation", &["detect", "metrics"]),
    ("prioritize", &["detect", "metrics"]),
    ("report", &["detect", "overlap", "separation", "prioritize"]),
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineOutcome {
    pub run_dir: PathBuf,
    pub stages_run: Vec<String>,
    pub stages_reused: Vec<String>,
    pub manifest: RunManifest,
}

struct Layout<'a> {
    root: &'a Path,
}

impl Layout<'_> {
    fn mutations(&self) -> PathBuf {
        self.root.join("mutations.jsonl")
    }
    fn texts(&self) -> PathBuf {
        self.root.join("texts.jsonl")
    }
    fn model(&self, id: &str, file: &str) -> PathBuf {
        self.root.join("models").join(file_stem(id)).join(file)
    }
    fn overlap(&self) -> PathBuf {
        self.root.join("overlap.json")
    }
    fn pairing(&self, dir: &str, p: &Pairing) -> PathBuf {
        self.root
            .join(dir)
            .join(format!("{}__{}.json", file_stem(&p.target), file_stem(&p.reference)))
    }
    fn report_dir(&self) -> PathBuf {
        self.root.join("report")
    }
}

fn clear_dir(dir: &Path) -> Result<()> {
    if dir.exists() {
        fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(())
}

fn run_stage(
    name: &str,
    cfg: &ResolvedConfig,
    layout: &Layout<'_>,
    inputs: &BTreeMap<String, String>,
) -> Result<Vec<PathBuf>> {
    let mut outputs = Vec::new();
    match name {
        "mutate" => {
            let summary = stages::mutate(
                &cfg.corpus,
                &cfg.dictionary,
                cfg.kinds,
                &layout.mutations(),
                Some(&layout.texts()),
            )?;
            log::info!("mutate: {} pairs from {} sentences", summary.pairs, summary.sentences);
            outputs.extend([layout.mutations(), layout.texts()]);
        }
        "ingest" => {
            for m in &cfg.models {
                let (joined, coverage) = (
                    layout.model(&m.id, "joined.jsonl"),
                    layout.model(&m.id, "coverage.json"),
                );
                let report = stages::ingest(&m.predictions, Some(&m.id), &layout.mutations(), &joined, &coverage)?;
                if !report.gaps.is_empty() {
                    log::warn!("{}: {} pair(s) lack predictions", m.id, report.gaps.len());
                }
                outputs.extend([joined, coverage]);
            }
        }
        "detect" => {
            for m in &cfg.models {
                let (verdicts, summary) = (
                    layout.model(&m.id, "verdicts.jsonl"),
                    layout.model(&m.id, "summary.json"),
                );
                stages::detect(
                    &layout.model(&m.id, "joined.jsonl"),
                    &layout.mutations(),
                    &verdicts,
                    &summary,
                )?;
                outputs.extend([verdicts, summary]);
            }
        }
        "metrics" => {
            for m in &cfg.models {
                let shifts = layout.model(&m.id, "shifts.jsonl");
                stages::metrics(
                    &layout.model(&m.id, "joined.jsonl"),
                    &layout.model(&m.id, "verdicts.jsonl"),
                    &shifts,
                )?;
                outputs.push(shifts);
            }
        }
        "overlap" => {
            let path = layout.overlap();
            if path.exists() {
                fs::remove_file(&path).map_err(|e| Error::io(&path, e))?;
            }
            let n = cfg.models.len();
            if (crate::overlap::MIN_MODELS..=crate::overlap::MAX_MODELS).contains(&n) {
                let files: Vec<PathBuf> = cfg
                    .models
                    .iter()
                    .map(|m| layout.model(&m.id, "verdicts.jsonl"))
                    .collect();
                stages::overlap(&files, &path)?;
                outputs.push(path);
            } else {
                log::warn!("overlap skipped: needs 2 to 5 models, config has {n}");
            }
        }
        "separation" => {
            clear_dir(&layout.root.join("separation"))?;
            for p in &cfg.pairings {
                let out = layout.pairing("separation", p);
                stages::separation(
                    &layout.model(&p.reference, "shifts.jsonl"),
                    &layout.model(&p.target, "verdicts.jsonl"),
                    cfg.alternative,
                    &out,
                )?;
                outputs.push(out);
            }
        }
        "prioritize" => {
            clear_dir(&layout.root.join("bench"))?;
            for p in &cfg.pairings {
                let out = layout.pairing("bench", p);
                stages::prioritize(&stages::PrioritizeArgs {
                    target_verdicts: &layout.model(&p.target, "verdicts.jsonl"),
                    ref_shifts: &layout.model(&p.reference, "shifts.jsonl"),
                    ref_verdicts: &layout.model(&p.reference, "verdicts.jsonl"),
                    strategies: &cfg.strategies,
                    config: BenchmarkConfig {
                        repetitions: cfg.repetitions,
                        base_seed: cfg.seed,
                        alternative: cfg.alternative,
                    },
                    out: &out,
                })?;
                outputs.push(out);
            }
        }
        "report" => {
            clear_dir(&layout.report_dir())?;
            // Sorted by path, the order `AuditReport::from_run_dir` uses.
            let sorted = |mut v: Vec<PathBuf>| {
                v.sort();
                v
            };
            let summaries = sorted(cfg.models.iter().map(|m| layout.model(&m.id, "summary.json")).collect());
            let overlap = Some(layout.overlap()).filter(|p| p.exists());
            let separations = sorted(cfg.pairings.iter().map(|p| layout.pairing("separation", p)).collect());
            let benches = sorted(cfg.pairings.iter().map(|p| layout.pairing("bench", p)).collect());
            let report =
                AuditReport::from_parts(inputs.clone(), &summaries, overlap.as_deref(), &separations, &benches)?;
            outputs.extend(render_report(&report, &cfg.formats, &layout.report_dir())?);
        }
        other => return Err(Error::InvalidArgument(format!("unknown stage `{other}`"))),
    }
    Ok(outputs)
}

fn record(name: &str, root: &Path, outputs: &[PathBuf]) -> Result<StageRecord> {
    let mut map = BTreeMap::new();
    for path in outputs {
        let rel = path.strip_prefix(root).unwrap_or(path);
        let key = rel
            .components()
            .map(|c| c.as_os_str().to_string_lossy())
            .collect::<Vec<_>>()
            .join("/");
        map.insert(key, file_digest(path)?);
    }
    Ok(StageRecord {
        name: name.to_string(),
        outputs: map,
    })
}

fn intact(rec: &StageRecord, root: &Path) -> bool {
    rec.outputs
        .iter()
        .all(|(rel, digest)| file_digest(&root.join(rel)).map(|d| d == *digest).unwrap_or(false))
}

/// Runs every stage in dependency order into `opts.run_dir`. A failing stage
/// stops the run; earlier outputs and their manifest entries are kept.
pub fn run_pipeline(opts: &PipelineOptions) -> Result<PipelineOutcome> {
    let cfg = ResolvedConfig::load(opts)?;
    let inputs = cfg.input_digests()?;
    let root = opts.run_dir.as_path();
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let layout = Layout { root };
    let manifest_path = root.join("manifest.json");

    let mut manifest = RunManifest {
        toolkit_version: crate::VERSION.to_string(),
        invocation: opts.invocation.clone(),
        config_digest: cfg.config_digest.clone(),
        seed: cfg.seed,
        settings: cfg.settings(),
        inputs: inputs.clone(),
        stages: Vec::new(),
        complete: false,
    };
    let previous: Option<RunManifest> = if manifest_path.exists() {
        read_json(&manifest_path).ok()
    } else {
        None
    };
    let incremental = !opts.force && previous.as_ref().is_some_and(|p| p.same_run_inputs(&manifest));

    let mut ran: Vec<String> = Vec::new();
    let mut reused = Vec::new();
    for (name, deps) in STAGES {
        let prior = previous.as_ref().and_then(|p| p.stage(name)).filter(|_| incremental);
        let reusable = prior.filter(|rec| !deps.iter().any(|d| ran.iter().any(|r| r == d)) && intact(rec, root));
        if let Some(rec) = reusable {
            manifest.stages.push(rec.clone());
            reused.push(name.to_string());
            continue;
        }
        log::info!("stage {name}");
        match run_stage(name, &cfg, &layout, &inputs).and_then(|outs| record(name, root, &outs)) {
            Ok(rec) => {
                manifest.stages.push(rec);
                ran.push(name.to_string());
            }
            Err(e) => {
                write_json(&manifest_path, &manifest)?;
                return Err(Error::Stage {
                    stage: name.to_string(),
                    source: Box::new(e),
                });
            }
        }
    }
    manifest.complete = true;
    write_json(&manifest_path, &manifest)?;

    let finished = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    write_json(
        &root.join("run.meta.json"),
        &serde_json::json!({
            "finished_at_unix": finished,
            "stages_run": ran,
            "stages_reused": reused,
        }),
    )?;

    Ok(PipelineOutcome {
        run_dir: root.to_path_buf(),
        stages_run: ran,
        stages_reused: reused,
        manifest,
    })
}
