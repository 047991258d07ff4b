use std::path::PathBuf;
use std::process::ExitCode;

use biaslens::mutator::MutationKinds;
use biaslens::pipeline::{run_pipeline, PipelineOptions, SEED_ENV};
use biaslens::prioritizer::{BenchmarkConfig, DEFAULT_REPETITIONS};
use biaslens::report::{render_report, AuditReport, BenchmarkOutcome, Formats};
use biaslens::stages;
use biaslens::stats::Alternative;
use biaslens::{Error, Result};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "biaslens", version, about = "Metamorphic bias auditing for sentiment models")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate original/mutant pairs from a corpus and bias dictionary.
    Mutate {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        dict: PathBuf,
        #[arg(long, default_value = "atomic,intersectional")]
        kinds: MutationKinds,
        #[arg(long)]
        out: PathBuf,
        /// Also write the variant texts to score.
        #[arg(long)]
        emit_texts: Option<PathBuf>,
    },
    /// Validate model predictions and join them onto mutation pairs.
    Ingest {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Coverage report path (default: next to --out).
        #[arg(long)]
        coverage: Option<PathBuf>,
    },
    /// Flag label flips and compute bias-revealing ratios.
    Detect {
        #[arg(long)]
        joined: PathBuf,
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Compute JSD and cosine shifts per pair.
    Metrics {
        #[arg(long)]
        joined: PathBuf,
        #[arg(long)]
        verdicts: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare flipped-pair sets across 2 to 5 models.
    Overlap {
        #[arg(long, num_args = 2..=5, required = true)]
        verdicts: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Test whether reference shifts separate target flips from non-flips.
    Separation {
        #[arg(long)]
        shifts: PathBuf,
        #[arg(long)]
        target_verdicts: PathBuf,
        #[arg(long, default_value = "two-sided")]
        alternative: Alternative,
        #[arg(long)]
        out: PathBuf,
    },
    /// Benchmark test prioritization strategies.
    Prioritize {
        #[arg(long)]
        target_verdicts: PathBuf,
        #[arg(long)]
        ref_shifts: PathBuf,
        #[arg(long)]
        ref_verdicts: PathBuf,
        #[arg(long, default_value = "random,jsd,cosine,bias-first")]
        strategies: String,
        #[arg(long, default_value_t = DEFAULT_REPETITIONS)]
        reps: usize,
        #[arg(long, env = SEED_ENV, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value = "two-sided")]
        alternative: Alternative,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render report files from a run directory.
    Report {
        #[arg(long)]
        run_dir: PathBuf,
        #[arg(long, default_value = "json,csv,svg")]
        formats: Formats,
        /// Output directory (default: <run-dir>/report).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the whole audit from a TOML config.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "run")]
        run_dir: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        strategies: Option<String>,
        #[arg(long)]
        formats: Option<String>,
        /// Rerun every stage even if outputs are current.
        #[arg(long)]
        force: bool,
    },
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Mutate {
            corpus,
            dict,
            kinds,
            out,
            emit_texts,
        } => {
            let s = stages::mutate(&corpus, &dict, kinds, &out, emit_texts.as_deref())?;
            println!("{} sentences, {} pairs", s.sentences, s.pairs);
            for (k, n) in &s.per_kind_axis {
                println!("  {k}: {n}");
            }
        }
        Command::Ingest {
            pred,
            model,
            pairs,
            out,
            coverage,
        } => {
            let coverage = coverage.unwrap_or_else(|| stages::sidecar(&out, "coverage.json"));
            let c = stages::ingest(&pred, model.as_deref(), &pairs, &out, &coverage)?;
            println!(
                "{}: joined {}/{} pairs ({:.2}% coverage)",
                c.model_id,
                c.joined_pairs,
                c.total_pairs,
                100.0 * c.coverage
            );
        }
        Command::Detect {
            joined,
            pairs,
            out,
            summary,
        } => {
            let summary = summary.unwrap_or_else(|| stages::sidecar(&out, "summary.json"));
            let s = stages::detect(&joined, &pairs, &out, &summary)?;
            for t in &s.totals {
                println!("{} {}: {}/{} bias-revealing", s.model_id, t.kind, t.revealing, t.total);
            }
        }
        Command::Metrics { joined, verdicts, out } => {
            let n = stages::metrics(&joined, &verdicts, &out)?;
            println!("{n} shift records");
        }
        Command::Overlap { verdicts, out } => {
            let r = stages::overlap(&verdicts, &out)?;
            println!("{} models, union of {} flipped pairs", r.model_ids.len(), r.union_size);
        }
        Command::Separation {
            shifts,
            target_verdicts,
            alternative,
            out,
        } => {
            let r = stages::separation(&shifts, &target_verdicts, alternative, &out)?;
            for m in &r.metrics {
                match (&m.test, &m.effect) {
                    (Some(t), Some(e)) => println!("{}: p = {:e}, A12 = {:.4}", m.metric, t.p_value, e.a12),
                    _ => println!("{}: undefined", m.metric),
                }
            }
        }
        Command::Prioritize {
            target_verdicts,
            ref_shifts,
            ref_verdicts,
            strategies,
            reps,
            seed,
            alternative,
            out,
        } => {
            let outcome = stages::prioritize(&stages::PrioritizeArgs {
                target_verdicts: &target_verdicts,
                ref_shifts: &ref_shifts,
                ref_verdicts: &ref_verdicts,
                strategies: &strategies,
                config: BenchmarkConfig {
                    repetitions: reps,
                    base_seed: seed,
                    alternative,
                },
                out: &out,
            })?;
            match outcome {
                BenchmarkOutcome::Defined(b) => {
                    for s in &b.strategies {
                        let at20 = s.highlights.first().map(|h| h.bd_percent).unwrap_or(0.0);
                        println!("{}: {:.1}% detected at 20% budget", s.strategy, at20);
                    }
                }
                BenchmarkOutcome::Undefined { undefined, .. } => println!("undefined: {undefined}"),
            }
        }
        Command::Report { run_dir, formats, out } => {
            let report = AuditReport::from_run_dir(&run_dir)?;
            let out = out.unwrap_or_else(|| run_dir.join("report"));
            for p in render_report(&report, &formats, &out)? {
                println!("{}", p.display());
            }
        }
        Command::Run {
            config,
            run_dir,
            seed,
            reps,
            strategies,
            formats,
            force,
        } => {
            let outcome = run_pipeline(&PipelineOptions {
                config,
                run_dir,
                seed,
                repetitions: reps,
                strategies,
                formats,
                force,
                invocation: std::env::args().skip(1).collect(),
            })?;
            println!(
                "run complete in {}: {} stage(s) run, {} reused",
                outcome.run_dir.display(),
                outcome.stages_run.len(),
                outcome.stages_reused.len()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    if let Some(jobs) = cli.jobs {
        let built = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build_global();
        if let Err(e) = built {
            eprintln!("error: {}", Error::InvalidArgument(e.to_string()));
            return ExitCode::from(1);
        }
    }
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
