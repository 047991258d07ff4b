mod common;

use std::fs;
use std::path::Path;

use biaslens::pipeline::{run_pipeline, PipelineOptions, STAGES};
use biaslens::Error;
use common::{check_against_golden, fixture, golden_run_dir, tree, workspace};

fn options(config: &Path, run_dir: &Path) -> PipelineOptions {
    PipelineOptions {
        config: config.to_path_buf(),
        run_dir: run_dir.to_path_buf(),
        invocation: vec!["test".into()],
        ..Default::default()
    }
}

/// Copies the fixture config and its inputs into `dir` so tests can edit them.
fn sandbox(dir: &Path) -> std::path::PathBuf {
    let ws = workspace();
    for rel in [
        "fixtures/pipeline.toml",
        "fixtures/corpus.jsonl",
        "fixtures/predictions/finma-sim.jsonl",
        "fixtures/predictions/finbert-sim.jsonl",
        "fixtures/predictions/distilroberta-sim.jsonl",
        "dict/example.tsv",
    ] {
        let dst = dir.join(rel);
        fs::create_dir_all(dst.parent().unwrap()).unwrap();
        fs::copy(ws.join(rel), dst).unwrap();
    }
    dir.join("fixtures/pipeline.toml")
}

#[test]
fn fixture_run_matches_golden() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    let outcome = run_pipeline(&options(&fixture("pipeline.toml"), &run)).unwrap();
    assert_eq!(outcome.stages_run.len(), STAGES.len());
    assert!(outcome.manifest.complete);
    let problems = check_against_golden(&run, &golden_run_dir());
    assert!(problems.is_empty(), "{problems:#?}");
}

#[test]
fn rerun_reuses_every_stage_with_identical_digests() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    let config = fixture("pipeline.toml");
    let first = run_pipeline(&options(&config, &run)).unwrap();
    let second = run_pipeline(&options(&config, &run)).unwrap();
    assert!(second.stages_run.is_empty());
    assert_eq!(second.stages_reused.len(), STAGES.len());
    assert_eq!(first.manifest.stages, second.manifest.stages);
}

#[test]
fn force_reruns_and_reproduces_digests() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    let config = fixture("pipeline.toml");
    let first = run_pipeline(&options(&config, &run)).unwrap();
    let forced = run_pipeline(&PipelineOptions {
        force: true,
        ..options(&config, &run)
    })
    .unwrap();
    assert_eq!(forced.stages_run.len(), STAGES.len());
    assert_eq!(first.manifest.stages, forced.manifest.stages);
}

#[test]
fn tampered_output_reruns_its_stage_and_dependents_only() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    let config = fixture("pipeline.toml");
    let first = run_pipeline(&options(&config, &run)).unwrap();
    fs::write(run.join("overlap.json"), "{}").unwrap();
    let second = run_pipeline(&options(&config, &run)).unwrap();
    assert_eq!(second.stages_run, ["overlap", "report"]);
    assert_eq!(first.manifest.stages, second.manifest.stages);
}

#[test]
fn changed_input_invalidates_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let config = sandbox(tmp.path());
    let run = tmp.path().join("run");
    run_pipeline(&options(&config, &run)).unwrap();
    let corpus = tmp.path().join("fixtures/corpus.jsonl");
    let mut text = fs::read_to_string(&corpus).unwrap();
    text.push_str("{\"sentence_id\":\"s11\",\"text\":\"He bought the bank.\"}\n");
    fs::write(&corpus, text).unwrap();
    // Predictions no longer cover the new mutants, which is a coverage gap, not an error.
    let outcome = run_pipeline(&options(&config, &run)).unwrap();
    assert_eq!(outcome.stages_run.len(), STAGES.len());
}

#[test]
fn failing_stage_keeps_earlier_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let config = sandbox(tmp.path());
    let pred = tmp.path().join("fixtures/predictions/finbert-sim.jsonl");
    let mut text = fs::read_to_string(&pred).unwrap();
    text.push_str(
        "{\"model_id\":\"finbert-sim\",\"variant_id\":\"zz\",\"label\":\"positive\",\"probs\":[0.5,0.5,0.5]}\n",
    );
    fs::write(&pred, text).unwrap();

    let run = tmp.path().join("run");
    let err = run_pipeline(&options(&config, &run)).unwrap_err();
    match &err {
        Error::Stage { stage, source } => {
            assert_eq!(stage, "ingest");
            assert!(matches!(**source, Error::ProbSumViolation { .. }));
        }
        other => panic!("unexpected error {other:?}"),
    }
    assert_eq!(err.exit_code(), 2);
    assert!(run.join("mutations.jsonl").exists());
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["complete"], false);
    assert_eq!(manifest["stages"][0]["name"], "mutate");
    assert_eq!(manifest["stages"].as_array().unwrap().len(), 1);
}

#[test]
fn missing_dictionary_fails_before_any_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let config = sandbox(tmp.path());
    fs::remove_file(tmp.path().join("dict/example.tsv")).unwrap();
    let run = tmp.path().join("run");
    let err = run_pipeline(&options(&config, &run)).unwrap_err();
    assert!(matches!(err, Error::Io { .. }), "{err:?}");
    assert_eq!(err.exit_code(), 2);
    assert!(tree(&run).is_empty());
}

#[test]
fn config_errors_exit_with_usage_code() {
    let tmp = tempfile::tempdir().unwrap();
    let config = sandbox(tmp.path());
    let text = fs::read_to_string(&config).unwrap();
    for (edit, needle) in [
        (text.replace("dictionary = ", "# dictionary = "), "dictionary"),
        (text.replace("\"bias-first\"", "\"oracle\""), "oracle"),
        (text.replace("seed = 42", "seed = 42\ncolour = 1"), "colour"),
        (
            text + "\n[[pairings]]\ntarget = \"finma-sim\"\nreference = \"nobody\"\n",
            "nobody",
        ),
    ] {
        fs::write(&config, &edit).unwrap();
        let err = run_pipeline(&options(&config, &tmp.path().join("run"))).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err:?}");
        assert!(err.to_string().contains(needle), "{err}");
        assert_eq!(err.exit_code(), 1);
    }
}

#[test]
fn flag_seed_overrides_config_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let config = fixture("pipeline.toml");
    let run = tmp.path().join("run");
    let outcome = run_pipeline(&PipelineOptions {
        seed: Some(7),
        repetitions: Some(5),
        ..options(&config, &run)
    })
    .unwrap();
    assert_eq!(outcome.manifest.seed, 7);
    let bench: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run.join("bench/finma-sim__finbert-sim.json")).unwrap()).unwrap();
    assert_eq!(bench["base_seed"], 7);
    assert_eq!(bench["repetitions"], 5);
}

#[test]
fn deleted_output_regenerates_its_stage_and_dependents_only() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    let config = fixture("pipeline.toml");
    let first = run_pipeline(&options(&config, &run)).unwrap();
    fs::remove_file(run.join("models/finma-sim/shifts.jsonl")).unwrap();
    let second = run_pipeline(&options(&config, &run)).unwrap();
    assert_eq!(second.stages_run, ["metrics", "separation", "prioritize", "report"]);
    assert_eq!(second.stages_reused, ["mutate", "ingest", "detect", "overlap"]);
    assert_eq!(first.manifest.stages, second.manifest.stages);
}
