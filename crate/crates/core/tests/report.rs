mod common;

use std::fs;

use biaslens::report::{render_report, AuditReport, BenchmarkOutcome, Formats};
use common::{golden_run_dir, tree};

fn golden_report() -> AuditReport {
    AuditReport::from_run_dir(&golden_run_dir()).unwrap()
}

#[test]
fn rendering_is_deterministic_and_matches_golden() {
    let report = golden_report();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    render_report(&report, &Formats::all(), a.path()).unwrap();
    render_report(&report, &Formats::all(), b.path()).unwrap();
    let files: Vec<String> = tree(a.path())
        .into_iter()
        .filter(|f| !f.ends_with(".meta.json"))
        .collect();
    assert_eq!(files, tree(&golden_run_dir().join("report")));
    for f in &files {
        let bytes = fs::read(a.path().join(f)).unwrap();
        assert_eq!(bytes, fs::read(b.path().join(f)).unwrap(), "{f}");
        assert_eq!(bytes, fs::read(golden_run_dir().join("report").join(f)).unwrap(), "{f}");
    }
    assert!(a.path().join("report.meta.json").exists());
}

#[test]
fn format_selection_limits_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let written = render_report(&golden_report(), &"csv".parse().unwrap(), tmp.path()).unwrap();
    assert!(!written.is_empty());
    assert!(written.iter().all(|p| p.extension().unwrap() == "csv"));
}

#[test]
fn svgs_parse_and_carry_one_curve_per_strategy() {
    let report = golden_report();
    let tmp = tempfile::tempdir().unwrap();
    render_report(&report, &"svg".parse().unwrap(), tmp.path()).unwrap();
    let mut curve_files = 0;
    for f in tree(tmp.path()).iter().filter(|f| f.ends_with(".svg")) {
        let text = fs::read_to_string(tmp.path().join(f)).unwrap();
        let doc = roxmltree::Document::parse(&text).unwrap_or_else(|e| panic!("{f}: {e}"));
        assert_eq!(doc.root_element().tag_name().name(), "svg");
        if f.starts_with("curves_") {
            curve_files += 1;
            let polylines: Vec<_> = doc
                .descendants()
                .filter(|n| n.has_tag_name("polyline") && n.attribute("class") == Some("curve"))
                .collect();
            let bench = report
                .benchmarks
                .iter()
                .find_map(|b| match b {
                    BenchmarkOutcome::Defined(r)
                        if f == &format!("curves_{}__{}.svg", r.target_model, r.reference_model) =>
                    {
                        Some(r)
                    }
                    _ => None,
                })
                .unwrap();
            assert_eq!(polylines.len(), bench.strategies.len());
            for line in polylines {
                let ys: Vec<f64> = line
                    .attribute("points")
                    .unwrap()
                    .split_whitespace()
                    .map(|p| p.split(',').nth(1).unwrap().parse().unwrap())
                    .collect();
                assert_eq!(ys.len(), 21);
                // Detection never decreases, so screen y never increases.
                assert!(ys.windows(2).all(|w| w[1] <= w[0]));
            }
        } else {
            let boxes = doc
                .descendants()
                .filter(|n| n.attribute("class") == Some("box"))
                .count();
            assert_eq!(boxes, 4, "{f}");
        }
    }
    assert_eq!(curve_files, 3);
}

#[test]
fn csv_headers_are_stable() {
    let dir = golden_run_dir().join("report");
    let header = |name: &str| {
        fs::read_to_string(dir.join(name))
            .unwrap()
            .lines()
            .next()
            .unwrap()
            .to_string()
    };
    assert_eq!(header("bias_grid_finma-sim.csv"), "kind,axis,revealing,total,ratio");
    assert_eq!(
        header("benchmark.csv"),
        "target,reference,strategy,budget,bd_percent,delta_percent,p_value,a12"
    );
    assert_eq!(header("overlap_regions.csv"), "models,count");
}

#[test]
fn report_json_uses_sorted_keys_and_fixed_decimals() {
    let text = fs::read_to_string(golden_run_dir().join("report/report.json")).unwrap();
    let value: serde_json::Value = serde_json::from_str(&text).unwrap();
    let keys: Vec<&String> = value.as_object().unwrap().keys().collect();
    let mut sorted = keys.clone();
    sorted.sort();
    assert_eq!(keys, sorted);
    assert!(text.contains("\"toolkit_version\""));
    assert!(text.contains("\"input_digests\""));
    assert!(!text.contains("generated_at"));
}
