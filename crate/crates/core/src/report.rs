//! Audit report assembly and rendering (canonical JSON, CSV tables, SVG charts).
//!
//! Rendered bodies are a pure function of the [`AuditReport`]; the generation
//! time goes to a `report.meta.json` sidecar.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::detector::BiasSummary;
use crate::error::{Error, Result};
use crate::io::{read_json, write_text};
use crate::overlap::OverlapReport;
use crate::prioritizer::BenchmarkResult;
use crate::stats::{BoxSummary, SeparationReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Format {
    Json,
    Csv,
    Svg,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Formats(pub Vec<Format>);

impl Formats {
    pub fn all() -> Self {
        Formats(vec![Format::Json, Format::Csv, Format::Svg])
    }

    pub fn contains(&self, f: Format) -> bool {
        self.0.contains(&f)
    }
}

impl FromStr for Formats {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut out = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let f = match part.to_ascii_lowercase().as_str() {
                "json" => Format::Json,
                "csv" => Format::Csv,
                "svg" => Format::Svg,
                other => return Err(Error::InvalidArgument(format!("unknown report format `{other}`"))),
            };
            if !out.contains(&f) {
                out.push(f);
            }
        }
        if out.is_empty() {
            return Err(Error::InvalidArgument("no report format selected".into()));
        }
        out.sort();
        Ok(Formats(out))
    }
}

/// Benchmark output for one (target, reference) pairing; undefined when the
/// target revealed no bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BenchmarkOutcome {
    Defined(BenchmarkResult),
    Undefined {
        target_model: String,
        reference_model: String,
        undefined: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub toolkit_version: String,
    pub input_digests: BTreeMap<String, String>,
    pub bias_summaries: Vec<BiasSummary>,
    pub overlap: Option<OverlapReport>,
    pub separations: Vec<SeparationReport>,
    pub benchmarks: Vec<BenchmarkOutcome>,
}

#[derive(Deserialize)]
struct ManifestDigests {
    #[serde(default)]
    inputs: BTreeMap<String, String>,
}

fn sorted_json_files(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    Ok(files)
}

impl AuditReport {
    /// Collects stage outputs from a run directory laid out by the pipeline.
    pub fn from_run_dir(run_dir: &Path) -> Result<AuditReport> {
        let manifest = run_dir.join("manifest.json");
        let input_digests = if manifest.exists() {
            read_json::<ManifestDigests>(&manifest)?.inputs
        } else {
            BTreeMap::new()
        };

        let mut summaries = Vec::new();
        let models = run_dir.join("models");
        if models.is_dir() {
            let mut dirs: Vec<PathBuf> = fs::read_dir(&models)
                .map_err(|e| Error::io(&models, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_dir())
                .collect();
            dirs.sort();
            summaries = dirs
                .into_iter()
                .map(|d| d.join("summary.json"))
                .filter(|p| p.exists())
                .collect();
        }
        let overlap = Some(run_dir.join("overlap.json")).filter(|p| p.exists());
        Self::from_parts(
            input_digests,
            &summaries,
            overlap.as_deref(),
            &sorted_json_files(&run_dir.join("separation"))?,
            &sorted_json_files(&run_dir.join("bench"))?,
        )
    }

    /// Assembles a report from explicit stage output files.
    pub fn from_parts(
        input_digests: BTreeMap<String, String>,
        summaries: &[PathBuf],
        overlap: Option<&Path>,
        separations: &[PathBuf],
        benchmarks: &[PathBuf],
    ) -> Result<AuditReport> {
        Ok(AuditReport {
            toolkit_version: crate::VERSION.to_string(),
            input_digests,
            bias_summaries: summaries.iter().map(|p| read_json(p)).collect::<Result<_>>()?,
            overlap: overlap.map(read_json).transpose()?,
            separations: separations.iter().map(|p| read_json(p)).collect::<Result<_>>()?,
            benchmarks: benchmarks.iter().map(|p| read_json(p)).collect::<Result<_>>()?,
        })
    }
}

/// Fixed float rendering: six decimals, or six-decimal scientific notation for
/// magnitudes below 1e-4 so small p-values do not collapse to zero.
pub fn format_float(x: f64) -> String {
    let x = if x == 0.0 { 0.0 } else { x };
    if x != 0.0 && x.abs() < 1e-4 {
        format!("{x:.6e}")
    } else {
        format!("{x:.6}")
    }
}

fn write_canonical(out: &mut String, value: &Value, indent: usize) {
    let pad = "  ".repeat(indent + 1);
    let close = "  ".repeat(indent);
    match value {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => match (n.as_u64(), n.as_i64()) {
            (Some(u), _) if !n.is_f64() => out.push_str(&u.to_string()),
            (_, Some(i)) if !n.is_f64() => out.push_str(&i.to_string()),
            _ => out.push_str(&format_float(n.as_f64().unwrap_or(f64::NAN))),
        },
        Value::String(s) => out.push_str(&serde_json::to_string(s).expect("strings serialize")),
        Value::Array(items) if items.is_empty() => out.push_str("[]"),
        Value::Array(items) => {
            out.push_str("[\n");
            for (i, item) in items.iter().enumerate() {
                out.push_str(&pad);
                write_canonical(out, item, indent + 1);
                out.push_str(if i + 1 < items.len() { ",\n" } else { "\n" });
            }
            out.push_str(&close);
            out.push(']');
        }
        Value::Object(map) if map.is_empty() => out.push_str("{}"),
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push_str("{\n");
            for (i, key) in keys.iter().enumerate() {
                out.push_str(&pad);
                out.push_str(&serde_json::to_string(key).expect("strings serialize"));
                out.push_str(": ");
                write_canonical(out, &map[*key], indent + 1);
                out.push_str(if i + 1 < keys.len() { ",\n" } else { "\n" });
            }
            out.push_str(&close);
            out.push('}');
        }
    }
}

/// Sorted keys, two-space indent, fixed float formatting.
pub fn canonical_json<T: Serialize>(value: &T) -> String {
    let value = serde_json::to_value(value).expect("report values serialize");
    let mut out = String::new();
    write_canonical(&mut out, &value, 0);
    out.push('\n');
    out
}

fn opt_float(x: Option<f64>) -> String {
    x.map(format_float).unwrap_or_default()
}

fn csv_string(rows: Vec<Vec<String>>) -> String {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    for row in rows {
        w.write_record(&row).expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8 csv")
}

pub(crate) fn file_stem(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

pub fn bias_grid_csv(summary: &BiasSummary) -> String {
    let mut rows = vec![vec!["kind", "axis", "revealing", "total", "ratio"]
        .into_iter()
        .map(String::from)
        .collect()];
    for c in &summary.cells {
        rows.push(vec![
            c.kind.to_string(),
            c.axis.to_string(),
            c.revealing.to_string(),
            c.total.to_string(),
            format_float(c.ratio),
        ]);
    }
    for t in &summary.totals {
        rows.push(vec![
            t.kind.to_string(),
            "all".into(),
            t.revealing.to_string(),
            t.total.to_string(),
            format_float(t.ratio),
        ]);
    }
    if let Some(h) = &summary.hidden_intersectional {
        rows.push(vec![
            "hidden-intersectional".into(),
            "all".into(),
            h.hidden.to_string(),
            h.intersectional_flips.to_string(),
            opt_float(h.ratio),
        ]);
    }
    csv_string(rows)
}

pub fn overlap_csv(report: &OverlapReport) -> String {
    let mut rows = vec![vec!["models".to_string(), "count".to_string()]];
    for r in &report.regions {
        rows.push(vec![r.models.join("&"), r.count.to_string()]);
    }
    csv_string(rows)
}

pub fn separation_csv(reports: &[SeparationReport]) -> String {
    let mut rows = vec![[
        "target",
        "reference",
        "metric",
        "group",
        "n",
        "median",
        "q1",
        "q3",
        "whisker_low",
        "whisker_high",
        "p_value",
        "a12",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect::<Vec<_>>()];
    for rep in reports {
        for m in &rep.metrics {
            for (group, summary) in [("flipped", &m.flipped), ("non_flipped", &m.non_flipped)] {
                let mut row = vec![
                    rep.target_model.clone(),
                    rep.reference_model.clone(),
                    m.metric.clone(),
                    group.into(),
                ];
                match summary {
                    Some(b) => row.extend([
                        b.n.to_string(),
                        format_float(b.median),
                        format_float(b.q1),
                        format_float(b.q3),
                        format_float(b.whisker_low),
                        format_float(b.whisker_high),
                    ]),
                    None => row.extend([
                        "0".to_string(),
                        String::new(),
                        String::new(),
                        String::new(),
                        String::new(),
                        String::new(),
                    ]),
                }
                row.push(opt_float(m.test.as_ref().map(|t| t.p_value)));
                row.push(opt_float(m.effect.map(|e| e.a12)));
                rows.push(row);
            }
        }
    }
    csv_string(rows)
}

pub fn benchmark_csv(outcomes: &[BenchmarkOutcome]) -> String {
    let mut rows = vec![[
        "target",
        "reference",
        "strategy",
        "budget",
        "bd_percent",
        "delta_percent",
        "p_value",
        "a12",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect::<Vec<_>>()];
    for outcome in outcomes {
        if let BenchmarkOutcome::Defined(b) = outcome {
            for s in &b.strategies {
                for h in &s.highlights {
                    rows.push(vec![
                        b.target_model.clone(),
                        b.reference_model.clone(),
                        s.strategy.clone(),
                        format_float(h.budget),
                        format_float(h.bd_percent),
                        format_float(h.delta_percent),
                        opt_float(h.p_value),
                        opt_float(h.a12),
                    ]);
                }
            }
        }
    }
    csv_string(rows)
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

const PALETTE: [&str; 6] = ["#7f7f7f", "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"];
const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;

fn x_of(v: f64) -> f64 {
    LEFT + v * (W - LEFT - RIGHT)
}

fn y_of(v: f64) -> f64 {
    H - BOTTOM - v * (H - TOP - BOTTOM)
}

fn svg_frame(out: &mut String, title: &str, x_label: &str, y_label: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        W / 2.0,
        xml_escape(title)
    );
    let _ = writeln!(
        out,
        r#"<line class="axis" x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="black"/>"#,
        x_of(0.0),
        y_of(0.0),
        x_of(1.0),
        y_of(0.0)
    );
    let _ = writeln!(
        out,
        r#"<line class="axis" x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="black"/>"#,
        x_of(0.0),
        y_of(0.0),
        x_of(0.0),
        y_of(1.0)
    );
    for i in 0..=5 {
        let v = i as f64 / 5.0;
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{v:.1}</text>"#,
            x_of(0.0) - 6.0,
            y_of(v) + 4.0
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        x_of(0.5),
        H - 12.0,
        xml_escape(x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
        y_of(0.5),
        y_of(0.5),
        xml_escape(y_label)
    );
}

/// Line chart of mean detection curves, one polyline per strategy, budget on x.
pub fn detection_curves_svg(bench: &BenchmarkResult) -> String {
    let mut out = String::new();
    svg_frame(
        &mut out,
        &format!(
            "Bias detection: {} guided by {}",
            bench.target_model, bench.reference_model
        ),
        "inference budget (fraction of pairs)",
        "detected bias (fraction)",
    );
    for i in 0..=5 {
        let v = i as f64 / 5.0;
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{v:.1}</text>"#,
            x_of(v),
            y_of(0.0) + 16.0
        );
    }
    for (i, s) in bench.strategies.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let points: Vec<String> = std::iter::once((0.0, 0.0))
            .chain(s.mean_curve.iter().map(|p| (p.budget, p.detected)))
            .map(|(x, y)| format!("{:.2},{:.2}", x_of(x), y_of(y)))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline class="curve" data-strategy="{}" fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            xml_escape(&s.strategy),
            points.join(" ")
        );
        let ly = TOP + 20.0 * i as f64;
        let _ = writeln!(
            out,
            r#"<line x1="{:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            W - RIGHT + 15.0,
            W - RIGHT + 35.0,
            W - RIGHT + 40.0,
            ly + 4.0,
            xml_escape(&s.strategy)
        );
    }
    out.push_str("</svg>\n");
    out
}

fn box_glyph(out: &mut String, b: &BoxSummary, center: f64, label: &str, color: &str) {
    let half = 22.0;
    let _ = writeln!(out, r#"<g class="box" data-group="{}">"#, xml_escape(label));
    let _ = writeln!(
        out,
        r#"<line x1="{center:.2}" y1="{:.2}" x2="{center:.2}" y2="{:.2}" stroke="black"/>"#,
        y_of(b.whisker_low),
        y_of(b.whisker_high)
    );
    for w in [b.whisker_low, b.whisker_high] {
        let _ = writeln!(
            out,
            r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="black"/>"#,
            center - half / 2.0,
            y_of(w),
            center + half / 2.0,
            y_of(w)
        );
    }
    let _ = writeln!(
        out,
        r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{color}" fill-opacity="0.5" stroke="black"/>"#,
        center - half,
        y_of(b.q3),
        2.0 * half,
        (y_of(b.q1) - y_of(b.q3)).max(0.5)
    );
    let _ = writeln!(
        out,
        r#"<line class="median" x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="black" stroke-width="2"/>"#,
        center - half,
        y_of(b.median),
        center + half,
        y_of(b.median)
    );
    let _ = writeln!(
        out,
        r#"<text x="{center:.2}" y="{:.2}" text-anchor="middle">{} (n={})</text>"#,
        y_of(0.0) + 16.0,
        xml_escape(label),
        b.n
    );
    out.push_str("</g>\n");
}

/// Box plots of reference shifts split by the target's flips, one panel per metric.
pub fn separation_svg(report: &SeparationReport) -> String {
    let mut out = String::new();
    svg_frame(
        &mut out,
        &format!("{} shifts by {} flips", report.reference_model, report.target_model),
        "metric / group",
        "value",
    );
    let slots = (report.metrics.len() * 2).max(1) as f64;
    for (mi, m) in report.metrics.iter().enumerate() {
        for (gi, (group, summary, color)) in [
            ("flipped", &m.flipped, "#d62728"),
            ("non-flipped", &m.non_flipped, "#1f77b4"),
        ]
        .into_iter()
        .enumerate()
        {
            let slot = (mi * 2 + gi) as f64;
            let center = x_of((slot + 0.5) / slots);
            if let Some(b) = summary {
                box_glyph(&mut out, b, center, &format!("{} {group}", m.metric), color);
            }
        }
    }
    out.push_str("</svg>\n");
    out
}

fn write_out(dir: &Path, name: &str, body: &str, written: &mut Vec<PathBuf>) -> Result<()> {
    let path = dir.join(name);
    write_text(&path, body)?;
    written.push(path);
    Ok(())
}

/// Writes the requested formats into `out_dir` and returns the written body files.
pub fn render_report(report: &AuditReport, formats: &Formats, out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    if formats.contains(Format::Json) {
        write_out(out_dir, "report.json", &canonical_json(report), &mut written)?;
    }
    if formats.contains(Format::Csv) {
        for s in &report.bias_summaries {
            write_out(
                out_dir,
                &format!("bias_grid_{}.csv", file_stem(&s.model_id)),
                &bias_grid_csv(s),
                &mut written,
            )?;
        }
        if let Some(o) = &report.overlap {
            write_out(out_dir, "overlap_regions.csv", &overlap_csv(o), &mut written)?;
        }
        if !report.separations.is_empty() {
            write_out(
                out_dir,
                "separation.csv",
                &separation_csv(&report.separations),
                &mut written,
            )?;
        }
        if !report.benchmarks.is_empty() {
            write_out(
                out_dir,
                "benchmark.csv",
                &benchmark_csv(&report.benchmarks),
                &mut written,
            )?;
        }
    }
    if formats.contains(Format::Svg) {
        for b in &report.benchmarks {
            if let BenchmarkOutcome::Defined(b) = b {
                let name = format!(
                    "curves_{}__{}.svg",
                    file_stem(&b.target_model),
                    file_stem(&b.reference_model)
                );
                write_out(out_dir, &name, &detection_curves_svg(b), &mut written)?;
            }
        }
        for s in &report.separations {
            let name = format!(
                "separation_{}__{}.svg",
                file_stem(&s.target_model),
                file_stem(&s.reference_model)
            );
            write_out(out_dir, &name, &separation_svg(s), &mut written)?;
        }
    }

    let generated_at = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let meta = serde_json::json!({
        "generated_at_unix": generated_at,
        "toolkit_version": crate::VERSION,
        "files": written.iter().filter_map(|p| p.file_name()).map(|n| n.to_string_lossy().into_owned()).collect::<Vec<_>>(),
    });
    write_text(
        &out_dir.join("report.meta.json"),
        &format!("{}\n", serde_json::to_string_pretty(&meta).expect("meta serializes")),
    )?;
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_have_fixed_formatting() {
        assert_eq!(format_float(0.5), "0.500000");
        assert_eq!(format_float(-0.0), "0.000000");
        assert_eq!(format_float(1.0), "1.000000");
        assert_eq!(format_float(2.5e-34), "2.500000e-34");
    }

    #[test]
    fn canonical_json_sorts_keys() {
        let v = serde_json::json!({"b": 1, "a": [0.25, {"d": null, "c": true}], "e": {}});
        assert_eq!(
            canonical_json(&v),
            "{\n  \"a\": [\n    0.250000,\n    {\n      \"c\": true,\n      \"d\": null\n    }\n  ],\n  \"b\": 1,\n  \"e\": {}\n}\n"
        );
    }

    #[test]
    fn formats_parse() {
        assert_eq!(
            "svg,json".parse::<Formats>().unwrap(),
            Formats(vec![Format::Json, Format::Svg])
        );
        assert!("pdf".parse::<Formats>().is_err());
    }

    #[test]
    fn file_stems_are_safe() {
        assert_eq!(file_stem("org/model v2"), "org_model_v2");
    }
}
