#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

pub fn workspace() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../..")
        .canonicalize()
        .unwrap()
}

pub fn fixture(rel: &str) -> PathBuf {
    workspace().join("fixtures").join(rel)
}

pub fn golden_run_dir() -> PathBuf {
    fixture("golden/run")
}

pub fn blessing() -> bool {
    std::env::var("BIASLENS_BLESS").is_ok_and(|v| v == "1")
}

/// Files under `dir`, relative and `/`-separated, sorted.
pub fn tree(dir: &Path) -> Vec<String> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<String>) {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let rel = path.strip_prefix(root).unwrap();
                out.push(
                    rel.components()
                        .map(|c| c.as_os_str().to_string_lossy())
                        .collect::<Vec<_>>()
                        .join("/"),
                );
            }
        }
    }
    let mut out = Vec::new();
    if dir.exists() {
        walk(dir, dir, &mut out);
    }
    out.sort();
    out
}

/// Run-dir files that carry timestamps or invocation details.
pub fn volatile(rel: &str) -> bool {
    rel.ends_with(".meta.json")
}

pub fn manifest_without_invocation(path: &Path) -> serde_json::Value {
    let mut v: serde_json::Value = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
    v.as_object_mut().unwrap().remove("invocation");
    v
}

/// Compares a run directory against the golden copy, or refreshes the
/// golden copy when `BIASLENS_BLESS=1`.
pub fn check_against_golden(actual: &Path, golden: &Path) -> Vec<String> {
    let files: Vec<String> = tree(actual).into_iter().filter(|f| !volatile(f)).collect();
    if blessing() {
        if golden.exists() {
            fs::remove_dir_all(golden).unwrap();
        }
        for f in &files {
            let dst = golden.join(f);
            fs::create_dir_all(dst.parent().unwrap()).unwrap();
            if f == "manifest.json" {
                let v = manifest_without_invocation(&actual.join(f));
                fs::write(&dst, serde_json::to_string_pretty(&v).unwrap() + "\n").unwrap();
            } else {
                fs::copy(actual.join(f), dst).unwrap();
            }
        }
        return Vec::new();
    }

    let mut problems = Vec::new();
    let expected = tree(golden);
    if expected != files {
        problems.push(format!("file list differs: expected {expected:?}, got {files:?}"));
    }
    for f in files.iter().filter(|f| expected.contains(f)) {
        let (a, g) = (actual.join(f), golden.join(f));
        let same = if f == "manifest.json" {
            manifest_without_invocation(&a) == manifest_without_invocation(&g)
        } else {
            fs::read(&a).unwrap() == fs::read(&g).unwrap()
        };
        if !same {
            problems.push(format!("{f} differs from golden"));
        }
    }
    problems
}
