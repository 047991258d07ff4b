//! Deterministic stand-in for a sentiment model, used to build fixtures.
//!
//! Usage: synth_predictions <texts.jsonl> <model_id> <sensitivity> <out.jsonl> [--header]
//!
//! Originals get logits seeded by their text; each mutant perturbs its
//! original's logits by `sensitivity` times model-seeded Gaussian noise.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use biaslens::io::{fnv1a64, read_jsonl};
use biaslens::mutator::TextRecord;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const LABELS: [&str; 3] = ["negative", "neutral", "positive"];

fn normals(seed: u64) -> [f64; 3] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    std::array::from_fn(|_| {
        let (u1, u2): (f64, f64) = (rng.random::<f64>().max(1e-12), rng.random());
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    })
}

fn softmax(z: [f64; 3]) -> [f64; 3] {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e = z.map(|v| (v - m).exp());
    let s: f64 = e.iter().sum();
    e.map(|v| v / s)
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    if args.len() < 5 {
        eprintln!("usage: synth_predictions <texts.jsonl> <model_id> <sensitivity> <out.jsonl> [--header]");
        std::process::exit(1);
    }
    let texts = read_jsonl::<TextRecord>(Path::new(&args[1])).expect("texts");
    let model = &args[2];
    let sensitivity: f64 = args[3].parse().expect("sensitivity");
    let header = args.iter().any(|a| a == "--header");

    let mut out = BufWriter::new(File::create(&args[4]).expect("out"));
    if header {
        writeln!(out, "{}", serde_json::json!({ "model_id": model })).unwrap();
    }
    let mut base = [0.0; 3];
    for (_, rec) in texts {
        let logits = if rec.variant_id.contains('#') {
            let noise = normals(fnv1a64(format!("{model}\u{1f}{}", rec.text).as_bytes()));
            std::array::from_fn(|i| base[i] + sensitivity * noise[i])
        } else {
            let shared = normals(fnv1a64(rec.text.as_bytes()));
            let own = normals(fnv1a64(format!("{model}\u{1e}{}", rec.text).as_bytes()));
            base = std::array::from_fn(|i| 1.5 * shared[i] + 0.5 * own[i]);
            base
        };
        let probs = softmax(logits);
        let argmax = (0..3).fold(0, |b, i| if probs[i] > probs[b] { i } else { b });
        let mut line = serde_json::json!({
            "variant_id": rec.variant_id,
            "label": LABELS[argmax],
            "probs": probs,
        });
        if !header {
            line["model_id"] = serde_json::json!(model);
        }
        writeln!(out, "{line}").unwrap();
    }
}
