//! Replays the fuzz seed corpora, plus cheap mutations of every seed,
//! through each parser. Nothing may panic.

use std::fs;
use std::path::Path;

use patclass::corpus::{parse_corpus, parse_vectors};
use patclass::persist::from_checkpoint;
use patclass::synth::synthetic_taxonomy;
use patclass::{ModelConfig, SynthSpec, Taxonomy};
use patclass_tensor::Checkpoint;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn seeds(target: &str) -> Vec<Vec<u8>> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<Vec<u8>> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| fs::read(e.unwrap().path()).unwrap())
        .collect();
    assert!(!out.is_empty(), "no seeds for {target}");
    out.sort();
    out
}

/// Seeds, their truncations and single-byte corruptions.
fn variants(target: &str) -> Vec<Vec<u8>> {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut all = Vec::new();
    for s in seeds(target) {
        for cut in [0, 1, s.len() / 3, s.len() / 2, s.len().saturating_sub(1)] {
            all.push(s[..cut.min(s.len())].to_vec());
        }
        for _ in 0..40 {
            let mut m = s.clone();
            if !m.is_empty() {
                let i = rng.random_range(0..m.len());
                m[i] = rng.random();
            }
            all.push(m);
        }
        all.push(s);
    }
    all
}

fn texts(target: &str) -> Vec<String> {
    variants(target)
        .into_iter()
        .map(|v| String::from_utf8_lossy(&v).into_owned())
        .collect()
}

#[test]
fn corpus_lines() {
    let tax = synthetic_taxonomy(&[2, 4, 8]).unwrap();
    let ok = texts("corpus_jsonl")
        .iter()
        .filter(|t| parse_corpus(t, "seed", &tax).is_ok())
        .count();
    assert!(ok > 0);
}

#[test]
fn taxonomy_files() {
    for t in texts("taxonomy_json") {
        if let Ok(tax) = Taxonomy::parse(&t) {
            for level in 1..=tax.depth() {
                for index in 0..tax.level_size(level) {
                    tax.neighbor_sets(patclass::CodeRef { level, index }).unwrap();
                }
            }
        }
    }
}

#[test]
fn vector_files() {
    for t in texts("word_vectors") {
        if let Ok((dim, rows)) = parse_vectors(&t) {
            assert!(rows.iter().all(|(_, v)| v.len() == dim));
        }
    }
}

#[test]
fn config_and_spec_files() {
    for t in texts("model_config") {
        if let Ok(c) = ModelConfig::parse(&t) {
            let _ = c.validate(3);
        }
    }
    for t in texts("synth_spec") {
        let _ = SynthSpec::parse(&t);
    }
}

#[test]
fn checkpoints() {
    let all = variants("checkpoint");
    let mut intact = 0;
    for v in &all {
        if let Ok(ck) = Checkpoint::decode(v) {
            if from_checkpoint(&ck).is_ok() {
                intact += 1;
            }
        }
    }
    // The original seed always loads; most corruptions must not.
    assert!(intact >= 1 && intact < all.len() / 2, "{intact} of {}", all.len());
}
