#![no_main]

use std::sync::OnceLock;

use libfuzzer_sys::fuzz_target;
use patclass::corpus::parse_corpus;
use patclass::synth::synthetic_taxonomy;
use patclass::Taxonomy;

fn taxonomy() -> &'static Taxonomy {
    static TAX: OnceLock<Taxonomy> = OnceLock::new();
    TAX.get_or_init(|| synthetic_taxonomy(&[2, 4, 8]).expect("valid sizes"))
}

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(records) = parse_corpus(text, "fuzz", taxonomy()) {
            for r in &records {
                assert_eq!(r.labels.len(), taxonomy().depth());
            }
        }
    }
});
