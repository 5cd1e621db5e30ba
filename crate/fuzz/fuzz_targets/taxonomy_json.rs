#![no_main]

use libfuzzer_sys::fuzz_target;
use patclass::Taxonomy;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(tax) = Taxonomy::parse(text) else { return };
    // Every accepted taxonomy must answer neighbourhood queries.
    for level in 1..=tax.depth() {
        for index in 0..tax.level_size(level) {
            let _ = tax.neighbor_sets(patclass::CodeRef { level, index });
        }
    }
});
