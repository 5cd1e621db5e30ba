#![no_main]

use libfuzzer_sys::fuzz_target;
use patclass::corpus::parse_vectors;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok((dim, rows)) = parse_vectors(text) {
            assert!(rows.iter().all(|(_, v)| v.len() == dim));
        }
    }
});
