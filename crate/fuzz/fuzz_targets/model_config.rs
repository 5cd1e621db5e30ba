#![no_main]

use libfuzzer_sys::fuzz_target;
use patclass::ModelConfig;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = ModelConfig::parse(text) {
            let _ = cfg.validate(3);
        }
    }
});
