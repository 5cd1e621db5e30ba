#![no_main]

use libfuzzer_sys::fuzz_target;
use patclass::persist::from_checkpoint;
use patclass_tensor::Checkpoint;

fuzz_target!(|data: &[u8]| {
    if let Ok(ckpt) = Checkpoint::decode(data) {
        let _ = from_checkpoint(&ckpt);
    }
});
