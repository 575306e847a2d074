#![no_main]

use libfuzzer_sys::fuzz_target;
use stcorr::benchmark::synth::SynthConfig;

// Validation only: a valid config can describe an arbitrarily large dataset.
fuzz_target!(|data: &[u8]| {
    if let Ok(cfg) = serde_json::from_slice::<SynthConfig>(data) {
        let _ = cfg.validate();
    }
});
