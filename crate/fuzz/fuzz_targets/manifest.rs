#![no_main]

use libfuzzer_sys::fuzz_target;
use stcorr::features::FeatureManifest;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = FeatureManifest::from_json(text);
    }
});
