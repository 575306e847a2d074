#![no_main]

use libfuzzer_sys::fuzz_target;
use stcorr::eval::PredictionFile;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = PredictionFile::from_json(text);
    }
});
