#![no_main]

use libfuzzer_sys::fuzz_target;
use stcorr::ants::ParamsDescriptor;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = ParamsDescriptor::from_json(text);
    }
});
