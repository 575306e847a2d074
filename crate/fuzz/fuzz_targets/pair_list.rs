#![no_main]

use libfuzzer_sys::fuzz_target;
use stcorr::benchmark::PairList;

fuzz_target!(|data: &[u8]| {
    if let Ok(list) = serde_json::from_slice::<PairList>(data) {
        let _ = stcorr::benchmark::SetupSpec::preset(&list.setup);
    }
});
