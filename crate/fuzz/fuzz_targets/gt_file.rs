#![no_main]

use libfuzzer_sys::fuzz_target;
use stcorr::benchmark::GtFile;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(gt) = GtFile::from_json(text) {
        if let Some(p) = gt.pairs.first() {
            assert!(gt.find(&p.src, &p.tgt).is_some());
        }
    }
});
