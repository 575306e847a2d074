#![no_main]

use libfuzzer_sys::fuzz_target;
use stcorr::GridShape;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(g) = text.parse::<GridShape>() {
        let again: GridShape = g.to_string().parse().expect("display output parses");
        assert_eq!(again, g);
    }
});
