#![no_main]

use libfuzzer_sys::fuzz_target;
use stcorr::tensor::stt;

fuzz_target!(|data: &[u8]| {
    if let Ok(t) = stt::decode(data) {
        assert_eq!(stt::encode(&t), data);
    }
});
