//! Binary model decoder: untrusted bytes must never panic, over-allocate, or
//! produce a model that fails to re-encode and decode.

#![no_main]

use libfuzzer_sys::fuzz_target;
use magmap::model_io::{decode_model, encode_model};

fuzz_target!(|data: &[u8]| {
    if let Ok(map) = decode_model(data) {
        let bytes = encode_model(&map);
        decode_model(&bytes).expect("re-encoded model must decode");
    }
});
