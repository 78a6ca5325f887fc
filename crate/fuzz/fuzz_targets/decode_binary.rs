#![no_main]

use ffsim::timetag::{decode_any, decode_binary};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(stream) = decode_binary(data) {
        // Anything accepted must re-encode to an equivalent stream.
        let again = decode_binary(&stream.to_binary()).unwrap();
        assert_eq!(again.records(), stream.records());
    }
    let _ = decode_any(data);
});
