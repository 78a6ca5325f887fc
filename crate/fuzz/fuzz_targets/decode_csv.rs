#![no_main]

use ffsim::timetag::decode_csv;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(stream) = decode_csv(data) {
        let mut out = Vec::new();
        stream.encode_csv(&mut out).unwrap();
        assert_eq!(decode_csv(out.as_slice()).unwrap().records(), stream.records());
    }
});
