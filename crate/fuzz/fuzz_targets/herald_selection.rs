#![no_main]

use ffsim::feedforward::HeraldSelection;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Some((&max, rest)) = data.split_first() else { return };
    let Ok(text) = std::str::from_utf8(rest) else { return };
    let max_clicks = usize::from(max % 16);
    if let Ok(sel) = HeraldSelection::parse(text, max_clicks) {
        assert!(sel.validate(max_clicks).is_ok());
        assert!(sel.clicks().all(|k| k <= max_clicks));
    }
});
