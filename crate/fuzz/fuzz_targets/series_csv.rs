#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(series) = fiberlink::scenario::parse_series_csv(text) {
            assert!(series.len() >= 2);
            assert!(series.fs() > 0.0);
        }
    }
});
