#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let (cfg, diag) = fiberlink::scenario::parse_config(text);
        assert_eq!(cfg.is_some(), diag.is_valid());
    }
});
