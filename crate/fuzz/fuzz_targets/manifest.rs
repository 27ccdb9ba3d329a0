#![no_main]

use decompkit::dataset::parse_manifest;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    if let Ok(m) = parse_manifest(text) {
        let _ = m.table();
        let _ = m.totals();
    }
});
