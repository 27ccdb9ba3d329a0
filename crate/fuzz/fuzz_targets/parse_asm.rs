#![no_main]

use decompkit::asm::{extract_functions, parse_asm_bytes};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let parsed = parse_asm_bytes(data);
    let ex = extract_functions(&parsed.lines);
    for f in &ex.functions {
        if let Some(span) = f.line_span {
            assert!(span.min <= span.max);
        }
        let _ = f.asm_text(false);
        let _ = f.asm_text(true);
    }
    let _ = ex.diagnostics();
});
