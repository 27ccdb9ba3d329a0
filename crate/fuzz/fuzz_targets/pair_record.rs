#![no_main]

use decompkit::dataset::parse_pair_record;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|line: &str| {
    let _ = parse_pair_record(line);
});
