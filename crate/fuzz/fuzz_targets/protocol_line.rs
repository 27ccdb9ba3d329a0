#![no_main]

use decompkit::backend::{parse_reply, parse_request};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|line: &str| {
    let _ = parse_request(line);
    let _ = parse_reply(line);
});
