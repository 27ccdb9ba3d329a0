#![no_main]

use decompkit::lang::{builtin_profiles, preprocess};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    for profile in builtin_profiles() {
        let once = preprocess(text, &profile);
        if !once.suspect() {
            let twice = preprocess(&once.text, &profile);
            assert_eq!(twice.text, once.text);
        }
    }
});
