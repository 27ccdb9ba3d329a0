#![no_main]

use decompkit::tokenizer::SubwordModel;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    if let Ok(model) = SubwordModel::from_json(text) {
        let probe = "movl $12, -4(%rbp)\nint main() { return 0; }";
        let seq = model.encode(probe);
        let _ = model.decode(&seq);
    }
});
