#![no_main]

use decompkit::tokenizer::{train, Side, TokenizerMode};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|input: (&str, &str)| {
    let (corpus, probe) = input;
    if corpus.len() > 2048 {
        return;
    }
    let lines: Vec<&str> = corpus.lines().collect();
    for mode in [TokenizerMode::Bpe, TokenizerMode::Char] {
        if let Ok(model) = train(&lines, 400, mode, Side::Source) {
            let seq = model.encode(probe);
            assert_eq!(model.decode(&seq).unwrap(), probe);
            assert!(model.digits_are_atomic());
        }
    }
});
