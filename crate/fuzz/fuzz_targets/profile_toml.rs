#![no_main]

use decompkit::lang::{preprocess, LanguageProfile};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    if let Ok(profile) = LanguageProfile::from_toml(text) {
        let again = LanguageProfile::from_toml(&profile.to_toml()).expect("serialized profile reparses");
        assert_eq!(again, profile);
        let _ = preprocess("int x = 1; /* c */ \"s\" // t\n", &profile);
    }
});
