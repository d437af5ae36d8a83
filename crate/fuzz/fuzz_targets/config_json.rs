#![no_main]

use crowdalign::config::RunConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    if let Ok(c) = RunConfig::from_json(text) {
        assert_eq!(RunConfig::from_json(&c.to_json()).unwrap(), c);
    }
});
