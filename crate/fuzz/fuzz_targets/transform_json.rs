#![no_main]

use crowdalign::transform_tree::TransformSpec;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    if let Ok(s) = TransformSpec::from_json(text, 30.0) {
        assert_eq!(TransformSpec::from_json(&s.to_json(), 30.0).unwrap(), s);
    }
});
