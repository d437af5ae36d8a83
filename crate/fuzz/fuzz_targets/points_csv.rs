#![no_main]

use crowdalign::imaging::io::{decode_points, encode_points};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    if let Ok(p) = decode_points(text) {
        assert_eq!(decode_points(&encode_points(&p)).unwrap(), p);
    }
});
