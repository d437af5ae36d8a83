#![no_main]

use crowdalign::netcore::checkpoint::NamedTensors;
use crowdalign::netcore::ModelParams;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(t) = NamedTensors::decode(data) {
        // accepted input re-encodes to itself
        assert_eq!(t.encode(), data);
    }
    let _ = ModelParams::from_bytes(data);
});
