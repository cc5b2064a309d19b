#![no_main]

//! Config parsing must never panic, and accepted configs must
//! round-trip through their canonical serialization.

use libfuzzer_sys::fuzz_target;
use retrograph::pipeline::RunConfig;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(config) = RunConfig::parse(text) {
            let echoed = RunConfig::parse(&config.to_text()).expect("canonical text parses");
            assert_eq!(echoed, config);
        }
    }
});
