#![no_main]

//! The tensor container decoder must never panic on arbitrary bytes.

use libfuzzer_sys::fuzz_target;
use retrograph::numcore::read_store;

fuzz_target!(|data: &[u8]| {
    let _ = read_store(data);
});
