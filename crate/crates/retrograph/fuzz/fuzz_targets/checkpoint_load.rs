#![no_main]

//! Checkpoint bytes are untrusted: decoding must never panic or
//! overallocate, whatever the header claims.

use libfuzzer_sys::fuzz_target;
use retrograph::pipeline::load_checkpoint_bytes;

fuzz_target!(|data: &[u8]| {
    let _ = load_checkpoint_bytes(data);
});
