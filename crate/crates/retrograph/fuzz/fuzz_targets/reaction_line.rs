#![no_main]

//! Reaction-file lines are untrusted input; parsing must never panic.

use libfuzzer_sys::fuzz_target;
use retrograph::pipeline::parse_reaction_line;

fuzz_target!(|data: &[u8]| {
    if data.len() > 512 {
        return;
    }
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = parse_reaction_line(text);
    }
});
