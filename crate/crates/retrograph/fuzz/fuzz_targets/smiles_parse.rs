#![no_main]

//! The parser must never panic, and every accepted molecule must
//! round-trip through its canonical form.

use libfuzzer_sys::fuzz_target;
use retrograph::molgraph::{parse_smiles, write_canonical};

fuzz_target!(|data: &[u8]| {
    // bound the input so pathological ring systems stay cheap
    if data.len() > 256 {
        return;
    }
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(mol) = parse_smiles(text) {
        let canon = write_canonical(&mol);
        let back = parse_smiles(&canon).expect("canonical output must parse");
        assert_eq!(write_canonical(&back), canon, "canonical form must be stable");
    }
});
