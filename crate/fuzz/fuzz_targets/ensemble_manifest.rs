#![no_main]

use deepocta::inference::parse_ensemble_manifest;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(members) = parse_ensemble_manifest(text, "fuzz") {
        assert!(!members.is_empty());
        assert!(members.iter().all(|(_, w)| *w > 0.0 && w.is_finite()));
    }
});
