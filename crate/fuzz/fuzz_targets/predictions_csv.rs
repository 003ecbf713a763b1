#![no_main]

use deepocta::metrics::parse_predictions_csv;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(rows) = parse_predictions_csv(text, "fuzz") {
        for r in rows {
            assert!(r.class < r.probs.len());
        }
    }
});
