#![no_main]

use deepocta::model_zoo::parse_meta;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(rec) = parse_meta(text, "fuzz") {
        let again = parse_meta(&rec.to_meta_string(), "echo").expect("meta echo parses");
        assert_eq!(again.weights_sha256, rec.weights_sha256);
    }
});
