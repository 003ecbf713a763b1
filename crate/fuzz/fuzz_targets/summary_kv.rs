#![no_main]

use deepocta::report::parse_kv;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = parse_kv(text, "fuzz");
    }
});
