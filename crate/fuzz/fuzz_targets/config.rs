#![no_main]

use deepocta::config::{resolve, to_config_string, ConfigDoc};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(doc) = ConfigDoc::parse(text, "fuzz") else { return };
    if let Ok(cfg) = resolve(&doc, None) {
        let echo = to_config_string(&cfg);
        let again = ConfigDoc::parse(&echo, "echo").expect("echo parses");
        assert_eq!(resolve(&again, None).expect("echo resolves"), cfg);
    }
});
