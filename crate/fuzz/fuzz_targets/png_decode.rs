#![no_main]

use deepocta::{BinaryMask, ImageArray};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(img) = ImageArray::decode_png(data) {
        assert!(img.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
    let _ = BinaryMask::decode_png(data);
});
