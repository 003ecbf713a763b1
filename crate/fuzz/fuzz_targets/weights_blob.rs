#![no_main]

use deepocta::model_zoo::decode_weights;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(tensors) = decode_weights(data) {
        for t in &tensors {
            assert_eq!(t.shape.iter().product::<usize>(), t.data.len());
        }
    }
});
