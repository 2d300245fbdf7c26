#![no_main]

use capqual_core::enhance::sse::SseDecoder;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Some((&step, rest)) = data.split_first() else { return };
    let mut decoder = SseDecoder::new();
    for chunk in rest.chunks(step as usize % 31 + 1) {
        if decoder.push(chunk).is_err() {
            return;
        }
    }
    let _ = decoder.finish();
});
