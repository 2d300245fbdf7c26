#![no_main]

use capqual_core::scoring::{validate_response, PromptFamily};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Some((&selector, rest)) = data.split_first() else { return };
    let Ok(reply) = std::str::from_utf8(rest) else { return };
    let family = PromptFamily::ALL[selector as usize % 3];
    if let Ok(valid) = validate_response(family, reply) {
        assert!((1..=10).contains(&valid.scores.overall.score));
    }
});
