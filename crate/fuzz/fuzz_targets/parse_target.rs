#![no_main]

use capqual_core::sft::marker::unescape;
use capqual_core::sft::parse_target;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let _ = parse_target(text);
    let _ = unescape(text);
});
