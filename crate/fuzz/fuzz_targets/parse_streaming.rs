#![no_main]

use capqual_core::enhance::parse_streaming;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Some((&step, rest)) = data.split_first() else { return };
    let Ok(text) = std::str::from_utf8(rest) else { return };
    let step = step as usize % 17 + 1;
    let chars: Vec<char> = text.chars().collect();
    let pieces: Vec<String> = chars.chunks(step).map(|c| c.iter().collect()).collect();
    // Fragmentation must not change the answer.
    let whole = parse_streaming([text]);
    let split = parse_streaming(&pieces);
    match (whole, split) {
        (Ok(a), Ok(b)) => assert_eq!(a, b),
        (Err(_), Err(_)) => {}
        (a, b) => panic!("fragmentation changed the result: {a:?} vs {b:?}"),
    }
});
