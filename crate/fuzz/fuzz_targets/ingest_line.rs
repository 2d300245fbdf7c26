#![no_main]

use capqual_core::ingest::{parse_line, CorpusFormat};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(line) = std::str::from_utf8(data) else { return };
    for format in [CorpusFormat::LineRecords, CorpusFormat::TabSeparated] {
        if let Ok(Some(pair)) = parse_line(format, 0, 0, line) {
            assert!(!pair.id.is_empty());
        }
    }
});
