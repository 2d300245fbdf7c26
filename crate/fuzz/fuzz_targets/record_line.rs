#![no_main]

use capqual_core::codec::{canonical_serialize, parse_record};
use capqual_core::{AnnotationRecord, EnhancedPair, RawPair, SftRecord};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(line) = std::str::from_utf8(data) else { return };
    // Anything accepted must survive a canonical round trip.
    if let Ok(r) = parse_record::<AnnotationRecord>(line) {
        let bytes = canonical_serialize(&r);
        let back: AnnotationRecord = parse_record(std::str::from_utf8(&bytes).unwrap()).unwrap();
        assert_eq!(back, r);
    }
    let _ = parse_record::<RawPair>(line);
    let _ = parse_record::<EnhancedPair>(line);
    let _ = parse_record::<SftRecord>(line);
});
