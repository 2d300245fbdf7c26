#![no_main]

use capqual_core::scoring::BackendConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(config) = toml::from_str::<BackendConfig>(text) {
        let _ = config.validate();
    }
});
