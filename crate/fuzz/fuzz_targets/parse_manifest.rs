#![no_main]

use carma_credit::dataio::parse_manifest;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(entries) = parse_manifest(data) {
        assert!(entries.iter().all(|e| !e.entity.is_empty()));
    }
});
