#![no_main]

use carma_cds_cli::config::{parse_config, BondConfig, CdsConfig, CompareConfig, FitCommandConfig, SimulateConfig};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let _ = parse_config::<SimulateConfig>(text);
    let _ = parse_config::<BondConfig>(text);
    let _ = parse_config::<CdsConfig>(text);
    let _ = parse_config::<FitCommandConfig>(text);
    let _ = parse_config::<CompareConfig>(text);
});
