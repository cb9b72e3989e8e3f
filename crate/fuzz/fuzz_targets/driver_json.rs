#![no_main]

use carma_credit::LevyDriver;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(driver) = serde_json::from_slice::<LevyDriver>(data) else {
        return;
    };
    let text = serde_json::to_string(&driver).expect("driver serializes");
    let back: LevyDriver = serde_json::from_str(&text).expect("serialized driver parses");
    assert_eq!(back, driver);
    let _ = driver.moment_rates();
});
