#![no_main]

use carma_credit::dataio::{impute_missing, parse_series, save_csv, to_log_returns, ColumnSpec};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(series) = parse_series(data, "fuzz", &ColumnSpec::default()) else {
        return;
    };
    let mut buf = Vec::new();
    save_csv(&series, &mut buf).expect("writing to memory");
    let back = parse_series(buf.as_slice(), "fuzz", &ColumnSpec::default()).expect("saved series parses");
    assert_eq!(back.len(), series.len());
    if let Ok(filled) = impute_missing(&series) {
        let _ = to_log_returns(&filled);
    }
});
