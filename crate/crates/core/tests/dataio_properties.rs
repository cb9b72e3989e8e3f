use carma_credit::dataio::{
    impute_missing, load_csv, missing_runs, parse_series, save_csv, to_log_returns, ColumnSpec,
    RawSeries, MAX_GAP,
};
use chrono::{Days, NaiveDate};
use proptest::prelude::*;

fn series(values: Vec<Option<f64>>) -> RawSeries {
    let start = NaiveDate::from_ymd_opt(2002, 1, 2).unwrap();
    RawSeries {
        entity: "x".into(),
        dates: (0..values.len())
            .map(|k| start + Days::new(k as u64))
            .collect(),
        imputed: vec![false; values.len()],
        values,
    }
}

/// Mean of the five observed values nearest by index, ties to the earlier one.
fn window_mean(values: &[Option<f64>], i: usize) -> (f64, f64, f64) {
    let mut observed: Vec<usize> = (0..values.len()).filter(|&j| values[j].is_some()).collect();
    observed.sort_by_key(|&j| (j.abs_diff(i), j));
    let window: Vec<f64> = observed
        .iter()
        .take(5)
        .map(|&j| values[j].unwrap())
        .collect();
    let mean = window.iter().sum::<f64>() / window.len() as f64;
    let lo = window.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = window.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (mean, lo, hi)
}

/// Series of 60 to 120 positive values with short, sparse gaps.
fn gappy() -> impl Strategy<Value = Vec<Option<f64>>> {
    (
        60usize..120,
        proptest::collection::vec((0usize..120, 1usize..4), 0..6),
        any::<u64>(),
    )
        .prop_map(|(n, gaps, salt)| {
            let mut v: Vec<Option<f64>> = (0..n)
                .map(|k| Some(50.0 + ((k as u64 * 2654435761 + salt) % 1000) as f64 / 10.0))
                .collect();
            for (start, len) in gaps {
                for slot in v.iter_mut().skip(start % n).take(len) {
                    *slot = None;
                }
            }
            v
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn imputation_matches_window_oracle(values in gappy()) {
        let s = series(values.clone());
        prop_assume!(s.missing_count() * 5 < s.len());
        prop_assume!(missing_runs(&s).iter().all(|&(_, len)| len <= MAX_GAP));
        let out = impute_missing(&s).unwrap();
        for (i, v) in values.iter().enumerate() {
            match v {
                Some(x) => {
                    prop_assert_eq!(out.values[i], Some(*x));
                    prop_assert!(!out.imputed[i]);
                }
                None => {
                    let (mean, lo, hi) = window_mean(&values, i);
                    let got = out.values[i].unwrap();
                    prop_assert!((got - mean).abs() < 1e-12, "index {}: {} vs {}", i, got, mean);
                    prop_assert!(lo <= got && got <= hi);
                    prop_assert!(out.imputed[i]);
                }
            }
        }
        let again = impute_missing(&out).unwrap();
        prop_assert_eq!(again, out);
    }

    #[test]
    fn save_then_parse_is_identity(values in gappy()) {
        let s = series(values);
        let mut buf = Vec::new();
        save_csv(&s, &mut buf).unwrap();
        let back = parse_series(buf.as_slice(), "x", &ColumnSpec::default()).unwrap();
        prop_assert_eq!(back, s);
    }

    #[test]
    fn log_returns_reconstruct_log_levels(levels in proptest::collection::vec(1e-3f64..1e4, 2..200)) {
        let s = series(levels.iter().map(|&x| Some(x)).collect());
        let r = to_log_returns(&s).unwrap();
        prop_assert_eq!(r.len(), levels.len() - 1);
        let mut acc = levels[0].ln();
        for (k, x) in r.iter().enumerate() {
            acc += x;
            prop_assert!((acc - levels[k + 1].ln()).abs() < 1e-12);
        }
    }
}

#[test]
fn imputed_series_survives_a_file_round_trip() {
    let mut values: Vec<Option<f64>> = (0..80).map(|k| Some(100.0 + k as f64)).collect();
    values[10] = None;
    values[11] = None;
    let out = impute_missing(&series(values)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.csv");
    save_csv(&out, std::fs::File::create(&path).unwrap()).unwrap();
    let back = load_csv(&path, &ColumnSpec::default()).unwrap();
    assert_eq!(back, out);
    assert!(back.imputed[10] && back.imputed[11] && !back.imputed[12]);
}
