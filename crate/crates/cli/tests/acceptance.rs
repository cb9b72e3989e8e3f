//! Acceptance criteria 1 to 9, one PASS/FAIL line each. Run a subset with
//! `cargo test --test acceptance -- 3 8`.

mod common;

use std::time::{Duration, Instant};

use rand::Rng;

use carma_credit::ats;
use carma_credit::carma::{self, CarmaSpec};
use carma_credit::credit::{
    self, DiscountCurve, IntensityPath, PathConstruction, RecoveryParams, SpreadPathSettings,
};
use carma_credit::inference::{self, FitConfig, RecoveryModel};
use carma_credit::{seeded_rng, InitialState, LevyDriver};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

// ---- independent oracles ----

type Mat = Vec<Vec<f64>>;

fn matmul(x: &Mat, y: &Mat) -> Mat {
    let n = x.len();
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| (0..n).map(|k| x[i][k] * y[k][j]).sum())
                .collect()
        })
        .collect()
}

/// Scaling and squaring with a 30-term Taylor series.
fn expm(m: &Mat) -> Mat {
    let n = m.len();
    let norm = m
        .iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let s = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as i32
    } else {
        0
    };
    let scaled: Mat = m
        .iter()
        .map(|r| r.iter().map(|v| v / 2f64.powi(s)).collect())
        .collect();
    let mut result: Mat = (0..n)
        .map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect())
        .collect();
    let mut term = result.clone();
    for k in 1..30 {
        term = matmul(&term, &scaled)
            .into_iter()
            .map(|r| r.into_iter().map(|v| v / k as f64).collect())
            .collect();
        for i in 0..n {
            for j in 0..n {
                result[i][j] += term[i][j];
            }
        }
    }
    for _ in 0..s {
        result = matmul(&result, &result);
    }
    result
}

fn companion(a: &[f64]) -> Mat {
    let p = a.len();
    let mut m = vec![vec![0.0; p]; p];
    for i in 0..p - 1 {
        m[i][i + 1] = 1.0;
    }
    for j in 0..p {
        m[p - 1][j] = -a[p - 1 - j];
    }
    m
}

/// `b' e^{Au} e` with `e` the last unit vector.
fn kernel_oracle(a: &[f64], b: &[f64], u: f64) -> f64 {
    let p = a.len();
    let au: Mat = companion(a)
        .into_iter()
        .map(|r| r.into_iter().map(|v| v * u).collect())
        .collect();
    let e = expm(&au);
    (0..p).map(|i| b[i] * e[i][p - 1]).sum()
}

/// Monic polynomial coefficients `(a_1..a_p)` with the given roots; complex
/// roots are given as `(re, im)` pairs and enter with their conjugates.
fn ar_from_roots(real: &[f64], complex: &[(f64, f64)]) -> Vec<f64> {
    let mut c = vec![1.0];
    let mut mul = |f: &[f64]| {
        let mut next = vec![0.0; c.len() + f.len() - 1];
        for (i, x) in c.iter().enumerate() {
            for (j, y) in f.iter().enumerate() {
                next[i + j] += x * y;
            }
        }
        c = next;
    };
    for &r in real {
        mul(&[1.0, -r]);
    }
    for &(re, im) in complex {
        mul(&[1.0, -2.0 * re, re * re + im * im]);
    }
    c[1..].to_vec()
}

// ---- criteria ----

fn criterion_1() -> Outcome {
    let mut rng = seeded_rng(101);
    let mut worst = 0.0f64;
    let mut specs = 0;
    while specs < 100 {
        let p = if specs % 2 == 0 { 2 } else { 3 };
        let (real, complex): (Vec<f64>, Vec<(f64, f64)>) = if rng.random_bool(0.5) {
            (
                (0..p).map(|_| -rng.random_range(0.1..3.0)).collect(),
                vec![],
            )
        } else {
            let pair = (-rng.random_range(0.1..2.0), rng.random_range(0.2..3.0));
            (
                (0..p - 2).map(|_| -rng.random_range(0.1..3.0)).collect(),
                vec![pair],
            )
        };
        let mut all: Vec<(f64, f64)> = real.iter().map(|&r| (r, 0.0)).collect();
        for &(re, im) in &complex {
            all.extend([(re, im), (re, -im)]);
        }
        let distinct = all.iter().enumerate().all(|(i, x)| {
            all[i + 1..]
                .iter()
                .all(|y| ((x.0 - y.0).powi(2) + (x.1 - y.1).powi(2)).sqrt() > 0.05)
        });
        if !distinct {
            continue;
        }
        let a = ar_from_roots(&real, &complex);
        let mut b = vec![0.0; p];
        b[0] = rng.random_range(0.1..3.0);
        b[1] = 1.0;
        let spec = CarmaSpec::new(a.clone(), b.clone()).expect("valid spec");
        let sys = carma::build_system(&spec).expect("system");
        for u in [0.1, 0.5, 1.0, 5.0, 10.0] {
            let g = carma::kernel(&sys, &spec, u).expect("distinct eigenvalues");
            worst = worst.max((g - kernel_oracle(&a, &b, u)).abs());
        }
        specs += 1;
    }
    outcome(
        worst < 1e-10,
        format!("max |g(u) - b'e^(Au)e| = {worst:e} over 100 specs (< 1e-10)"),
    )
}

/// Classical RK4 on `B' = 1 - a B`, `A' = B^2 / 2`.
fn ats_rk4(a: f64, tau: f64, n: usize) -> (f64, f64) {
    let dt = tau / n as f64;
    let f = |b: f64| (1.0 - a * b, 0.5 * b * b);
    let (mut bb, mut aa) = (0.0, 0.0);
    for _ in 0..n {
        let k1 = f(bb);
        let k2 = f(bb + 0.5 * dt * k1.0);
        let k3 = f(bb + 0.5 * dt * k2.0);
        let k4 = f(bb + dt * k3.0);
        bb += dt / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
        aa += dt / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
    }
    (aa, bb)
}

fn criterion_2() -> Outcome {
    let mut rng = seeded_rng(202);
    let mut worst = 0.0f64;
    let mut zero_exact = true;
    for _ in 0..50 {
        let a = rng.random_range(0.1..10.0);
        let sys = carma::build_system(&CarmaSpec::car(vec![a]).expect("spec")).expect("system");
        let zero = ats::affine_coeffs_closed(&sys, 0.0).expect("tau = 0");
        zero_exact &= zero.a_val == 0.0 && zero.b_scalar() == Some(0.0);
        for tau in [0.25, 1.0, 5.0, 10.0] {
            let closed = ats::affine_coeffs_closed(&sys, tau).expect("closed form");
            let library_ode = ats::affine_coeffs_ode(&sys, tau, tau / 1000.0).expect("ode");
            let (oa, ob) = ats_rk4(a, tau, 4000);
            let cb = closed.b_scalar().expect("scalar");
            worst = worst
                .max((closed.a_val - oa).abs())
                .max((cb - ob).abs())
                .max((closed.a_val - library_ode.a_val).abs())
                .max((cb - library_ode.b_scalar().expect("scalar")).abs());
        }
    }
    outcome(
        worst < 1e-8 && zero_exact,
        format!("max closed-form vs RK4 difference {worst:e} (< 1e-8), A(T,T) = B(T,T) = 0 exactly: {zero_exact}"),
    )
}

fn criterion_3() -> Outcome {
    let g = 0.05;
    let modes = [
        RecoveryParams::constant(0.4).expect("valid"),
        RecoveryParams::stochastic(0.0378, -0.0095, 0.637).expect("valid"),
    ];
    let path = IntensityPath::constant(g, 0.01, 1000).expect("path");
    let mut worst = 0.0f64;
    for params in &modes {
        let triangle = (1.0 - params.recovery_rate(g).value) * g;
        for r in [0.0, 0.03, 0.1] {
            let curve = DiscountCurve::new(r).expect("curve");
            let fair = credit::fair_spread(std::slice::from_ref(&path), params, &curve, 0.0, 5.0)
                .expect("spread");
            worst = worst.max((fair.spread - triangle).abs());
        }
    }
    outcome(
        worst < 1e-10,
        format!("max |fair spread - (1 - R) g| = {worst:e} (< 1e-10)"),
    )
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn criterion_4() -> Outcome {
    let spec = CarmaSpec::car(vec![6.0]).expect("spec");
    let driver = LevyDriver::brownian(0.0, 1.0).expect("driver");
    let (mut var_err, mut acf_err) = (Vec::new(), Vec::new());
    for seed in 0..20 {
        let path = carma::simulate(
            &spec,
            &driver,
            1.0,
            2999,
            &InitialState::Stationary,
            &mut seeded_rng(seed),
        )
        .expect("simulation");
        let y = &path.outputs;
        let n = y.len() as f64;
        let mean = y.iter().sum::<f64>() / n;
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let acf = y
            .windows(2)
            .map(|w| (w[0] - mean) * (w[1] - mean))
            .sum::<f64>()
            / (n - 1.0)
            / var;
        var_err.push((var - 1.0 / 12.0).abs() / (1.0 / 12.0));
        acf_err.push((acf - (-6f64).exp()).abs());
    }
    let (v, r) = (median(var_err), median(acf_err));
    outcome(
        v < 0.15 && r < 0.02,
        format!(
            "median relative variance error {v:.4} (< 0.15), median |acf1 - e^-6| {r:.4} (< 0.02)"
        ),
    )
}

fn example_52() -> CarmaSpec {
    CarmaSpec::with_ma(vec![1.39631, 0.05029], &[2.0]).expect("spec")
}

/// Roots of `z^2 + a1 z + a2` as `(re, im)`, ordered by modulus.
fn quadratic_roots(a1: f64, a2: f64) -> [(f64, f64); 2] {
    let disc = a1 * a1 - 4.0 * a2;
    if disc >= 0.0 {
        let s = disc.sqrt();
        let (r1, r2) = ((-a1 + s) / 2.0, (-a1 - s) / 2.0);
        if r1.abs() <= r2.abs() {
            [(r1, 0.0), (r2, 0.0)]
        } else {
            [(r2, 0.0), (r1, 0.0)]
        }
    } else {
        let im = (-disc).sqrt() / 2.0;
        [(-a1 / 2.0, im), (-a1 / 2.0, -im)]
    }
}

fn criterion_5() -> Outcome {
    let spec = example_52();
    let truth = quadratic_roots(spec.a()[0], spec.a()[1]);
    let driver = LevyDriver::compound_poisson(1.0, 0.0, 1.0).expect("driver");
    let (mut small, mut large) = (Vec::new(), Vec::new());
    for rep in 0..50u64 {
        let path = carma::simulate(
            &spec,
            &driver,
            1.0,
            2999,
            &InitialState::Stationary,
            &mut seeded_rng(500 + rep),
        )
        .expect("simulation");
        let cfg = FitConfig {
            seed: rep,
            ..FitConfig::with_orders(2, 1)
        };
        let fit = match inference::fit_carma(&path.outputs, 1.0, &cfg) {
            Ok(f) => f,
            Err(inference::InferenceError::OptimizationFailure { best, .. }) => *best,
            Err(e) => return outcome(false, format!("replication {rep}: {e}")),
        };
        let est = quadratic_roots(fit.spec.a()[0], fit.spec.a()[1]);
        let rel = |i: usize| {
            let (dr, di) = (est[i].0 - truth[i].0, est[i].1 - truth[i].1);
            (dr * dr + di * di).sqrt() / truth[i].0.hypot(truth[i].1)
        };
        small.push(rel(0));
        large.push(rel(1));
    }
    let (s, l) = (median(small), median(large));
    outcome(
        s < 0.25 && l < 0.25,
        format!("median relative root error: small root {s:.4}, large root {l:.4} (< 0.25), 50 replications"),
    )
}

fn srr_paths(seed: u64) -> credit::CreditPaths {
    let driver = LevyDriver::compound_poisson(1.0, 0.0, 5e-4).expect("driver");
    let params = RecoveryParams::stochastic(0.0378, -0.0095, 0.637).expect("params");
    let mut settings = SpreadPathSettings::new(100.0, 1.0, 3000);
    settings.construction = PathConstruction::IntensityPrimary;
    credit::generate_spread_path(
        &example_52(),
        &driver,
        &params,
        &settings,
        &mut seeded_rng(seed),
    )
    .expect("paths")
}

fn criterion_6() -> Outcome {
    let mut srr = 0;
    let mut gains = Vec::new();
    for rep in 0..50u64 {
        let paths = srr_paths(600 + rep);
        let cfg = FitConfig {
            seed: rep,
            ..FitConfig::default()
        };
        let cmp = match inference::compare_models(&paths.spread, &cfg) {
            Ok(c) => c,
            Err(e) => return outcome(false, format!("replication {rep}: {e}")),
        };
        srr += usize::from(cmp.preferred == RecoveryModel::Srr);
        gains.push(cmp.srr.loglik - cmp.crr.loglik);
    }
    let gain = median(gains);
    outcome(
        srr >= 40,
        format!("SRR preferred by BIC in {srr} of 50 (>= 40); median loglik gain of SRR over CRR {gain:.3}"),
    )
}

fn criterion_7() -> Outcome {
    let truth = [0.0378, -0.0095, 0.637];
    let mut covered = [0usize; 3];
    let mut joint = 0;
    for rep in 0..100u64 {
        let paths = srr_paths(700 + rep);
        let cfg = FitConfig {
            seed: rep,
            ..FitConfig::default()
        };
        let report = match inference::fit_srr(&paths.spread, &cfg) {
            Ok(r) => r,
            Err(e) => return outcome(false, format!("replication {rep}: {e}")),
        };
        let ci = report
            .beta_ci
            .expect("stochastic report has intervals")
            .as_array();
        let hits: Vec<bool> = ci.iter().zip(truth).map(|(c, t)| c.contains(t)).collect();
        for (k, h) in hits.iter().enumerate() {
            covered[k] += usize::from(*h);
        }
        joint += usize::from(hits.iter().all(|h| *h));
    }
    outcome(
        covered.iter().all(|&c| c >= 85),
        format!(
            "coverage out of 100: beta0 {}, beta1 {}, beta2 {} (each >= 85); all three jointly {joint}",
            covered[0], covered[1], covered[2]
        ),
    )
}

fn criterion_8() -> Outcome {
    let n = 100_000;
    let lambda = 0.1;
    let path = IntensityPath::constant(lambda, 0.1, 3000).expect("path");
    let mut rng = seeded_rng(808);
    let mut times: Vec<f64> = (0..n)
        .map(|_| credit::simulate_default_time(&path, &mut rng).unwrap_or(f64::INFINITY))
        .collect();
    times.sort_by(f64::total_cmp);
    let mut d = 0.0f64;
    for (i, &t) in times.iter().enumerate() {
        let f = if t.is_finite() {
            1.0 - (-lambda * t).exp()
        } else {
            1.0
        };
        d = d
            .max((f - i as f64 / n as f64).abs())
            .max(((i + 1) as f64 / n as f64 - f).abs());
    }
    let band = 1.6276 / (n as f64).sqrt();
    outcome(
        d < band,
        format!("Kolmogorov-Smirnov D = {d:.6} (< {band:.6}) on {n} draws"),
    )
}

fn criterion_9() -> Outcome {
    use common::*;
    use std::fs;

    let inputs = tempfile::tempdir().expect("tempdir");
    let sim = |seed: &str, sub: &str| {
        let out = run_in(
            &inputs.path().join(sub),
            &[
                "simulate", "--a1", "6", "--beta0", "0.0378", "--beta1", "-0.0095", "--beta2",
                "0.637", "--n", "300", "--seed", seed,
            ],
        );
        assert_ok(&out);
    };
    sim("1", "s1");
    sim("2", "s2");
    let manifest = inputs.path().join("manifest.csv");
    fs::write(
        &manifest,
        "entity,path\nfirst,s1/spread_srr.csv\nsecond,s2/spread_srr.csv\n",
    )
    .expect("manifest");
    let input = inputs.path().join("s1/spread_srr.csv");
    let (input, manifest) = (
        input.to_str().unwrap().to_string(),
        manifest.to_str().unwrap().to_string(),
    );
    let fast = [
        "--p",
        "1",
        "--q",
        "0",
        "--samples",
        "400",
        "--burn-in",
        "200",
        "--n-starts",
        "3",
        "--seed",
        "5",
    ];

    let mut commands: Vec<Vec<&str>> = vec![
        vec![
            "simulate",
            "--a",
            "1.39631,0.05029",
            "--b",
            "2,1",
            "--beta0",
            "0.0378",
            "--beta1",
            "-0.0095",
            "--beta2",
            "0.637",
            "--n",
            "400",
            "--seed",
            "3",
        ],
        vec!["price", "--bond", "--a1", "2", "--r", "0.04"],
        vec!["price", "--cds", "--paths", "200", "--seed", "3"],
        vec![
            "price", "--cds", "--paths", "50", "--beta0", "0.3", "--beta1", "-1", "--beta2", "0.4",
            "--seed", "3",
        ],
    ];
    let mut fit_crr = vec!["fit", "--model", "crr", "--input", &input];
    fit_crr.extend(fast);
    let mut fit_srr = vec!["fit", "--model", "srr", "--input", &input];
    fit_srr.extend(fast);
    let mut compare = vec!["compare", "--manifest", &manifest];
    compare.extend(fast);
    commands.extend([fit_crr, fit_srr, compare]);

    let mut differing = Vec::new();
    for cmd in &commands {
        let (d1, d2) = (
            tempfile::tempdir().expect("tempdir"),
            tempfile::tempdir().expect("tempdir"),
        );
        let (o1, o2) = (run_in(d1.path(), cmd), run_in(d2.path(), cmd));
        if !o1.status.success() || !o2.status.success() {
            return outcome(
                false,
                format!("`{}` failed: {}", cmd.join(" "), stderr(&o1)),
            );
        }
        let (f1, f2) = (files(d1.path()), files(d2.path()));
        if f1.is_empty() || f1 != f2 || o1.stdout != o2.stdout {
            differing.push(cmd[..2].join(" "));
        }
    }
    outcome(
        differing.is_empty(),
        if differing.is_empty() {
            format!("{} command runs reproduced byte for byte", commands.len())
        } else {
            format!("outputs differ for: {}", differing.join("; "))
        },
    )
}

fn main() {
    let criteria: [(u32, &str, Duration, fn() -> Outcome); 9] = [
        (1, "kernel identity", Duration::from_secs(5), criterion_1),
        (2, "ATS oracle", Duration::from_secs(10), criterion_2),
        (
            3,
            "credit-triangle reduction",
            Duration::from_secs(1),
            criterion_3,
        ),
        (
            4,
            "second-order simulation fidelity",
            Duration::from_secs(30),
            criterion_4,
        ),
        (
            5,
            "parameter recovery",
            Duration::from_secs(600),
            criterion_5,
        ),
        (
            6,
            "SRR preferred by BIC",
            Duration::from_secs(1800),
            criterion_6,
        ),
        (7, "MCMC coverage", Duration::from_secs(3600), criterion_7),
        (
            8,
            "default-time sampler",
            Duration::from_secs(5),
            criterion_8,
        ),
        (9, "CLI determinism", Duration::from_secs(600), criterion_9),
    ];
    let selected: Vec<u32> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut failed = 0;
    for (id, name, limit, run) in criteria {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let Outcome { pass, detail } = run();
        let elapsed = start.elapsed();
        let in_time = elapsed <= limit;
        let ok = pass && in_time;
        failed += usize::from(!ok);
        println!(
            "criterion {id} {}: {name}: {detail}; {:.1} s (limit {} s{})",
            if ok { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            limit.as_secs(),
            if in_time { "" } else { ", exceeded" }
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
