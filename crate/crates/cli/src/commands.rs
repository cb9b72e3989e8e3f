//! Command runners. Each resolves its configuration, computes, and writes
//! files whose comment header records the tool version, resolved config and
//! seed.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{Days, NaiveDate};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use carma_credit::ats;
use carma_credit::carma::{self, CarmaSpec};
use carma_credit::credit::{
    self, CreditError, DiscountCurve, IntensityPath, RecoveryParams, SpreadPath, SpreadPathSettings,
};
use carma_credit::dataio::{self, ColumnSpec, DataError};
use carma_credit::inference::{self, FitConfig, FitReport, ModelComparison, RecoveryModel};
use carma_credit::{seeded_rng, InitialState, LevyDriver};

use crate::args::{CompareArgs, FitArgs, PriceArgs, SimulateArgs};
use crate::config::{
    read_config_file, resolve, to_json_line, BondConfig, CdsConfig, ColumnConfig, CompareConfig,
    FitCommandConfig, SimulateConfig,
};
use crate::error::CliError;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Comment lines that open every CSV output.
pub fn header(command: &str, config_json: &str, seed: Option<u64>) -> String {
    let mut s = format!("# carma-cds {VERSION} {command}\n# config: {config_json}\n");
    if let Some(seed) = seed {
        let _ = writeln!(s, "# seed: {seed}");
    }
    s
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<PathBuf, CliError> {
    fs::create_dir_all(dir).map_err(|e| {
        CliError::Data(format!(
            "cannot create output directory {}: {e}",
            dir.display()
        ))
    })?;
    let path = dir.join(name);
    fs::write(&path, contents)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))?;
    Ok(path)
}

fn positive(field: &str, x: f64) -> Result<(), CliError> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(CliError::usage(field, format!("must be > 0, got {x}")))
    }
}

fn nonzero(field: &str, n: usize) -> Result<(), CliError> {
    if n > 0 {
        Ok(())
    } else {
        Err(CliError::usage(field, "must be > 0"))
    }
}

fn warn(msg: &str) {
    eprintln!("warning: {msg}");
}

/// Mean, variance and lag-1 autocorrelation.
fn summary(y: &[f64]) -> (f64, f64, f64) {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let cov1 = y
        .windows(2)
        .map(|w| (w[0] - mean) * (w[1] - mean))
        .sum::<f64>()
        / n;
    (mean, var, cov1 / var)
}

fn validate_recovery(params: &RecoveryParams) -> Result<RecoveryParams, CliError> {
    match *params {
        RecoveryParams::Constant { rate } => RecoveryParams::constant(rate),
        RecoveryParams::Stochastic {
            beta0,
            beta1,
            beta2,
        } => RecoveryParams::stochastic(beta0, beta1, beta2),
    }
    .map_err(|e| CliError::usage("recovery", e))
}

pub fn simulate(args: &SimulateArgs) -> Result<(), CliError> {
    let text = read_config_file(args.config.as_deref())?;
    let cfg: SimulateConfig = resolve(text.as_deref(), args.overrides())?;
    args.check(&cfg.model.a)?;
    let spec = cfg.model.spec()?;
    positive("h", cfg.h)?;
    positive("c0", cfg.c0)?;
    positive("tenor", cfg.tenor)?;
    nonzero("n", cfg.n)?;

    let mut modes = Vec::new();
    if let Some(rate) = cfg.crr {
        modes.push((
            "crr",
            RecoveryParams::constant(rate).map_err(|e| CliError::usage("crr", e))?,
        ));
    }
    if let Some(srr) = &cfg.srr {
        modes.push(("srr", srr.params()?));
    }
    for (_, params) in &modes {
        if let Some(w) = params.range_warning() {
            warn(&w);
        }
    }

    let head = header("simulate", &to_json_line(&cfg), Some(cfg.seed));
    let mut settings = SpreadPathSettings::new(cfg.c0, cfg.h, cfg.n);
    settings.tenor = cfg.tenor;
    settings.construction = cfg.construction;

    let mut state = None;
    let mut out = String::new();
    for (name, params) in &modes {
        // Every mode replays the same seed, so all modes share one state path.
        let paths = credit::generate_spread_path(
            &spec,
            &cfg.driver,
            params,
            &settings,
            &mut seeded_rng(cfg.seed),
        )
        .map_err(|e| match e {
            CreditError::NotInvertible(_) => CliError::usage(name, e),
            other => other.into(),
        })?;
        write_file(
            &args.out_dir,
            &format!("spread_{name}.csv"),
            &spread_csv(&head, &paths.spread),
        )?;
        write_file(
            &args.out_dir,
            &format!("intensity_{name}.csv"),
            &intensity_csv(&head, &paths.intensity, params),
        )?;
        let recovery: Vec<f64> = paths
            .intensity
            .gamma
            .iter()
            .map(|&g| params.recovery_rate(g).value)
            .collect();
        let r_min = recovery.iter().copied().fold(f64::INFINITY, f64::min);
        let r_max = recovery.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let outside = recovery
            .iter()
            .filter(|r| !(**r > 0.0 && **r < 1.0))
            .count();
        if outside > 0 {
            warn(&format!(
                "{name}: recovery outside (0, 1) at {outside} of {} points",
                recovery.len()
            ));
        }
        let _ = writeln!(out, "{name}: R min {r_min} max {r_max}");
        state.get_or_insert(paths.state);
    }
    let state = match state {
        Some(s) => s,
        None => carma::simulate(
            &spec,
            &cfg.driver,
            cfg.h,
            cfg.n,
            &InitialState::Stationary,
            &mut seeded_rng(cfg.seed),
        )?,
    };
    let mut body = head.clone();
    let mut buf = Vec::new();
    state.write_csv(&mut buf).expect("write to memory");
    body.push_str(&String::from_utf8(buf).expect("utf8"));
    write_file(&args.out_dir, "state.csv", &body)?;

    let (mean, var, acf1) = summary(&state.outputs);
    println!("Y: mean {mean} variance {var} lag1_autocorrelation {acf1}");
    print!("{out}");
    Ok(())
}

/// Calendar date attached to grid point `k` of simulated premia, so that the
/// files load as dated series.
pub fn synthetic_date(k: usize) -> NaiveDate {
    NaiveDate::from_ymd_opt(2002, 1, 1).expect("valid date") + Days::new(k as u64)
}

fn spread_csv(head: &str, spread: &SpreadPath) -> String {
    let mut s = head.to_string();
    s.push_str("date,premium,time\n");
    for (k, c) in spread.premium.iter().enumerate() {
        let _ = writeln!(s, "{},{c},{}", synthetic_date(k), spread.time(k));
    }
    s
}

fn intensity_csv(head: &str, path: &IntensityPath, params: &RecoveryParams) -> String {
    let mut s = head.to_string();
    s.push_str("time,gamma,recovery\n");
    for (k, g) in path.gamma.iter().enumerate() {
        let _ = writeln!(s, "{},{g},{}", path.time(k), params.recovery_rate(*g).value);
    }
    s
}

pub fn price(args: &PriceArgs) -> Result<(), CliError> {
    let text = read_config_file(args.config.as_deref())?;
    if args.bond {
        let cfg: BondConfig = resolve(text.as_deref(), args.bond_overrides()?)?;
        args.check(&cfg.model.a)?;
        price_bond(&cfg, &args.out_dir)
    } else {
        let cfg: CdsConfig = resolve(text.as_deref(), args.cds_overrides()?)?;
        args.check(&cfg.model.a)?;
        price_cds(&cfg, &args.out_dir)
    }
}

fn price_bond(cfg: &BondConfig, out_dir: &Path) -> Result<(), CliError> {
    let spec = cfg.model.spec()?;
    let sys = carma::build_system(&spec)?;
    if sys.p() != 1 {
        return Err(ats::AtsError::Unsupported(format!(
            "bond pricing needs a CAR(1) short rate, got p = {}",
            sys.p()
        ))
        .into());
    }
    positive("tau_max", cfg.tau_max)?;
    nonzero("n_tau", cfg.n_tau)?;
    if let Some(step) = cfg.ode_step {
        positive("ode_step", step)?;
    }
    let mut s = header("price --bond", &to_json_line(cfg), None);
    s.push_str("tau,A,B,price,yield\n");
    for k in 0..=cfg.n_tau {
        let tau = cfg.tau_max * k as f64 / cfg.n_tau as f64;
        let coeffs = match cfg.ode_step {
            // Short maturities get at least ten integration steps.
            Some(step) => ats::affine_coeffs_ode(&sys, tau, step.min(tau / 10.0))?,
            None => ats::affine_coeffs_closed(&sys, tau)?,
        };
        let quote = ats::bond_price(&coeffs, cfg.short_rate)?;
        let b = coeffs.b_scalar().expect("scalar system");
        let _ = writeln!(
            s,
            "{tau},{},{b},{},{}",
            coeffs.a_val, quote.price, quote.yield_
        );
    }
    write_file(out_dir, "bond.csv", &s)?;
    println!("priced {} maturities up to {}", cfg.n_tau + 1, cfg.tau_max);
    Ok(())
}

/// Intensity paths `gamma0 exp(int_0^t Y du)`, one random stream per path.
fn intensity_ensemble(
    spec: &CarmaSpec,
    driver: &LevyDriver,
    cfg: &CdsConfig,
    n_steps: usize,
) -> Result<Vec<IntensityPath>, CliError> {
    (0..cfg.n_paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = seeded_rng(cfg.seed);
            rng.set_stream(i as u64);
            let state = carma::simulate(
                spec,
                driver,
                cfg.h,
                n_steps,
                &InitialState::Stationary,
                &mut rng,
            )?;
            let mut gamma = Vec::with_capacity(n_steps + 1);
            let mut cumulative = 0.0;
            gamma.push(cfg.gamma0);
            for k in 1..=n_steps {
                cumulative += carma::integrated_output(&state, k - 1, k)?;
                gamma.push(cfg.gamma0 * cumulative.exp());
            }
            Ok(IntensityPath::new(0.0, cfg.h, gamma)?)
        })
        .collect()
}

fn price_cds(cfg: &CdsConfig, out_dir: &Path) -> Result<(), CliError> {
    let spec = cfg.model.spec()?;
    let params = validate_recovery(&cfg.recovery)?;
    if let Some(w) = params.range_warning() {
        warn(&w);
    }
    positive("gamma0", cfg.gamma0)?;
    positive("h", cfg.h)?;
    positive("tenor", cfg.tenor)?;
    nonzero("n_paths", cfg.n_paths)?;
    let steps = cfg.tenor / cfg.h;
    if (steps - steps.round()).abs() > 1e-9 * steps.max(1.0) {
        return Err(CliError::usage(
            "h",
            format!("tenor {} is not a multiple of h = {}", cfg.tenor, cfg.h),
        ));
    }
    let n_steps = steps.round() as usize;
    let curve =
        DiscountCurve::new(cfg.discount_rate).map_err(|e| CliError::usage("discount_rate", e))?;

    let ensemble = if cfg.constant_gamma {
        vec![IntensityPath::constant(cfg.gamma0, cfg.h, n_steps)?]
    } else {
        intensity_ensemble(&spec, &cfg.driver, cfg, n_steps)?
    };
    let fair = credit::fair_spread(&ensemble, &params, &curve, 0.0, cfg.tenor)?;
    let seed = (!cfg.constant_gamma).then_some(cfg.seed);
    let mut s = header("price --cds", &to_json_line(cfg), seed);
    s.push_str("fair_spread,std_error,n_paths\n");
    let se = fair.std_error.map(|x| x.to_string()).unwrap_or_default();
    let _ = writeln!(s, "{},{se},{}", fair.spread, fair.n_paths);
    write_file(out_dir, "cds.csv", &s)?;
    match fair.std_error {
        Some(se) => println!(
            "fair spread {} (standard error {se}, {} paths)",
            fair.spread, fair.n_paths
        ),
        None => println!("fair spread {}", fair.spread),
    }
    Ok(())
}

/// Load, check, impute and wrap one premium series.
fn load_spreads(
    path: &Path,
    columns: ColumnConfig,
    h: f64,
    tenor: f64,
) -> Result<(String, SpreadPath), CliError> {
    let raw = dataio::load_csv(
        path,
        &ColumnSpec {
            date: columns.date,
            value: columns.value,
        },
    )?;
    raw.check_fit_length()?;
    let series = dataio::impute_missing(&raw)?;
    if series.imputed.iter().any(|&b| b) {
        let n = series.imputed.iter().filter(|&&b| b).count();
        warn(&format!("{}: imputed {n} missing values", series.entity));
    }
    let values = series.complete_values().ok_or_else(|| {
        CliError::Data(format!(
            "{}: missing values remain after imputation",
            series.entity
        ))
    })?;
    let spreads = SpreadPath::new(0.0, h, values, tenor)
        .map_err(|e| CliError::Data(format!("{}: {e}", series.entity)))?;
    Ok((series.entity, spreads))
}

#[derive(Serialize)]
struct RunInfo<'a, C: Serialize> {
    tool: String,
    command: &'a str,
    config: &'a C,
    seed: u64,
}

fn run_info<'a, C: Serialize>(command: &'a str, config: &'a C, seed: u64) -> RunInfo<'a, C> {
    RunInfo {
        tool: format!("carma-cds {VERSION}"),
        command,
        config,
        seed,
    }
}

pub fn fit(args: &FitArgs) -> Result<(), CliError> {
    let text = read_config_file(args.config.as_deref())?;
    let cfg: FitCommandConfig = resolve(text.as_deref(), args.overrides())?;
    cfg.fit.validate().map_err(|e| CliError::usage("fit", e))?;
    positive("h", cfg.h)?;
    positive("tenor", cfg.tenor)?;
    let (stem, spreads) = load_spreads(&args.input, cfg.columns, cfg.h, cfg.tenor)?;
    let entity = args.entity.clone().unwrap_or(stem);

    let report = match cfg.model {
        RecoveryModel::Crr => inference::fit_crr(&spreads, &cfg.fit)?,
        RecoveryModel::Srr => inference::fit_srr(&spreads, &cfg.fit)?,
    };
    for w in &report.warnings {
        warn(&format!("{entity}: {w}"));
    }
    let name = format!("{entity}_{}", cfg.model.name());
    let json = json!({
        "run": run_info("fit", &cfg, cfg.fit.seed),
        "entity": entity,
        "report": report,
    });
    let json = serde_json::to_string_pretty(&json).expect("reports serialize") + "\n";
    write_file(&args.out_dir, &format!("{name}.json"), &json)?;
    let mut csv = header("fit", &to_json_line(&cfg), Some(cfg.fit.seed));
    csv.push_str("company,bic_srr,bic_crr\n");
    csv.push_str(&report.csv_row(&entity));
    csv.push('\n');
    write_file(&args.out_dir, &format!("{name}.csv"), &csv)?;
    print_report(&entity, &report);
    Ok(())
}

fn print_report(entity: &str, report: &FitReport) {
    println!(
        "{entity} {}: loglik {} bic {} converged {}",
        report.model.name(),
        report.loglik,
        report.bic,
        report.converged
    );
    if let Some(spec) = &report.theta_hat {
        println!("  a {:?} b {:?}", spec.a(), spec.b());
    }
    println!("  recovery {:?}", report.beta_hat);
    if let Some(ci) = &report.beta_ci {
        let [b0, b1, b2] = ci.as_array();
        println!(
            "  {} credible intervals: beta0 [{}, {}] beta1 [{}, {}] beta2 [{}, {}]",
            ci.level, b0.lower, b0.upper, b1.lower, b1.upper, b2.lower, b2.upper
        );
    }
}

fn compare_one(path: &Path, cfg: &CompareConfig, seed: u64) -> Result<ModelComparison, CliError> {
    let (_, spreads) = load_spreads(path, cfg.columns, cfg.h, cfg.tenor)?;
    let fit = FitConfig {
        seed,
        ..cfg.fit.clone()
    };
    Ok(inference::compare_models(&spreads, &fit)?)
}

pub fn compare(args: &CompareArgs) -> Result<(), CliError> {
    let text = read_config_file(args.config.as_deref())?;
    let cfg: CompareConfig = resolve(text.as_deref(), args.overrides())?;
    cfg.fit.validate().map_err(|e| CliError::usage("fit", e))?;
    positive("h", cfg.h)?;
    positive("tenor", cfg.tenor)?;
    let manifest = dataio::load_manifest(&args.manifest).map_err(|e| match e {
        DataError::Io { .. } => CliError::Usage(e.to_string()),
        other => other.into(),
    })?;
    if manifest.is_empty() {
        return Err(CliError::usage("manifest", "no entries"));
    }

    let results: Vec<Result<ModelComparison, CliError>> = manifest
        .par_iter()
        .enumerate()
        .map(|(i, entry)| compare_one(&entry.path, &cfg, cfg.fit.seed.wrapping_add(i as u64)))
        .collect();

    let mut csv = header("compare", &to_json_line(&cfg), Some(cfg.fit.seed));
    csv.push_str(ModelComparison::CSV_HEADER);
    csv.push('\n');
    let mut entries = Vec::with_capacity(results.len());
    let (mut fitted, mut srr) = (0usize, 0usize);
    for (entry, result) in manifest.iter().zip(&results) {
        match result {
            Ok(cmp) => {
                fitted += 1;
                srr += usize::from(cmp.preferred == RecoveryModel::Srr);
                csv.push_str(&cmp.csv_row(&entry.entity));
                entries.push(json!({"entity": entry.entity, "comparison": cmp}));
            }
            Err(e) => {
                warn(&format!("{}: {e}", entry.entity));
                let _ = write!(csv, "{},,,failed", entry.entity);
                entries.push(json!({"entity": entry.entity, "error": e.to_string()}));
            }
        }
        csv.push('\n');
    }
    let fraction = if fitted > 0 {
        srr as f64 / fitted as f64
    } else {
        f64::NAN
    };
    let summary =
        format!("srr preferred for {srr} of {fitted} fitted entities (fraction {fraction})");
    let _ = writeln!(csv, "# {summary}");
    write_file(&args.out_dir, "compare.csv", &csv)?;
    let json = json!({"run": run_info("compare", &cfg, cfg.fit.seed), "entities": entries});
    write_file(
        &args.out_dir,
        "compare.json",
        &(serde_json::to_string_pretty(&json).expect("reports serialize") + "\n"),
    )?;
    println!("{summary}");
    if fitted == 0 {
        return Err(CliError::Data("every manifest entry failed".into()));
    }
    Ok(())
}
