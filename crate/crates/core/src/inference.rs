//! Gaussian quasi-likelihood of CARMA observations through the Kalman filter,
//! quasi-maximum-likelihood fitting, Metropolis sampling of the recovery
//! parameters and BIC comparison of constant versus stochastic recovery.
//!
//! Observations are `y_k = b'X_k` on a grid of step `h` with the exact
//! transition `X_{k+1} = e^{Ah} X_k + Z_k`. The filter starts from the
//! stationary law and has no observation noise beyond a `1e-10` jitter on the
//! innovation variance.
//!
//! For stochastic recovery the data are premia `C_k`; the model says that the
//! log-returns of the implied intensities `g_k = C^{-1}(C_k)` follow the CARMA
//! law. The quasi-likelihood of the premia therefore carries the Jacobian
//! `- sum_k log(d log C / d log g)(g_k)`, which vanishes for constant recovery.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::carma::{self, CarmaError, CarmaSpec};
use crate::credit::{CreditError, RecoveryParams, SpreadPath};
use crate::levy::MomentRates;
use crate::poly::{self, C64};
use crate::{seeded_rng, SimRng};

/// Added to every innovation variance.
pub const OBSERVATION_JITTER: f64 = 1e-10;
/// Shortest series accepted by [`fit_carma`].
pub const MIN_FIT_LENGTH: usize = 50;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error(transparent)]
    Carma(#[from] CarmaError),
    #[error(transparent)]
    Credit(#[from] CreditError),
    #[error("filter covariance lost positive definiteness at step {iteration} (innovation variance {variance})")]
    Conditioning { iteration: usize, variance: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("unsupported recovery mode: {0}")]
    UnsupportedMode(String),
    #[error("optimization failed: {reason}")]
    OptimizationFailure { reason: String, best: Box<CarmaFit> },
}

type Result<T> = std::result::Result<T, InferenceError>;

// ---------------------------------------------------------------------------
// Kalman filter

/// Kalman gains and innovation variances for a unit variance rate. Neither
/// depends on the data, and innovation variances scale linearly with the
/// variance rate, so one schedule serves every series and every rate.
#[derive(Debug, Clone)]
struct GainSchedule {
    p: usize,
    /// Row-major transition matrix.
    phi: Vec<f64>,
    /// Mean input over one step per unit mean rate.
    drift: Vec<f64>,
    /// Stationary mean per unit mean rate.
    x0: Vec<f64>,
    b: Vec<f64>,
    /// Innovation variances; the last entry is reused once the filter has
    /// reached its steady state.
    s: Vec<f64>,
    /// `phi K_k`, row-major by step.
    g: Vec<f64>,
}

impl GainSchedule {
    fn new(spec: &CarmaSpec, h: f64, n: usize) -> Result<Self> {
        let sys = carma::build_system(spec)?;
        if !sys.is_stationary() {
            return Err(CarmaError::NotStationary(sys.max_real_part()).into());
        }
        let unit = MomentRates {
            mean_rate: 1.0,
            variance_rate: 1.0,
        };
        let moments = carma::stationary_covariance(&sys, spec, unit)?;
        let disc = carma::discretize(&sys, h)?;
        let p = spec.p();
        let b = spec.b_vector();
        let phi = &disc.transition;
        let q = &disc.input_cov;

        let mut s = Vec::new();
        let mut g = Vec::new();
        let mut pk = moments.sigma.clone();
        for k in 0..n.max(1) {
            let pb: DVector<f64> = &pk * &b;
            let sk = b.dot(&pb);
            if !(sk > 0.0 && sk.is_finite()) {
                return Err(InferenceError::Conditioning {
                    iteration: k,
                    variance: sk,
                });
            }
            let gain = phi * (&pb / sk);
            s.push(sk);
            g.extend(gain.iter());
            let filtered: DMatrix<f64> = &pk - &pb * pb.transpose() / sk;
            let next = phi * filtered * phi.transpose() + q;
            let next = (&next + next.transpose()) * 0.5;
            let scale = next.amax().max(f64::MIN_POSITIVE);
            let change = (&next - &pk).amax();
            pk = next;
            if change <= 1e-14 * scale {
                break;
            }
        }
        Ok(GainSchedule {
            p,
            phi: phi.transpose().as_slice().to_vec(),
            drift: disc.input_mean.as_slice().to_vec(),
            x0: moments.mean.as_slice().to_vec(),
            b: b.as_slice().to_vec(),
            s,
            g,
        })
    }

    #[inline]
    fn step(&self, k: usize) -> (f64, &[f64]) {
        let j = k.min(self.s.len() - 1);
        (self.s[j], &self.g[j * self.p..(j + 1) * self.p])
    }

    /// Runs the filter; `sink` receives `(k, prediction, variance)`.
    fn filter(
        &self,
        y: &[f64],
        moments: MomentRates,
        mut sink: impl FnMut(usize, f64, f64),
    ) -> Result<f64> {
        let p = self.p;
        let sig2 = moments.variance_rate;
        let mu = moments.mean_rate;
        let mut x: Vec<f64> = self.x0.iter().map(|v| v * mu).collect();
        let mut next = vec![0.0; p];
        let mut ll = 0.0;
        for (k, &yk) in y.iter().enumerate() {
            let (sk, gk) = self.step(k);
            let pred: f64 = self.b.iter().zip(&x).map(|(b, x)| b * x).sum();
            let var = sig2 * sk;
            let total = var + OBSERVATION_JITTER;
            if !(total > 0.0 && total.is_finite()) {
                return Err(InferenceError::Conditioning {
                    iteration: k,
                    variance: total,
                });
            }
            sink(k, pred, var);
            let v = yk - pred;
            ll -= 0.5 * (LN_2PI + total.ln() + v * v / total);
            for i in 0..p {
                let row = &self.phi[i * p..(i + 1) * p];
                let fx: f64 = row.iter().zip(&x).map(|(a, b)| a * b).sum();
                next[i] = fx + gk[i] * v + self.drift[i] * mu;
            }
            std::mem::swap(&mut x, &mut next);
        }
        Ok(ll)
    }

    /// Log-likelihood of a zero-mean series maximized over the variance rate,
    /// together with that maximizing rate.
    fn concentrated(&self, y: &[f64]) -> (f64, f64) {
        let p = self.p;
        let mut x = vec![0.0; p];
        let mut next = vec![0.0; p];
        let mut quad = 0.0;
        let mut logdet = 0.0;
        for (k, &yk) in y.iter().enumerate() {
            let (sk, gk) = self.step(k);
            let pred: f64 = self.b.iter().zip(&x).map(|(b, x)| b * x).sum();
            let v = yk - pred;
            quad += v * v / sk;
            logdet += sk.ln();
            for i in 0..p {
                let row = &self.phi[i * p..(i + 1) * p];
                next[i] = row.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>() + gk[i] * v;
            }
            std::mem::swap(&mut x, &mut next);
        }
        let n = y.len() as f64;
        let sig2 = (quad / n).max(1e-300);
        (-0.5 * (n * LN_2PI + logdet + n * sig2.ln() + n), sig2)
    }
}

/// One-step predictions of the observation and their variances (without the
/// jitter), alongside the log-likelihood.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutput {
    pub loglik: f64,
    pub predictions: Vec<f64>,
    pub variances: Vec<f64>,
}

fn check_series(spec: &CarmaSpec, y: &[f64], h: f64) -> Result<()> {
    if y.len() < spec.p() + 2 {
        return Err(InferenceError::InvalidArgument(format!(
            "need at least p + 2 = {} observations, got {}",
            spec.p() + 2,
            y.len()
        )));
    }
    if let Some(k) = y.iter().position(|v| !v.is_finite()) {
        return Err(InferenceError::InvalidArgument(format!(
            "observation {k} is not finite"
        )));
    }
    if !(h > 0.0 && h.is_finite()) {
        return Err(InferenceError::InvalidArgument(format!(
            "step h must be > 0, got {h}"
        )));
    }
    Ok(())
}

fn check_moments(moments: MomentRates) -> Result<()> {
    if moments.variance_rate >= 0.0
        && moments.variance_rate.is_finite()
        && moments.mean_rate.is_finite()
    {
        Ok(())
    } else {
        Err(InferenceError::InvalidArgument(format!(
            "driver moments must be finite with variance >= 0, got {moments:?}"
        )))
    }
}

pub fn kalman_filter(
    spec: &CarmaSpec,
    moments: MomentRates,
    y: &[f64],
    h: f64,
) -> Result<FilterOutput> {
    check_series(spec, y, h)?;
    check_moments(moments)?;
    let schedule = GainSchedule::new(spec, h, y.len())?;
    let mut predictions = Vec::with_capacity(y.len());
    let mut variances = Vec::with_capacity(y.len());
    let loglik = schedule.filter(y, moments, |_, m, v| {
        predictions.push(m);
        variances.push(v);
    })?;
    Ok(FilterOutput {
        loglik,
        predictions,
        variances,
    })
}

/// Exact Gaussian log-likelihood of `y_k = b'X_{kh}`.
pub fn kalman_loglik(spec: &CarmaSpec, moments: MomentRates, y: &[f64], h: f64) -> Result<f64> {
    check_series(spec, y, h)?;
    check_moments(moments)?;
    GainSchedule::new(spec, h, y.len())?.filter(y, moments, |_, _, _| {})
}

// ---------------------------------------------------------------------------
// Parameterization

/// Monic polynomial (ascending) with all roots in the open left half-plane:
/// a product of `z^2 + e^{u_0} z + e^{u_1}` factors and, for odd degree, a
/// trailing `z + e^{u}`.
fn stable_poly(u: &[f64]) -> Vec<f64> {
    let mut acc = vec![1.0];
    for chunk in u.chunks(2) {
        let factor: Vec<f64> = match *chunk {
            [c1, c0] => vec![c0.exp(), c1.exp(), 1.0],
            [c0] => vec![c0.exp(), 1.0],
            _ => unreachable!(),
        };
        let mut next = vec![0.0; acc.len() + factor.len() - 1];
        for (i, a) in acc.iter().enumerate() {
            for (j, f) in factor.iter().enumerate() {
                next[i + j] += a * f;
            }
        }
        acc = next;
    }
    acc
}

/// Inverse of [`stable_poly`] for roots with negative real parts.
fn stable_poly_params(roots: &[C64]) -> Option<Vec<f64>> {
    if roots.iter().any(|r| !(r.re < 0.0)) {
        return None;
    }
    let mut quadratics = Vec::new();
    let mut reals: Vec<f64> = Vec::new();
    for r in roots {
        if r.im > 0.0 {
            quadratics.push((-2.0 * r.re, r.norm_sqr()));
        } else if r.im == 0.0 {
            reals.push(r.re);
        }
    }
    reals.sort_by(f64::total_cmp);
    let mut it = reals.chunks_exact(2);
    for pair in &mut it {
        quadratics.push((-(pair[0] + pair[1]), pair[0] * pair[1]));
    }
    let mut u: Vec<f64> = quadratics
        .iter()
        .flat_map(|&(c1, c0)| [c1.ln(), c0.ln()])
        .collect();
    if let [r] = *it.remainder() {
        u.push((-r).ln());
    }
    (u.len() == roots.len() && u.iter().all(|v| v.is_finite())).then_some(u)
}

/// Unconstrained coordinates of stationary, minimum-phase CARMA(p,q) models.
#[derive(Debug, Clone, Copy)]
struct RootParameterization {
    p: usize,
    q: usize,
}

impl RootParameterization {
    fn dim(&self) -> usize {
        self.p + self.q
    }

    fn to_spec(self, u: &[f64]) -> std::result::Result<CarmaSpec, CarmaError> {
        let ar = stable_poly(&u[..self.p]);
        let a: Vec<f64> = (1..=self.p).map(|j| ar[self.p - j]).collect();
        let ma = stable_poly(&u[self.p..]);
        CarmaSpec::with_ma(a, &ma[..self.q])
    }

    fn from_spec(self, spec: &CarmaSpec) -> Option<Vec<f64>> {
        if spec.p() != self.p || spec.q() != self.q {
            return None;
        }
        let mut u = stable_poly_params(&poly::roots_ascending(&spec.ar_polynomial()))?;
        if self.q > 0 {
            u.extend(stable_poly_params(&poly::roots_ascending(
                &spec.ma_polynomial(),
            ))?);
        }
        Some(u)
    }
}

// ---------------------------------------------------------------------------
// Nelder–Mead

#[derive(Debug, Clone)]
struct SimplexResult {
    x: Vec<f64>,
    f: f64,
    iterations: usize,
    converged: bool,
}

/// Nelder–Mead with dimension-adaptive coefficients. Converges when both the
/// spread of function values and the simplex diameter fall below `tol`.
fn nelder_mead(
    f: &dyn Fn(&[f64]) -> f64,
    x0: &[f64],
    step: f64,
    max_iters: usize,
    tol: f64,
) -> SimplexResult {
    let n = x0.len();
    let nf = n as f64;
    let (alpha, gamma, rho, sigma) = (1.0, 1.0 + 2.0 / nf, 0.75 - 0.5 / nf, 1.0 - 1.0 / nf);
    let mut pts: Vec<Vec<f64>> = vec![x0.to_vec()];
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] += step;
        pts.push(x);
    }
    let mut vals: Vec<f64> = pts.iter().map(|x| f(x)).collect();
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iters {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        pts = order.iter().map(|&i| pts[i].clone()).collect();
        vals = order.iter().map(|&i| vals[i]).collect();

        let spread = vals[n] - vals[0];
        let diameter = pts[1..]
            .iter()
            .flat_map(|p| p.iter().zip(&pts[0]).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if vals[0].is_finite() && spread <= tol * (1.0 + vals[0].abs()) && diameter <= tol.sqrt() {
            converged = true;
            break;
        }
        iterations += 1;

        let centroid: Vec<f64> = (0..n)
            .map(|j| pts[..n].iter().map(|p| p[j]).sum::<f64>() / nf)
            .collect();
        let towards = |t: f64| -> Vec<f64> {
            (0..n)
                .map(|j| centroid[j] + t * (pts[n][j] - centroid[j]))
                .collect()
        };
        let xr = towards(-alpha);
        let fr = f(&xr);
        if fr < vals[0] {
            let xe = towards(-alpha * gamma);
            let fe = f(&xe);
            if fe < fr {
                pts[n] = xe;
                vals[n] = fe;
            } else {
                pts[n] = xr;
                vals[n] = fr;
            }
        } else if fr < vals[n - 1] {
            pts[n] = xr;
            vals[n] = fr;
        } else {
            let (xc, fc) = if fr < vals[n] {
                let xc = towards(-alpha * rho);
                let fc = f(&xc);
                (xc, fc)
            } else {
                let xc = towards(rho);
                let fc = f(&xc);
                (xc, fc)
            };
            if fc < vals[n].min(fr) {
                pts[n] = xc;
                vals[n] = fc;
            } else {
                for i in 1..=n {
                    let shrunk: Vec<f64> = (0..n)
                        .map(|j| pts[0][j] + sigma * (pts[i][j] - pts[0][j]))
                        .collect();
                    vals[i] = f(&shrunk);
                    pts[i] = shrunk;
                }
            }
        }
    }
    let best = (0..=n)
        .min_by(|&a, &b| vals[a].total_cmp(&vals[b]))
        .unwrap_or(0);
    SimplexResult {
        x: pts[best].clone(),
        f: vals[best],
        iterations,
        converged,
    }
}

// ---------------------------------------------------------------------------
// Configuration

/// Law of the driving process assumed by the fit. Only its first two moments
/// enter the quasi-likelihood; the kind is carried into reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriverKind {
    #[default]
    Brownian,
    Cpn,
    Nig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    /// Simplex iterations per start.
    pub max_iters: usize,
    /// Random stationary starting points.
    pub n_starts: usize,
    /// Simplex convergence tolerance.
    pub tolerance: f64,
    /// Largest finite-difference log-likelihood gradient, in the optimizer's
    /// coordinates, accepted as a converged maximum.
    pub gradient_tolerance: f64,
    /// Box on the log factor coefficients of the AR and MA polynomials.
    pub parameter_bounds: [f64; 2],
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            max_iters: 4000,
            n_starts: 10,
            tolerance: 1e-10,
            gradient_tolerance: 1e-2,
            parameter_bounds: [-12.0, 8.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McmcConfig {
    pub n_samples: usize,
    pub burn_in: usize,
    /// Random-walk standard deviations for `(beta0, beta1, beta2)`.
    pub proposal_scales: [f64; 3],
    pub credible_level: f64,
    /// Prior support of `beta1` is `(-beta1_bound, 0]`.
    pub beta1_bound: f64,
    /// Starting point of the chain.
    pub initial: [f64; 3],
}

impl Default for McmcConfig {
    fn default() -> Self {
        McmcConfig {
            n_samples: 4000,
            burn_in: 2000,
            proposal_scales: [0.05, 1.0, 0.05],
            credible_level: 0.95,
            beta1_bound: 10.0,
            initial: [0.1, -1.0, 0.4],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub p: usize,
    pub q: usize,
    pub driver_kind: DriverKind,
    pub optimizer: OptimizerConfig,
    pub mcmc: McmcConfig,
    /// Value reported for the constant-recovery model, whose recovery rate is
    /// not identified by premium log-returns.
    pub crr_recovery: f64,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            p: 2,
            q: 1,
            driver_kind: DriverKind::default(),
            optimizer: OptimizerConfig::default(),
            mcmc: McmcConfig::default(),
            crr_recovery: 0.4,
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn with_orders(p: usize, q: usize) -> Self {
        FitConfig {
            p,
            q,
            ..FitConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, reason: String| {
            Err(InferenceError::InvalidArgument(format!(
                "{field}: {reason}"
            )))
        };
        if self.p == 0 || self.q >= self.p {
            return bad(
                "p, q",
                format!("need p >= 1 and q < p, got p = {}, q = {}", self.p, self.q),
            );
        }
        let o = &self.optimizer;
        if o.n_starts == 0 || o.max_iters == 0 {
            return bad("optimizer", "n_starts and max_iters must be >= 1".into());
        }
        if !(o.tolerance > 0.0) || !(o.gradient_tolerance > 0.0) {
            return bad("optimizer", "tolerances must be > 0".into());
        }
        if !(o.parameter_bounds[0] < o.parameter_bounds[1]) {
            return bad(
                "optimizer.parameter_bounds",
                format!("{:?} is empty", o.parameter_bounds),
            );
        }
        let m = &self.mcmc;
        if !(m.credible_level > 0.0 && m.credible_level < 1.0) {
            return bad(
                "mcmc.credible_level",
                format!("must lie in (0, 1), got {}", m.credible_level),
            );
        }
        if m.proposal_scales
            .iter()
            .any(|s| !(*s > 0.0 && s.is_finite()))
        {
            return bad("mcmc.proposal_scales", "must be finite and > 0".into());
        }
        if !(m.beta1_bound > 0.0 && m.beta1_bound.is_finite()) {
            return bad(
                "mcmc.beta1_bound",
                format!("must be > 0, got {}", m.beta1_bound),
            );
        }
        if !(self.crr_recovery < 1.0 && self.crr_recovery.is_finite()) {
            return bad(
                "crr_recovery",
                format!("must be finite and < 1, got {}", self.crr_recovery),
            );
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// QMLE

/// Fitted CARMA parameters.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CarmaFit {
    pub spec: CarmaSpec,
    pub moments: MomentRates,
    pub loglik: f64,
    pub n_obs: usize,
    pub converged: bool,
    pub iterations: usize,
    pub warnings: Vec<String>,
}

fn stream_rng(seed: u64, stream: u64) -> SimRng {
    let mut rng = seeded_rng(seed);
    rng.set_stream(stream);
    rng
}

/// Quasi-maximum-likelihood fit of CARMA(p,q) to a zero-mean series.
///
/// The variance rate is profiled out analytically, and the simplex runs over
/// log factor coefficients of the AR and MA polynomials, so every iterate is
/// stationary and minimum-phase.
pub fn fit_carma(y: &[f64], h: f64, config: &FitConfig) -> Result<CarmaFit> {
    fit_carma_from(y, h, config, None)
}

/// As [`fit_carma`], adding `warm` to the random starting points.
pub fn fit_carma_from(
    y: &[f64],
    h: f64,
    config: &FitConfig,
    warm: Option<&CarmaSpec>,
) -> Result<CarmaFit> {
    config.validate()?;
    if y.len() < MIN_FIT_LENGTH {
        return Err(InferenceError::InvalidArgument(format!(
            "need at least {MIN_FIT_LENGTH} observations, got {}",
            y.len()
        )));
    }
    if let Some(k) = y.iter().position(|v| !v.is_finite()) {
        return Err(InferenceError::InvalidArgument(format!(
            "observation {k} is not finite"
        )));
    }
    if !(h > 0.0 && h.is_finite()) {
        return Err(InferenceError::InvalidArgument(format!(
            "step h must be > 0, got {h}"
        )));
    }
    let param = RootParameterization {
        p: config.p,
        q: config.q,
    };
    let opt = &config.optimizer;
    let [lo, hi] = opt.parameter_bounds;
    let objective = |u: &[f64]| -> f64 {
        if u.iter().any(|v| !(*v >= lo && *v <= hi)) {
            return f64::INFINITY;
        }
        let Ok(spec) = param.to_spec(u) else {
            return f64::INFINITY;
        };
        match GainSchedule::new(&spec, h, y.len()) {
            Ok(s) => {
                let ll = s.concentrated(y).0;
                if ll.is_finite() {
                    -ll
                } else {
                    f64::INFINITY
                }
            }
            Err(_) => f64::INFINITY,
        }
    };

    let mut starts: Vec<Option<Vec<f64>>> = (0..opt.n_starts).map(|_| None).collect();
    if let Some(u) = warm.and_then(|s| param.from_spec(s)) {
        starts.push(Some(u.iter().map(|v| v.clamp(lo, hi)).collect()));
    }
    let runs: Vec<SimplexResult> = starts
        .into_par_iter()
        .enumerate()
        .map(|(i, start)| {
            let x0 = start.unwrap_or_else(|| {
                let mut rng = stream_rng(config.seed, i as u64);
                let mut x = random_start(param.dim(), &mut rng);
                for _ in 0..100 {
                    if objective(&x).is_finite() {
                        break;
                    }
                    x = random_start(param.dim(), &mut rng);
                }
                x
            });
            nelder_mead(&objective, &x0, 0.5, opt.max_iters, opt.tolerance)
        })
        .collect();
    let n_converged = runs.iter().filter(|r| r.converged).count();
    let best = runs
        .iter()
        .min_by(|a, b| a.f.total_cmp(&b.f))
        .cloned()
        .ok_or_else(|| InferenceError::InvalidArgument("no starting points".into()))?;
    if !best.f.is_finite() {
        return Err(InferenceError::InvalidArgument(
            "quasi-likelihood is not finite at any starting point".into(),
        ));
    }
    let polish = nelder_mead(&objective, &best.x, 0.05, opt.max_iters, opt.tolerance);
    let result = if polish.f <= best.f {
        polish.clone()
    } else {
        best.clone()
    };

    let spec = param.to_spec(&result.x)?;
    let schedule = GainSchedule::new(&spec, h, y.len())?;
    let (_, sig2) = schedule.concentrated(y);
    let moments = MomentRates {
        mean_rate: 0.0,
        variance_rate: sig2,
    };
    let loglik = schedule.filter(y, moments, |_, _, _| {})?;

    let mut warnings = Vec::new();
    let sample_var = y.iter().map(|v| v * v).sum::<f64>() / y.len() as f64;
    if sig2 <= 1e-12 * sample_var.max(f64::MIN_POSITIVE) || sample_var == 0.0 {
        warnings.push(format!(
            "variance rate {sig2:e} is near zero; the series looks degenerate"
        ));
    }
    let grad = max_abs_gradient(&objective, &result.x, 1e-5, opt.parameter_bounds);
    let mut converged = polish.converged && n_converged > 0;
    if !(grad <= opt.gradient_tolerance) {
        converged = false;
        warnings.push(format!(
            "largest log-likelihood gradient {grad:e} exceeds tolerance {:e}",
            opt.gradient_tolerance
        ));
    }
    if result
        .x
        .iter()
        .any(|v| (v - lo).abs() < 1e-6 || (v - hi).abs() < 1e-6)
    {
        warnings.push("estimate lies on the parameter bounds".into());
    }
    let fit = CarmaFit {
        spec,
        moments,
        loglik,
        n_obs: y.len(),
        converged,
        iterations: runs.iter().map(|r| r.iterations).sum::<usize>() + polish.iterations,
        warnings,
    };
    if n_converged == 0 && !polish.converged {
        return Err(InferenceError::OptimizationFailure {
            reason: format!("none of {} starts converged", runs.len()),
            best: Box::new(fit),
        });
    }
    Ok(fit)
}

fn random_start<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
    (0..dim).map(|_| rng.random_range(-4.0..2.0)).collect()
}

/// Largest central-difference derivative over coordinates at least `step`
/// away from the box; coordinates on the box are constrained, not stationary.
fn max_abs_gradient(f: &dyn Fn(&[f64]) -> f64, x: &[f64], step: f64, bounds: [f64; 2]) -> f64 {
    let mut worst = 0.0f64;
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        if x[i] - step < bounds[0] || x[i] + step > bounds[1] {
            continue;
        }
        xp[i] = x[i] + step;
        let up = f(&xp);
        xp[i] = x[i] - step;
        let down = f(&xp);
        xp[i] = x[i];
        worst = worst.max(((up - down) / (2.0 * step)).abs());
    }
    worst
}

/// `-2 loglik + k log n`.
pub fn bic(loglik: f64, k: usize, n: usize) -> Result<f64> {
    if k == 0 {
        return Err(InferenceError::InvalidArgument("k must be >= 1".into()));
    }
    if n < 2 {
        return Err(InferenceError::InvalidArgument(format!(
            "n must be >= 2, got {n}"
        )));
    }
    Ok(-2.0 * loglik + k as f64 * (n as f64).ln())
}

/// Free CARMA parameters: `p` AR coefficients, `q` MA coefficients and the
/// driver variance rate.
pub fn carma_param_count(p: usize, q: usize) -> usize {
    p + q + 1
}

// ---------------------------------------------------------------------------
// Recovery parameters

/// Quasi-likelihood of a premium path as a function of the recovery
/// parameters, with the CARMA parameters held fixed.
pub struct ProfileLikelihood<'a> {
    premium: &'a [f64],
    schedule: GainSchedule,
    moments: MomentRates,
    gamma: Vec<f64>,
    returns: Vec<f64>,
}

impl<'a> ProfileLikelihood<'a> {
    pub fn new(spreads: &'a SpreadPath, spec: &CarmaSpec, moments: MomentRates) -> Result<Self> {
        let n = spreads.premium.len();
        if n < spec.p() + 3 {
            return Err(InferenceError::InvalidArgument(format!(
                "premium path has {n} points; need at least {}",
                spec.p() + 3
            )));
        }
        check_moments(moments)?;
        Ok(ProfileLikelihood {
            premium: &spreads.premium,
            schedule: GainSchedule::new(spec, spreads.h, n - 1)?,
            moments,
            gamma: vec![0.0; n],
            returns: vec![0.0; n - 1],
        })
    }

    /// Log-likelihood of the premia; `None` when the premia cannot be
    /// inverted under `params`.
    pub fn eval(&mut self, params: &RecoveryParams) -> Option<f64> {
        for (g, &c) in self.gamma.iter_mut().zip(self.premium) {
            *g = params.invert_unchecked(c).ok()?;
            if !(*g > 0.0 && g.is_finite()) {
                return None;
            }
        }
        let mut jacobian = 0.0;
        for k in 1..self.gamma.len() {
            self.returns[k - 1] = self.gamma[k].ln() - self.gamma[k - 1].ln();
            jacobian += params.log_elasticity(self.gamma[k]).ln();
        }
        let ll = self
            .schedule
            .filter(&self.returns, self.moments, |_, _, _| {})
            .ok()?;
        let total = ll - jacobian;
        total.is_finite().then_some(total)
    }

    /// Implied intensity log-returns under `params`.
    pub fn intensity_returns(&mut self, params: &RecoveryParams) -> Option<Vec<f64>> {
        self.eval(params)?;
        Some(self.returns.clone())
    }
}

/// Convenience wrapper around [`ProfileLikelihood::eval`].
pub fn profile_loglik(
    spreads: &SpreadPath,
    spec: &CarmaSpec,
    moments: MomentRates,
    params: &RecoveryParams,
) -> Result<f64> {
    ProfileLikelihood::new(spreads, spec, moments)?
        .eval(params)
        .ok_or_else(|| {
            InferenceError::InvalidArgument(format!("premia cannot be inverted under {params:?}"))
        })
}

/// Equal-tailed credible interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CredibleInterval {
    pub lower: f64,
    pub upper: f64,
}

impl CredibleInterval {
    pub fn contains(&self, x: f64) -> bool {
        self.lower <= x && x <= self.upper
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaIntervals {
    pub level: f64,
    pub beta0: CredibleInterval,
    pub beta1: CredibleInterval,
    pub beta2: CredibleInterval,
}

impl BetaIntervals {
    pub fn as_array(&self) -> [CredibleInterval; 3] {
        [self.beta0, self.beta1, self.beta2]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct McmcResult {
    /// Posterior mean.
    pub beta_hat: RecoveryParams,
    pub beta_ci: BetaIntervals,
    /// Post-burn-in draws of `(beta0, beta1, beta2)`.
    pub chain: Vec<[f64; 3]>,
    /// Log-likelihood of each retained draw.
    pub log_likelihood: Vec<f64>,
    pub acceptance_rate: f64,
    pub proposal_scales: [f64; 3],
}

fn in_prior(b: &[f64; 3], bound: f64) -> bool {
    b[0] > 0.0
        && b[0] < 1.0
        && b[2] > 0.0
        && b[2] < 1.0
        && b[0] + b[2] < 1.0
        && b[1] > -bound
        && b[1] <= 0.0
}

fn stochastic(b: &[f64; 3]) -> RecoveryParams {
    RecoveryParams::Stochastic {
        beta0: b[0],
        beta1: b[1],
        beta2: b[2],
    }
}

/// Type-7 sample quantile of sorted data.
fn quantile_sorted(sorted: &[f64], prob: f64) -> f64 {
    let pos = prob * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    } else {
        sorted[i]
    }
}

/// Random-walk Metropolis over `(beta0, beta1, beta2)` under uniform priors
/// `beta0, beta2 ~ U(0,1)` with `beta0 + beta2 < 1` and
/// `beta1 ~ U(-B, 0]`. The CARMA parameters stay fixed at `spec` and
/// `moments`. Proposal scales adapt during burn-in only.
pub fn fit_beta_mcmc(
    spreads: &SpreadPath,
    config: &FitConfig,
    spec: &CarmaSpec,
    moments: MomentRates,
    start: &RecoveryParams,
) -> Result<McmcResult> {
    config.validate()?;
    let m = &config.mcmc;
    let RecoveryParams::Stochastic {
        beta0,
        beta1,
        beta2,
    } = *start
    else {
        return Err(InferenceError::UnsupportedMode(
            "recovery parameters are sampled only in stochastic mode".into(),
        ));
    };
    if m.n_samples == 0 {
        return Err(InferenceError::InvalidArgument(
            "chain length after burn-in is 0".into(),
        ));
    }
    let mut state = [beta0, beta1, beta2];
    if !in_prior(&state, m.beta1_bound) {
        return Err(InferenceError::InvalidArgument(format!(
            "starting point {state:?} lies outside the prior support"
        )));
    }
    let mut profile = ProfileLikelihood::new(spreads, spec, moments)?;
    let mut current = profile.eval(&stochastic(&state)).ok_or_else(|| {
        InferenceError::InvalidArgument(format!(
            "premia cannot be inverted at the starting point {state:?}"
        ))
    })?;

    let mut rng = stream_rng(config.seed, 1 << 32);
    let mut scales = m.proposal_scales;
    let mut chain = Vec::with_capacity(m.n_samples);
    let mut lls = Vec::with_capacity(m.n_samples);
    let (mut window_acc, mut window_len, mut windows, mut accepted) =
        (0usize, 0usize, 0usize, 0usize);
    const WINDOW: usize = 50;
    for it in 0..m.burn_in + m.n_samples {
        let mut proposal = state;
        for (x, s) in proposal.iter_mut().zip(&scales) {
            let z: f64 = rng.sample(StandardNormal);
            *x += s * z;
        }
        let u: f64 = rng.random();
        let mut accept = false;
        if in_prior(&proposal, m.beta1_bound) {
            if let Some(ll) = profile.eval(&stochastic(&proposal)) {
                if u.ln() < ll - current {
                    state = proposal;
                    current = ll;
                    accept = true;
                }
            }
        }
        if it < m.burn_in {
            window_acc += usize::from(accept);
            window_len += 1;
            if window_len == WINDOW {
                // Diminishing log-scale steps towards an acceptance rate of 0.3.
                windows += 1;
                let rate = window_acc as f64 / WINDOW as f64;
                let factor = (1.5 * (rate - 0.3) / (windows as f64).sqrt()).exp();
                for s in scales.iter_mut() {
                    *s *= factor;
                }
                window_acc = 0;
                window_len = 0;
            }
        } else {
            accepted += usize::from(accept);
            chain.push(state);
            lls.push(current);
        }
    }

    let n = chain.len() as f64;
    let mean: [f64; 3] = std::array::from_fn(|j| chain.iter().map(|b| b[j]).sum::<f64>() / n);
    let tail = 0.5 * (1.0 - m.credible_level);
    let intervals: [CredibleInterval; 3] = std::array::from_fn(|j| {
        let mut v: Vec<f64> = chain.iter().map(|b| b[j]).collect();
        v.sort_by(f64::total_cmp);
        CredibleInterval {
            lower: quantile_sorted(&v, tail),
            upper: quantile_sorted(&v, 1.0 - tail),
        }
    });
    Ok(McmcResult {
        beta_hat: stochastic(&mean),
        beta_ci: BetaIntervals {
            level: m.credible_level,
            beta0: intervals[0],
            beta1: intervals[1],
            beta2: intervals[2],
        },
        chain,
        log_likelihood: lls,
        acceptance_rate: accepted as f64 / n,
        proposal_scales: scales,
    })
}

// ---------------------------------------------------------------------------
// Reports and model comparison

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecoveryModel {
    Crr,
    Srr,
}

impl RecoveryModel {
    pub fn name(self) -> &'static str {
        match self {
            RecoveryModel::Crr => "crr",
            RecoveryModel::Srr => "srr",
        }
    }
}

/// Outcome of fitting one recovery model to a premium path.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitReport {
    pub model: RecoveryModel,
    pub driver_kind: DriverKind,
    /// Fitted CARMA coefficients; absent when the fit failed outright.
    pub theta_hat: Option<CarmaSpec>,
    pub driver_moments: Option<MomentRates>,
    /// Posterior mean for stochastic recovery, the configured constant
    /// otherwise.
    pub beta_hat: RecoveryParams,
    pub beta_ci: Option<BetaIntervals>,
    /// Recovery parameters at which `loglik` was evaluated.
    pub beta_loglik: Option<RecoveryParams>,
    pub acceptance_rate: Option<f64>,
    pub loglik: f64,
    pub bic: f64,
    pub k: usize,
    pub n_obs: usize,
    pub converged: bool,
    pub warnings: Vec<String>,
}

impl FitReport {
    fn failed(
        model: RecoveryModel,
        config: &FitConfig,
        k: usize,
        n_obs: usize,
        err: &InferenceError,
    ) -> Self {
        FitReport {
            model,
            driver_kind: config.driver_kind,
            theta_hat: None,
            driver_moments: None,
            beta_hat: RecoveryParams::Constant {
                rate: config.crr_recovery,
            },
            beta_ci: None,
            beta_loglik: None,
            acceptance_rate: None,
            loglik: f64::NAN,
            bic: f64::NAN,
            k,
            n_obs,
            converged: false,
            warnings: vec![err.to_string()],
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }

    /// `company,bic_srr,bic_crr` with the column of the other model empty.
    pub fn csv_row(&self, company: &str) -> String {
        match self.model {
            RecoveryModel::Srr => format!("{company},{},", self.bic),
            RecoveryModel::Crr => format!("{company},,{}", self.bic),
        }
    }
}

fn unwrap_fit(result: Result<CarmaFit>) -> Result<CarmaFit> {
    match result {
        Err(InferenceError::OptimizationFailure { best, reason }) => {
            let mut fit = *best;
            fit.converged = false;
            fit.warnings.push(format!("optimization failed: {reason}"));
            Ok(fit)
        }
        other => other,
    }
}

fn check_spreads(spreads: &SpreadPath, config: &FitConfig) -> Result<Vec<f64>> {
    config.validate()?;
    let y = spreads.log_returns();
    if y.len() < MIN_FIT_LENGTH {
        return Err(InferenceError::InvalidArgument(format!(
            "need at least {MIN_FIT_LENGTH} log-returns, got {}",
            y.len()
        )));
    }
    Ok(y)
}

/// Constant-recovery model: premium log-returns are the CARMA observations.
pub fn fit_crr(spreads: &SpreadPath, config: &FitConfig) -> Result<FitReport> {
    let y = check_spreads(spreads, config)?;
    let k = carma_param_count(config.p, config.q) + 1;
    let fit = unwrap_fit(fit_carma(&y, spreads.h, config))?;
    Ok(crr_report(fit, config, k))
}

fn crr_report(fit: CarmaFit, config: &FitConfig, k: usize) -> FitReport {
    let mut warnings = fit.warnings;
    warnings.push(format!(
        "constant recovery is not identified by premium log-returns; reporting the configured value {}",
        config.crr_recovery
    ));
    let bic = bic(fit.loglik, k, fit.n_obs).unwrap_or(f64::NAN);
    FitReport {
        model: RecoveryModel::Crr,
        driver_kind: config.driver_kind,
        theta_hat: Some(fit.spec),
        driver_moments: Some(fit.moments),
        beta_hat: RecoveryParams::Constant {
            rate: config.crr_recovery,
        },
        beta_ci: None,
        beta_loglik: None,
        acceptance_rate: None,
        loglik: fit.loglik,
        bic,
        k,
        n_obs: fit.n_obs,
        converged: fit.converged,
        warnings,
    }
}

/// Stochastic-recovery model, staged: CARMA fit to the premium returns,
/// Metropolis sampling of the recovery parameters with those CARMA parameters
/// held fixed, a local maximization of the quasi-likelihood over the recovery
/// parameters started from the posterior mean, and a CARMA refit to the
/// implied intensity returns.
pub fn fit_srr(spreads: &SpreadPath, config: &FitConfig) -> Result<FitReport> {
    let y = check_spreads(spreads, config)?;
    let first = unwrap_fit(fit_carma(&y, spreads.h, config))?;
    fit_srr_from(spreads, config, &first)
}

fn fit_srr_from(spreads: &SpreadPath, config: &FitConfig, first: &CarmaFit) -> Result<FitReport> {
    let k = carma_param_count(config.p, config.q) + 3;
    let [b0, b1, b2] = config.mcmc.initial;
    let start = RecoveryParams::Stochastic {
        beta0: b0,
        beta1: b1,
        beta2: b2,
    };
    let mcmc = fit_beta_mcmc(spreads, config, &first.spec, first.moments, &start)?;
    let mut warnings = first.warnings.clone();
    if !(0.2..=0.4).contains(&mcmc.acceptance_rate) {
        warnings.push(format!(
            "Metropolis acceptance rate {:.3} lies outside [0.2, 0.4]",
            mcmc.acceptance_rate
        ));
    }

    // Local maximization over beta with the first-stage CARMA parameters.
    let bound = config.mcmc.beta1_bound;
    let profile =
        std::cell::RefCell::new(ProfileLikelihood::new(spreads, &first.spec, first.moments)?);
    let RecoveryParams::Stochastic {
        beta0,
        beta1,
        beta2,
    } = mcmc.beta_hat
    else {
        unreachable!()
    };
    let best_draw = mcmc
        .log_likelihood
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| mcmc.chain[i])
        .unwrap_or([beta0, beta1, beta2]);
    // beta0 -> 0 reproduces the constant-recovery likelihood exactly.
    let candidates = [[beta0, beta1, beta2], best_draw, [1e-9, beta1, beta2]];
    let neg = |b: &[f64]| -> f64 {
        let b = [b[0], b[1], b[2]];
        if !in_prior(&b, bound) {
            return f64::INFINITY;
        }
        profile
            .borrow_mut()
            .eval(&stochastic(&b))
            .map_or(f64::INFINITY, |ll| -ll)
    };
    let mut best = candidates[0];
    let mut best_f = f64::INFINITY;
    for c in candidates {
        let f = neg(&c);
        if f < best_f {
            best_f = f;
            best = c;
        }
    }
    let local = nelder_mead(&neg, &best, 0.01, 2000, 1e-10);
    if local.f < best_f {
        best = [local.x[0], local.x[1], local.x[2]];
    }
    let beta_star = stochastic(&best);

    let returns = profile
        .borrow_mut()
        .intensity_returns(&beta_star)
        .ok_or_else(|| {
            InferenceError::InvalidArgument(
                "premia cannot be inverted at the fitted recovery".into(),
            )
        })?;
    let refit = unwrap_fit(fit_carma_from(
        &returns,
        spreads.h,
        config,
        Some(&first.spec),
    ))?;
    let loglik = profile_loglik(spreads, &refit.spec, refit.moments, &beta_star)?;
    warnings.extend(refit.warnings.iter().cloned());
    let bic = bic(loglik, k, refit.n_obs)?;
    Ok(FitReport {
        model: RecoveryModel::Srr,
        driver_kind: config.driver_kind,
        theta_hat: Some(refit.spec),
        driver_moments: Some(refit.moments),
        beta_hat: mcmc.beta_hat,
        beta_ci: Some(mcmc.beta_ci),
        beta_loglik: Some(beta_star),
        acceptance_rate: Some(mcmc.acceptance_rate),
        loglik,
        bic,
        k,
        n_obs: refit.n_obs,
        converged: first.converged && refit.converged,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelComparison {
    pub srr: FitReport,
    pub crr: FitReport,
    pub preferred: RecoveryModel,
}

impl ModelComparison {
    pub const CSV_HEADER: &'static str = "company,bic_srr,bic_crr,preferred";

    pub fn csv_row(&self, company: &str) -> String {
        format!(
            "{company},{},{},{}",
            self.srr.bic,
            self.crr.bic,
            self.preferred.name()
        )
    }
}

/// Fits both recovery models and prefers the smaller BIC. A model whose fit
/// fails is reported with `converged = false` instead of aborting.
pub fn compare_models(spreads: &SpreadPath, config: &FitConfig) -> Result<ModelComparison> {
    let y = check_spreads(spreads, config)?;
    let n = y.len();
    let k_crr = carma_param_count(config.p, config.q) + 1;
    let k_srr = carma_param_count(config.p, config.q) + 3;
    let (crr, srr) = match unwrap_fit(fit_carma(&y, spreads.h, config)) {
        Ok(first) => {
            let srr = fit_srr_from(spreads, config, &first)
                .unwrap_or_else(|e| FitReport::failed(RecoveryModel::Srr, config, k_srr, n, &e));
            (crr_report(first, config, k_crr), srr)
        }
        Err(e) => (
            FitReport::failed(RecoveryModel::Crr, config, k_crr, n, &e),
            FitReport::failed(RecoveryModel::Srr, config, k_srr, n, &e),
        ),
    };
    let preferred = if srr.bic < crr.bic || crr.bic.is_nan() && !srr.bic.is_nan() {
        RecoveryModel::Srr
    } else {
        RecoveryModel::Crr
    };
    Ok(ModelComparison {
        srr,
        crr,
        preferred,
    })
}
