//! Recovery rates, the credit triangle, spread/intensity paths, default times
//! and intensity-based fair CDS spreads.

use std::io::Write;

use rand::Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::carma::{self, CarmaError, CarmaSpec, InitialState, StatePath};
use crate::levy::LevyDriver;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CreditError {
    #[error("invalid recovery parameter `{field}`: {reason}")]
    InvalidRecovery { field: &'static str, reason: String },
    #[error("non-positive spread {spread} at intensity {gamma} (recovery {recovery} >= 1)")]
    NonPositiveSpread {
        gamma: f64,
        recovery: f64,
        spread: f64,
    },
    #[error("recovery map is not invertible: beta0 + beta2 = {0} >= 1")]
    NotInvertible(f64),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Carma(#[from] CarmaError),
}

/// Recovery model: a constant `R` or `R(g) = beta2 + beta0 exp(beta1 g)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum RecoveryParams {
    Constant { rate: f64 },
    Stochastic { beta0: f64, beta1: f64, beta2: f64 },
}

/// A recovery value together with a flag telling whether it left `(0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecoveryRate {
    pub value: f64,
    pub out_of_range: bool,
}

impl RecoveryParams {
    pub fn constant(rate: f64) -> Result<Self, CreditError> {
        if !rate.is_finite() {
            return Err(CreditError::InvalidRecovery {
                field: "rate",
                reason: format!("must be finite, got {rate}"),
            });
        }
        Ok(RecoveryParams::Constant { rate })
    }

    /// Requires `beta0, beta2 in (0,1)` and `beta1 <= 0`. A sum
    /// `beta0 + beta2 >= 1` is accepted but reported by [`Self::range_warning`].
    pub fn stochastic(beta0: f64, beta1: f64, beta2: f64) -> Result<Self, CreditError> {
        let open_unit = |field, v: f64| {
            if v > 0.0 && v < 1.0 {
                Ok(v)
            } else {
                Err(CreditError::InvalidRecovery {
                    field,
                    reason: format!("must lie in (0, 1), got {v}"),
                })
            }
        };
        open_unit("beta0", beta0)?;
        open_unit("beta2", beta2)?;
        if !(beta1 <= 0.0 && beta1.is_finite()) {
            return Err(CreditError::InvalidRecovery {
                field: "beta1",
                reason: format!("must be finite and <= 0, got {beta1}"),
            });
        }
        Ok(RecoveryParams::Stochastic {
            beta0,
            beta1,
            beta2,
        })
    }

    pub fn is_stochastic(&self) -> bool {
        matches!(self, RecoveryParams::Stochastic { .. })
    }

    /// Human-readable warning when the parameters can push `R` outside `(0,1)`.
    pub fn range_warning(&self) -> Option<String> {
        match *self {
            RecoveryParams::Constant { rate } if !(rate > 0.0 && rate < 1.0) => {
                Some(format!("constant recovery {rate} lies outside (0, 1)"))
            }
            RecoveryParams::Stochastic { beta0, beta2, .. } if beta0 + beta2 >= 1.0 => {
                Some(format!(
                    "beta0 + beta2 = {} >= 1: recovery exceeds 1 for small intensities",
                    beta0 + beta2
                ))
            }
            _ => None,
        }
    }

    pub fn recovery_rate(&self, gamma: f64) -> RecoveryRate {
        let value = match *self {
            RecoveryParams::Constant { rate } => rate,
            RecoveryParams::Stochastic {
                beta0,
                beta1,
                beta2,
            } => beta2 + beta0 * (beta1 * gamma).exp(),
        };
        RecoveryRate {
            value,
            out_of_range: !(value > 0.0 && value < 1.0),
        }
    }

    /// `beta0 + beta2` (or `R`): the supremum of the recovery map.
    fn recovery_sup(&self) -> f64 {
        match *self {
            RecoveryParams::Constant { rate } => rate,
            RecoveryParams::Stochastic {
                beta0,
                beta1,
                beta2,
            } => {
                if beta1 == 0.0 {
                    beta0 + beta2
                } else {
                    beta2 + beta0.max(0.0)
                }
            }
        }
    }

    pub fn is_invertible(&self) -> bool {
        self.recovery_sup() < 1.0
    }

    /// `(1 - R(g)) g` without sign checks.
    pub(crate) fn spread_unchecked(&self, gamma: f64) -> f64 {
        (1.0 - self.recovery_rate(gamma).value) * gamma
    }

    /// `d log C / d log g` of the credit triangle.
    pub(crate) fn log_elasticity(&self, gamma: f64) -> f64 {
        match *self {
            RecoveryParams::Constant { .. } => 1.0,
            RecoveryParams::Stochastic {
                beta0,
                beta1,
                beta2,
            } => {
                let ex = (beta1 * gamma).exp();
                1.0 - gamma * beta0 * beta1 * ex / (1.0 - beta2 - beta0 * ex)
            }
        }
    }

    /// Solves `(1 - R(g)) g = spread` on the branch where `1 - R(g) > 0`,
    /// which is strictly increasing for any admissible parameters.
    pub(crate) fn invert_unchecked(&self, spread: f64) -> Result<f64, CreditError> {
        match *self {
            RecoveryParams::Constant { rate } => {
                if rate >= 1.0 {
                    return Err(CreditError::NotInvertible(rate));
                }
                Ok(spread / (1.0 - rate))
            }
            RecoveryParams::Stochastic {
                beta0,
                beta1,
                beta2,
            } => {
                if beta0 == 0.0 || beta1 == 0.0 {
                    let r = beta0 + beta2;
                    if r >= 1.0 {
                        return Err(CreditError::NotInvertible(r));
                    }
                    return Ok(spread / (1.0 - r));
                }
                if beta2 >= 1.0 {
                    return Err(CreditError::NotInvertible(beta0 + beta2));
                }
                // 1 - R(g) runs from 1 - beta2 - beta0 up to 1 - beta2.
                let floor_gamma = if beta0 + beta2 >= 1.0 {
                    ((1.0 - beta2) / beta0).ln() / beta1
                } else {
                    0.0
                };
                let mut lo = floor_gamma.max(spread / (1.0 - beta2));
                let mut hi = if beta0 + beta2 < 1.0 {
                    spread / (1.0 - beta2 - beta0)
                } else {
                    let mut hi = lo.max(1e-300) * 2.0;
                    while self.spread_unchecked(hi) < spread {
                        hi *= 2.0;
                    }
                    hi
                };
                if lo > hi {
                    std::mem::swap(&mut lo, &mut hi);
                }
                Ok(bracketed_newton(
                    |g| self.spread_unchecked(g) - spread,
                    |g| self.spread_derivative(g),
                    lo,
                    hi,
                ))
            }
        }
    }

    fn spread_derivative(&self, gamma: f64) -> f64 {
        match *self {
            RecoveryParams::Constant { rate } => 1.0 - rate,
            RecoveryParams::Stochastic {
                beta0,
                beta1,
                beta2,
            } => {
                let ex = (beta1 * gamma).exp();
                1.0 - beta2 - beta0 * ex - beta0 * beta1 * gamma * ex
            }
        }
    }
}

/// Newton steps safeguarded by bisection on an increasing function with a
/// sign change in `[lo, hi]`, to relative tolerance 1e-13.
fn bracketed_newton(
    f: impl Fn(f64) -> f64,
    df: impl Fn(f64) -> f64,
    mut lo: f64,
    mut hi: f64,
) -> f64 {
    let mut x = 0.5 * (lo + hi);
    for _ in 0..200 {
        let fx = f(x);
        if fx == 0.0 {
            return x;
        }
        if fx < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let step = fx / df(x);
        let candidate = x - step;
        let inside = candidate > lo && candidate < hi;
        if inside && step.abs() <= 1e-13 * x.abs() {
            return candidate;
        }
        x = if inside { candidate } else { 0.5 * (lo + hi) };
        if hi - lo <= 1e-13 * hi.abs() {
            return 0.5 * (lo + hi);
        }
    }
    x
}

pub fn recovery_rate(params: &RecoveryParams, gamma: f64) -> RecoveryRate {
    params.recovery_rate(gamma)
}

/// Credit triangle `C = (1 - R(g)) g`.
pub fn credit_triangle_spread(params: &RecoveryParams, gamma: f64) -> Result<f64, CreditError> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(CreditError::InvalidArgument(format!(
            "intensity must be > 0, got {gamma}"
        )));
    }
    let recovery = params.recovery_rate(gamma).value;
    let spread = (1.0 - recovery) * gamma;
    if spread <= 0.0 {
        return Err(CreditError::NonPositiveSpread {
            gamma,
            recovery,
            spread,
        });
    }
    Ok(spread)
}

/// Inverse of the credit triangle: the unique `g > 0` with `(1 - R(g)) g = spread`.
pub fn invert_spread(params: &RecoveryParams, spread: f64) -> Result<f64, CreditError> {
    if !(spread > 0.0 && spread.is_finite()) {
        return Err(CreditError::InvalidArgument(format!(
            "spread must be > 0, got {spread}"
        )));
    }
    if !params.is_invertible() {
        return Err(CreditError::NotInvertible(params.recovery_sup()));
    }
    params.invert_unchecked(spread)
}

/// Default intensities on the grid `t0 + k h`.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityPath {
    pub t0: f64,
    pub h: f64,
    pub gamma: Vec<f64>,
}

impl IntensityPath {
    pub fn new(t0: f64, h: f64, gamma: Vec<f64>) -> Result<Self, CreditError> {
        if !(h > 0.0 && h.is_finite()) || !t0.is_finite() {
            return Err(CreditError::InvalidArgument(format!(
                "invalid grid t0 = {t0}, h = {h}"
            )));
        }
        if let Some(k) = gamma.iter().position(|g| !(*g >= 0.0 && g.is_finite())) {
            return Err(CreditError::InvalidArgument(format!(
                "intensity at index {k} must be finite and >= 0, got {}",
                gamma[k]
            )));
        }
        Ok(IntensityPath { t0, h, gamma })
    }

    /// Constant intensity on `n_steps + 1` grid points.
    pub fn constant(gamma: f64, h: f64, n_steps: usize) -> Result<Self, CreditError> {
        Self::new(0.0, h, vec![gamma; n_steps + 1])
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.h
    }

    pub fn horizon(&self) -> f64 {
        self.time(self.gamma.len().saturating_sub(1))
    }

    /// Trapezoidal cumulative hazard from the first grid point.
    pub fn cumulative_hazard(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.gamma.len());
        let mut acc = 0.0;
        out.push(0.0);
        for w in self.gamma.windows(2) {
            acc += 0.5 * self.h * (w[0] + w[1]);
            out.push(acc);
        }
        out
    }

    fn grid_index(&self, t: f64) -> Result<usize, CreditError> {
        let x = (t - self.t0) / self.h;
        let k = x.round();
        if k < 0.0 || (x - k).abs() > 1e-9 || k as usize >= self.gamma.len() {
            return Err(CreditError::InvalidArgument(format!(
                "time {t} is not a grid point of [{}, {}] with step {}",
                self.t0,
                self.horizon(),
                self.h
            )));
        }
        Ok(k as usize)
    }
}

/// CDS premia on a uniform grid for a fixed tenor.
#[derive(Debug, Clone, PartialEq)]
pub struct SpreadPath {
    pub t0: f64,
    pub h: f64,
    pub premium: Vec<f64>,
    pub tenor: f64,
}

impl SpreadPath {
    pub fn new(t0: f64, h: f64, premium: Vec<f64>, tenor: f64) -> Result<Self, CreditError> {
        if !(h > 0.0 && h.is_finite()) || !t0.is_finite() {
            return Err(CreditError::InvalidArgument(format!(
                "invalid grid t0 = {t0}, h = {h}"
            )));
        }
        if !(tenor > 0.0) {
            return Err(CreditError::InvalidArgument(format!(
                "tenor must be > 0, got {tenor}"
            )));
        }
        if let Some(k) = premium.iter().position(|c| !(*c > 0.0 && c.is_finite())) {
            return Err(CreditError::InvalidArgument(format!(
                "premium at index {k} must be finite and > 0, got {}",
                premium[k]
            )));
        }
        Ok(SpreadPath {
            t0,
            h,
            premium,
            tenor,
        })
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.h
    }

    pub fn log_returns(&self) -> Vec<f64> {
        self.premium
            .windows(2)
            .map(|w| w[1].ln() - w[0].ln())
            .collect()
    }
}

/// Constant short rate discounting, `D_s^t = exp(-r (t - s))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscountCurve {
    pub short_rate: f64,
}

impl DiscountCurve {
    pub fn new(short_rate: f64) -> Result<Self, CreditError> {
        if !(short_rate >= 0.0 && short_rate.is_finite()) {
            return Err(CreditError::InvalidArgument(format!(
                "short rate must be >= 0, got {short_rate}"
            )));
        }
        Ok(DiscountCurve { short_rate })
    }

    pub fn discount(&self, s: f64, t: f64) -> f64 {
        (-self.short_rate * (t - s)).exp()
    }
}

/// Which of the two linked paths is driven by the integrated CARMA output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathConstruction {
    /// `log C` is the integrated output; intensities are implied through the
    /// inverse credit triangle.
    #[default]
    SpreadPrimary,
    /// `log g` is the integrated output; premia follow from the credit
    /// triangle, so the recovery map shapes the premium dynamics.
    IntensityPrimary,
}

/// Inputs of [`generate_spread_path`] besides the model itself.
#[derive(Debug, Clone, PartialEq)]
pub struct SpreadPathSettings {
    pub c0: f64,
    pub h: f64,
    pub n_steps: usize,
    pub tenor: f64,
    pub init: InitialState,
    pub construction: PathConstruction,
}

impl SpreadPathSettings {
    pub fn new(c0: f64, h: f64, n_steps: usize) -> Self {
        SpreadPathSettings {
            c0,
            h,
            n_steps,
            tenor: 5.0,
            init: InitialState::Stationary,
            construction: PathConstruction::SpreadPrimary,
        }
    }
}

/// Simulated premium, intensity and state paths.
#[derive(Debug, Clone)]
pub struct CreditPaths {
    pub spread: SpreadPath,
    pub intensity: IntensityPath,
    pub state: StatePath,
}

/// Builds premium and intensity paths whose one-step log-returns are the
/// trapezoidal integrals of a simulated CARMA output.
pub fn generate_spread_path<R: Rng + ?Sized>(
    spec: &CarmaSpec,
    driver: &LevyDriver,
    params: &RecoveryParams,
    settings: &SpreadPathSettings,
    rng: &mut R,
) -> Result<CreditPaths, CreditError> {
    let SpreadPathSettings {
        c0,
        h,
        n_steps,
        tenor,
        ref init,
        construction,
    } = *settings;
    if !(c0 > 0.0 && c0.is_finite()) {
        return Err(CreditError::InvalidArgument(format!(
            "initial premium must be > 0, got {c0}"
        )));
    }
    if construction == PathConstruction::SpreadPrimary && !params.is_invertible() {
        return Err(CreditError::NotInvertible(params.recovery_sup()));
    }
    let state = carma::simulate(spec, driver, h, n_steps, init, rng)?;

    let base = match construction {
        PathConstruction::SpreadPrimary => c0,
        PathConstruction::IntensityPrimary => params.invert_unchecked(c0)?,
    };
    let mut cumulative = Vec::with_capacity(n_steps + 1);
    cumulative.push(0.0);
    for k in 1..=n_steps {
        let step = carma::integrated_output(&state, k - 1, k)?;
        cumulative.push(cumulative[k - 1] + step);
    }
    let levels: Vec<f64> = cumulative.iter().map(|c| base * c.exp()).collect();

    let (premium, gamma) = match construction {
        PathConstruction::SpreadPrimary => {
            let gamma = levels
                .iter()
                .map(|&c| invert_spread(params, c))
                .collect::<Result<Vec<_>, _>>()?;
            (levels, gamma)
        }
        PathConstruction::IntensityPrimary => {
            let premium = levels
                .iter()
                .map(|&g| credit_triangle_spread(params, g))
                .collect::<Result<Vec<_>, _>>()?;
            (premium, levels)
        }
    };
    Ok(CreditPaths {
        spread: SpreadPath::new(0.0, h, premium, tenor)?,
        intensity: IntensityPath::new(0.0, h, gamma)?,
        state,
    })
}

/// Writes `time,premium,gamma,recovery` rows (with a header line).
pub fn write_credit_csv<W: Write>(
    mut out: W,
    spread: &SpreadPath,
    intensity: &IntensityPath,
    params: &RecoveryParams,
) -> std::io::Result<()> {
    writeln!(out, "time,premium,gamma,recovery")?;
    for (k, (c, g)) in spread.premium.iter().zip(&intensity.gamma).enumerate() {
        let r = params.recovery_rate(*g).value;
        writeln!(out, "{},{},{},{}", spread.time(k), c, g, r)?;
    }
    Ok(())
}

/// Inverse-transform default time: the first time the trapezoidal cumulative
/// hazard reaches an Exp(1) draw, or `None` if it never does on the path.
pub fn simulate_default_time<R: Rng + ?Sized>(path: &IntensityPath, rng: &mut R) -> Option<f64> {
    let threshold: f64 = rng.sample(Exp1);
    default_time_for_threshold(path, &path.cumulative_hazard(), threshold)
}

/// Same as [`simulate_default_time`] with a precomputed cumulative hazard.
pub fn default_time_for_threshold(
    path: &IntensityPath,
    cumulative: &[f64],
    threshold: f64,
) -> Option<f64> {
    let last = *cumulative.last()?;
    if last < threshold {
        return None;
    }
    let k = cumulative.partition_point(|&c| c < threshold);
    if k == 0 {
        return Some(path.t0);
    }
    let (c0, c1) = (cumulative[k - 1], cumulative[k]);
    Some(path.time(k - 1) + path.h * (threshold - c0) / (c1 - c0))
}

/// Fair spread together with its Monte Carlo standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FairSpread {
    pub spread: f64,
    /// Delta-method standard error of the ratio estimator; `None` for a
    /// single path.
    pub std_error: Option<f64>,
    pub n_paths: usize,
}

/// Intensity-based fair spread over `[s, s + tenor]`: ratio of the ensemble
/// means of the default-leg and premium-leg integrals.
pub fn fair_spread(
    ensemble: &[IntensityPath],
    params: &RecoveryParams,
    curve: &DiscountCurve,
    s: f64,
    tenor: f64,
) -> Result<FairSpread, CreditError> {
    if ensemble.is_empty() {
        return Err(CreditError::InvalidArgument(
            "empty intensity ensemble".into(),
        ));
    }
    if !(tenor > 0.0) {
        return Err(CreditError::InvalidArgument(format!(
            "tenor must be > 0, got {tenor}"
        )));
    }
    let legs = ensemble
        .par_iter()
        .map(|path| leg_integrals(path, params, curve, s, tenor))
        .collect::<Result<Vec<_>, _>>()?;
    let default_legs: Vec<f64> = legs.iter().map(|l| l.0).collect();
    let premium_legs: Vec<f64> = legs.iter().map(|l| l.1).collect();
    let n = legs.len();
    let num = pairwise_sum(&default_legs);
    let den = pairwise_sum(&premium_legs);
    let spread = num / den;
    let std_error = (n > 1).then(|| {
        let resid: Vec<f64> = legs.iter().map(|(a, b)| (a - spread * b).powi(2)).collect();
        let var = pairwise_sum(&resid) / (n as f64 - 1.0);
        (var / n as f64).sqrt() / (den / n as f64)
    });
    Ok(FairSpread {
        spread,
        std_error,
        n_paths: n,
    })
}

fn leg_integrals(
    path: &IntensityPath,
    params: &RecoveryParams,
    curve: &DiscountCurve,
    s: f64,
    tenor: f64,
) -> Result<(f64, f64), CreditError> {
    let i0 = path.grid_index(s)?;
    let i1 = path.grid_index(s + tenor)?;
    let h = path.h;
    let mut hazard = 0.0;
    let (mut num, mut den) = (0.0, 0.0);
    let (mut prev_num, mut prev_den) = (0.0, 0.0);
    for k in i0..=i1 {
        if k > i0 {
            hazard += 0.5 * h * (path.gamma[k - 1] + path.gamma[k]);
        }
        let g = path.gamma[k];
        let weight = curve.discount(s, path.time(k)) * (-hazard).exp();
        let f_num = (1.0 - params.recovery_rate(g).value) * g * weight;
        if k > i0 {
            num += 0.5 * h * (prev_num + f_num);
            den += 0.5 * h * (prev_den + weight);
        }
        prev_num = f_num;
        prev_den = weight;
    }
    Ok((num, den))
}

/// Pairwise summation with a fixed split so results are order-deterministic.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 8 {
        xs.iter().sum()
    } else {
        let mid = xs.len() / 2;
        pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
    }
}
