//! Driving Lévy processes.
//!
//! Three increment laws are supported: Brownian motion with drift, compound
//! Poisson with normal jumps and normal inverse Gaussian (NIG) in the
//! `(alpha, beta, delta, mu)` parameterization. All randomness enters through
//! a caller-supplied generator so that every path is reproducible from a seed.

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LevyError {
    #[error("invalid driver parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },
    #[error("time increment must be positive, got {0}")]
    NonPositiveStep(f64),
    #[error("driver `{0}` has no jump representation")]
    UnsupportedDriver(&'static str),
}

/// Increment law of the background driving Lévy process.
///
/// Values are immutable once built; construct through [`LevyDriver::brownian`],
/// [`LevyDriver::compound_poisson`] or [`LevyDriver::nig`] (or deserialize,
/// which runs the same checks).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDriver", into = "RawDriver")]
pub enum LevyDriver {
    Brownian {
        drift: f64,
        volatility: f64,
    },
    CompoundPoissonNormal {
        rate: f64,
        jump_mean: f64,
        jump_sd: f64,
    },
    Nig {
        alpha: f64,
        beta: f64,
        delta: f64,
        mu: f64,
    },
}

/// Wire form: `{"kind": "cpn", "rate": .., "jump_mean": .., "jump_sd": ..}`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum RawDriver {
    Brownian {
        drift: f64,
        volatility: f64,
    },
    Cpn {
        rate: f64,
        jump_mean: f64,
        jump_sd: f64,
    },
    Nig {
        alpha: f64,
        beta: f64,
        delta: f64,
        mu: f64,
    },
}

impl TryFrom<RawDriver> for LevyDriver {
    type Error = LevyError;

    fn try_from(raw: RawDriver) -> Result<Self, Self::Error> {
        match raw {
            RawDriver::Brownian { drift, volatility } => LevyDriver::brownian(drift, volatility),
            RawDriver::Cpn {
                rate,
                jump_mean,
                jump_sd,
            } => LevyDriver::compound_poisson(rate, jump_mean, jump_sd),
            RawDriver::Nig {
                alpha,
                beta,
                delta,
                mu,
            } => LevyDriver::nig(alpha, beta, delta, mu),
        }
    }
}

impl From<LevyDriver> for RawDriver {
    fn from(d: LevyDriver) -> Self {
        match d {
            LevyDriver::Brownian { drift, volatility } => RawDriver::Brownian { drift, volatility },
            LevyDriver::CompoundPoissonNormal {
                rate,
                jump_mean,
                jump_sd,
            } => RawDriver::Cpn {
                rate,
                jump_mean,
                jump_sd,
            },
            LevyDriver::Nig {
                alpha,
                beta,
                delta,
                mu,
            } => RawDriver::Nig {
                alpha,
                beta,
                delta,
                mu,
            },
        }
    }
}

fn finite(field: &'static str, v: f64) -> Result<f64, LevyError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(LevyError::InvalidParameter {
            field,
            reason: format!("must be finite, got {v}"),
        })
    }
}

fn non_negative(field: &'static str, v: f64) -> Result<f64, LevyError> {
    finite(field, v)?;
    if v < 0.0 {
        return Err(LevyError::InvalidParameter {
            field,
            reason: format!("must be >= 0, got {v}"),
        });
    }
    Ok(v)
}

fn positive(field: &'static str, v: f64) -> Result<f64, LevyError> {
    finite(field, v)?;
    if v <= 0.0 {
        return Err(LevyError::InvalidParameter {
            field,
            reason: format!("must be > 0, got {v}"),
        });
    }
    Ok(v)
}

/// Jump epochs (relative to the start of the interval) and sizes.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct JumpRecord {
    pub times: Vec<f64>,
    pub sizes: Vec<f64>,
}

impl JumpRecord {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// First two moments of `L_1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentRates {
    pub mean_rate: f64,
    pub variance_rate: f64,
}

impl LevyDriver {
    pub fn brownian(drift: f64, volatility: f64) -> Result<Self, LevyError> {
        Ok(LevyDriver::Brownian {
            drift: finite("drift", drift)?,
            volatility: non_negative("volatility", volatility)?,
        })
    }

    pub fn compound_poisson(rate: f64, jump_mean: f64, jump_sd: f64) -> Result<Self, LevyError> {
        Ok(LevyDriver::CompoundPoissonNormal {
            rate: non_negative("rate", rate)?,
            jump_mean: finite("jump_mean", jump_mean)?,
            jump_sd: non_negative("jump_sd", jump_sd)?,
        })
    }

    pub fn nig(alpha: f64, beta: f64, delta: f64, mu: f64) -> Result<Self, LevyError> {
        let alpha = positive("alpha", alpha)?;
        let beta = finite("beta", beta)?;
        if beta.abs() >= alpha {
            return Err(LevyError::InvalidParameter {
                field: "beta",
                reason: format!("|beta| must be < alpha = {alpha}, got {beta}"),
            });
        }
        Ok(LevyDriver::Nig {
            alpha,
            beta,
            delta: positive("delta", delta)?,
            mu: finite("mu", mu)?,
        })
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            LevyDriver::Brownian { .. } => "brownian",
            LevyDriver::CompoundPoissonNormal { .. } => "cpn",
            LevyDriver::Nig { .. } => "nig",
        }
    }

    pub fn has_jump_representation(&self) -> bool {
        matches!(self, LevyDriver::CompoundPoissonNormal { .. })
    }

    /// `E[L_1]` and `Var[L_1]`.
    pub fn moment_rates(&self) -> MomentRates {
        match *self {
            LevyDriver::Brownian { drift, volatility } => MomentRates {
                mean_rate: drift,
                variance_rate: volatility * volatility,
            },
            LevyDriver::CompoundPoissonNormal {
                rate,
                jump_mean,
                jump_sd,
            } => MomentRates {
                mean_rate: rate * jump_mean,
                variance_rate: rate * (jump_sd * jump_sd + jump_mean * jump_mean),
            },
            LevyDriver::Nig {
                alpha,
                beta,
                delta,
                mu,
            } => {
                let gamma = (alpha * alpha - beta * beta).sqrt();
                MomentRates {
                    mean_rate: mu + delta * beta / gamma,
                    variance_rate: delta * alpha * alpha / gamma.powi(3),
                }
            }
        }
    }

    /// One draw of `L_{t+dt} - L_t`.
    pub fn sample_increment<R: Rng + ?Sized>(
        &self,
        dt: f64,
        rng: &mut R,
    ) -> Result<f64, LevyError> {
        check_step(dt)?;
        Ok(match *self {
            LevyDriver::Brownian { drift, volatility } => {
                let z: f64 = rng.sample(StandardNormal);
                drift * dt + volatility * dt.sqrt() * z
            }
            LevyDriver::CompoundPoissonNormal {
                rate,
                jump_mean,
                jump_sd,
            } => {
                let n = poisson_count(rate * dt, rng);
                if n == 0 {
                    0.0
                } else {
                    let z: f64 = rng.sample(StandardNormal);
                    n as f64 * jump_mean + jump_sd * (n as f64).sqrt() * z
                }
            }
            LevyDriver::Nig {
                alpha,
                beta,
                delta,
                mu,
            } => {
                // The NIG family is closed under convolution: over dt the
                // increment is NIG(alpha, beta, delta*dt, mu*dt).
                let gamma = (alpha * alpha - beta * beta).sqrt();
                let d = delta * dt;
                let v = sample_inverse_gaussian(d / gamma, d * d, rng);
                let z: f64 = rng.sample(StandardNormal);
                mu * dt + beta * v + v.sqrt() * z
            }
        })
    }

    /// Jump epochs and sizes of a compound Poisson driver over `[0, dt]`.
    pub fn sample_jumps<R: Rng + ?Sized>(
        &self,
        dt: f64,
        rng: &mut R,
    ) -> Result<JumpRecord, LevyError> {
        check_step(dt)?;
        let LevyDriver::CompoundPoissonNormal {
            rate,
            jump_mean,
            jump_sd,
        } = *self
        else {
            return Err(LevyError::UnsupportedDriver(self.kind_name()));
        };
        let n = poisson_count(rate * dt, rng) as usize;
        let mut times: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * dt).collect();
        times.sort_by(f64::total_cmp);
        let sizes = (0..n)
            .map(|_| jump_mean + jump_sd * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Ok(JumpRecord { times, sizes })
    }
}

fn check_step(dt: f64) -> Result<(), LevyError> {
    if dt > 0.0 && dt.is_finite() {
        Ok(())
    } else {
        Err(LevyError::NonPositiveStep(dt))
    }
}

fn poisson_count<R: Rng + ?Sized>(lambda: f64, rng: &mut R) -> u64 {
    if lambda <= 0.0 {
        return 0;
    }
    // lambda > 0 and finite here, so construction cannot fail.
    let dist = Poisson::new(lambda).expect("positive finite Poisson mean");
    dist.sample(rng) as u64
}

/// Inverse Gaussian draw with the given mean and shape using the
/// transformation-with-multiple-roots method (one normal, one uniform).
pub(crate) fn sample_inverse_gaussian<R: Rng + ?Sized>(mean: f64, shape: f64, rng: &mut R) -> f64 {
    let nu: f64 = rng.sample(StandardNormal);
    let y = nu * nu;
    let my = mean * y;
    let x = mean + mean * my / (2.0 * shape)
        - mean / (2.0 * shape) * (4.0 * shape * my + my * my).sqrt();
    let u: f64 = rng.random();
    if u <= mean / (mean + x) {
        x
    } else {
        mean * mean / x
    }
}
