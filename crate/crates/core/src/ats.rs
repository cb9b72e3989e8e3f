//! Affine term structure of the CARMA short-rate model.
//!
//! Bond prices take the form `P(t,T) = exp(A(t,T) - B(t,T) r(t))`. With
//! `tau = T - t` the coefficients solve
//!
//! ```text
//! dB/dtau = A B + 1,          B(0) = 0
//! dA/dtau = 1/2 (e' B e)^2,   A(0) = 0
//! ```
//!
//! whose solution is `B = A^{-1}(e^{A tau} - I)`. The scalar coefficient has a
//! closed form only for p = 1; larger systems take it from the ODE integrator.

use nalgebra::DMatrix;
use serde::Serialize;
use thiserror::Error;

use crate::carma::CompanionSystem;
use crate::linalg;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AtsError {
    #[error("companion matrix is singular; B(t,T) has no closed form")]
    Singular,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("unsupported configuration: {0}")]
    Unsupported(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AffineCoeffs {
    pub a_val: f64,
    pub b_val: DMatrix<f64>,
    pub tau: f64,
}

impl AffineCoeffs {
    fn zero(p: usize) -> Self {
        AffineCoeffs {
            a_val: 0.0,
            b_val: DMatrix::zeros(p, p),
            tau: 0.0,
        }
    }

    /// `B(t,T)` when the system is scalar.
    pub fn b_scalar(&self) -> Option<f64> {
        (self.b_val.nrows() == 1).then(|| self.b_val[(0, 0)])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BondQuote {
    pub price: f64,
    #[serde(rename = "yield")]
    pub yield_: f64,
}

fn check_tau(tau: f64) -> Result<(), AtsError> {
    if tau >= 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(AtsError::InvalidArgument(format!(
            "tau must be >= 0, got {tau}"
        )))
    }
}

/// Closed-form coefficients. For p > 1 only `B` is closed form and `A` is
/// integrated numerically with the default step.
pub fn affine_coeffs_closed(sys: &CompanionSystem, tau: f64) -> Result<AffineCoeffs, AtsError> {
    check_tau(tau)?;
    let p = sys.p();
    if tau == 0.0 {
        return Ok(AffineCoeffs::zero(p));
    }
    let inv = sys.matrix.clone().try_inverse().ok_or(AtsError::Singular)?;
    let eye = DMatrix::<f64>::identity(p, p);
    let b_val = &inv * (linalg::expm(&(&sys.matrix * tau)) - eye);

    let a_val = if p == 1 {
        let a = sys.matrix[(0, 0)];
        let b = b_val[(0, 0)];
        // ((A^{-1} e) / 2)^2 [A B^2 - 2B + 2 tau] with e = 1
        let w = 1.0 / (2.0 * a);
        w * w * (a * b * b - 2.0 * b + 2.0 * tau)
    } else {
        affine_coeffs_ode(sys, tau, tau / 1000.0)?.a_val
    };
    Ok(AffineCoeffs { a_val, b_val, tau })
}

/// Fixed-step classical Runge–Kutta integration of the coefficient ODEs.
pub fn affine_coeffs_ode(
    sys: &CompanionSystem,
    tau: f64,
    step: f64,
) -> Result<AffineCoeffs, AtsError> {
    check_tau(tau)?;
    let p = sys.p();
    if tau == 0.0 {
        return Ok(AffineCoeffs::zero(p));
    }
    if !(step > 0.0) || step > tau / 10.0 * (1.0 + 1e-12) {
        return Err(AtsError::InvalidArgument(format!(
            "step must lie in (0, tau/10] = (0, {}], got {step}",
            tau / 10.0
        )));
    }
    let n = (tau / step).round().max(10.0) as usize;
    let dt = tau / n as f64;
    let m = &sys.matrix;
    let ones = DMatrix::<f64>::identity(p, p);
    let last = p - 1;

    let rhs = |b: &DMatrix<f64>| -> (DMatrix<f64>, f64) {
        let db = m * b + &ones;
        let c = b[(last, last)];
        (db, 0.5 * c * c)
    };

    let mut b = DMatrix::<f64>::zeros(p, p);
    let mut a = 0.0;
    for _ in 0..n {
        let (k1b, k1a) = rhs(&b);
        let (k2b, k2a) = rhs(&(&b + &k1b * (0.5 * dt)));
        let (k3b, k3a) = rhs(&(&b + &k2b * (0.5 * dt)));
        let (k4b, k4a) = rhs(&(&b + &k3b * dt));
        b += (k1b + k2b * 2.0 + k3b * 2.0 + k4b) * (dt / 6.0);
        a += (k1a + 2.0 * k2a + 2.0 * k3a + k4a) * (dt / 6.0);
    }
    Ok(AffineCoeffs {
        a_val: a,
        b_val: b,
        tau,
    })
}

/// `P = exp(A - B r)` for the scalar short rate.
pub fn bond_price(coeffs: &AffineCoeffs, r: f64) -> Result<BondQuote, AtsError> {
    let b = coeffs.b_scalar().ok_or_else(|| {
        AtsError::Unsupported(format!(
            "bond pricing needs a scalar short rate (p = 1); B(t,T) is {0}x{0}",
            coeffs.b_val.nrows()
        ))
    })?;
    let log_price = coeffs.a_val - b * r;
    let yield_ = if coeffs.tau > 0.0 {
        -log_price / coeffs.tau
    } else {
        r
    };
    Ok(BondQuote {
        price: log_price.exp(),
        yield_,
    })
}
