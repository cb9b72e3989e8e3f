//! CARMA(p,q) processes in companion state-space form.
//!
//! The output is `Y_t = b' X_t` with `dX_t = A X_t dt + e dL_t`, where `A` is
//! the companion matrix of the autoregressive polynomial
//! `a(z) = z^p + a_1 z^{p-1} + ... + a_p` and `b = (b_0, ..., b_{p-1})'` holds
//! the moving-average coefficients with `b_q = 1`.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::levy::{LevyDriver, LevyError, MomentRates};
use crate::linalg;
use crate::poly::{self, C64};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CarmaError {
    #[error("invalid CARMA specification: {0}")]
    InvalidSpec(String),
    #[error("a(z) and b(z) share the root {root} (distance {distance:e})")]
    CommonFactor { root: String, distance: f64 },
    #[error("repeated autoregressive roots (min separation {0:e}); evaluate the kernel through the matrix exponential instead")]
    RepeatedEigenvalues(f64),
    #[error("system is not stationary: max real part of eigenvalues is {0}")]
    NotStationary(f64),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Levy(#[from] LevyError),
}

/// Orders and coefficients of a CARMA(p,q) model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSpec", into = "RawSpec")]
pub struct CarmaSpec {
    a: Vec<f64>,
    b: Vec<f64>,
    q: usize,
}

#[derive(Serialize, Deserialize)]
struct RawSpec {
    a: Vec<f64>,
    b: Vec<f64>,
}

impl TryFrom<RawSpec> for CarmaSpec {
    type Error = CarmaError;
    fn try_from(raw: RawSpec) -> Result<Self, CarmaError> {
        CarmaSpec::new(raw.a, raw.b)
    }
}

impl From<CarmaSpec> for RawSpec {
    fn from(s: CarmaSpec) -> Self {
        RawSpec { a: s.a, b: s.b }
    }
}

impl CarmaSpec {
    /// `a = (a_1..a_p)`, `b = (b_0..b_{p-1})`. The MA order `q` is the index of
    /// the last nonzero entry of `b`, which must equal 1.
    pub fn new(a: Vec<f64>, b: Vec<f64>) -> Result<Self, CarmaError> {
        let p = a.len();
        if p == 0 {
            return Err(CarmaError::InvalidSpec("p must be >= 1".into()));
        }
        if b.len() != p {
            return Err(CarmaError::InvalidSpec(format!(
                "b must have p = {p} entries, got {}",
                b.len()
            )));
        }
        if a.iter().chain(&b).any(|v| !v.is_finite()) {
            return Err(CarmaError::InvalidSpec(
                "coefficients must be finite".into(),
            ));
        }
        let q = b
            .iter()
            .rposition(|&v| v != 0.0)
            .ok_or_else(|| CarmaError::InvalidSpec("b is identically zero".into()))?;
        if b[q] != 1.0 {
            return Err(CarmaError::InvalidSpec(format!(
                "normalization requires b_q = 1 for q = {q}, got {}",
                b[q]
            )));
        }
        Ok(CarmaSpec { a, b, q })
    }

    /// CAR(p): `b = (1, 0, ..., 0)`.
    pub fn car(a: Vec<f64>) -> Result<Self, CarmaError> {
        let mut b = vec![0.0; a.len()];
        if let Some(first) = b.first_mut() {
            *first = 1.0;
        }
        Self::new(a, b)
    }

    /// CARMA(p,q) from the free MA coefficients `b_0..b_{q-1}` (`b_q = 1`).
    pub fn with_ma(a: Vec<f64>, ma_head: &[f64]) -> Result<Self, CarmaError> {
        let p = a.len();
        if ma_head.len() >= p {
            return Err(CarmaError::InvalidSpec(format!(
                "q = {} must be < p = {p}",
                ma_head.len()
            )));
        }
        let mut b = vec![0.0; p];
        b[..ma_head.len()].copy_from_slice(ma_head);
        b[ma_head.len()] = 1.0;
        Self::new(a, b)
    }

    pub fn p(&self) -> usize {
        self.a.len()
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn a(&self) -> &[f64] {
        &self.a
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    /// Ascending coefficients of `a(z)`: `[a_p, ..., a_1, 1]`.
    pub fn ar_polynomial(&self) -> Vec<f64> {
        let mut c: Vec<f64> = self.a.iter().rev().copied().collect();
        c.push(1.0);
        c
    }

    /// Ascending coefficients of `b(z)` up to degree q.
    pub fn ma_polynomial(&self) -> Vec<f64> {
        self.b[..=self.q].to_vec()
    }

    pub fn b_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.b)
    }
}

/// Companion matrix, input vector and eigenvalues of a CARMA model.
#[derive(Debug, Clone)]
pub struct CompanionSystem {
    pub matrix: DMatrix<f64>,
    pub e: DVector<f64>,
    pub eigenvalues: Vec<C64>,
}

pub fn companion_matrix(a: &[f64]) -> DMatrix<f64> {
    let p = a.len();
    let mut m = DMatrix::zeros(p, p);
    for i in 0..p.saturating_sub(1) {
        m[(i, i + 1)] = 1.0;
    }
    for j in 0..p {
        m[(p - 1, j)] = -a[p - 1 - j];
    }
    m
}

pub fn build_system(spec: &CarmaSpec) -> Result<CompanionSystem, CarmaError> {
    let eigenvalues = poly::roots_ascending(&spec.ar_polynomial());
    let ma_roots = poly::roots_ascending(&spec.ma_polynomial());
    for r in &ma_roots {
        for l in &eigenvalues {
            let distance = (r - l).norm();
            if distance <= 1e-8 {
                return Err(CarmaError::CommonFactor {
                    root: format!("{l}"),
                    distance,
                });
            }
        }
    }
    let p = spec.p();
    let mut e = DVector::zeros(p);
    e[p - 1] = 1.0;
    Ok(CompanionSystem {
        matrix: companion_matrix(spec.a()),
        e,
        eigenvalues,
    })
}

impl CompanionSystem {
    pub fn p(&self) -> usize {
        self.e.len()
    }

    pub fn max_real_part(&self) -> f64 {
        self.eigenvalues
            .iter()
            .map(|l| l.re)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Strictly negative real parts.
    pub fn is_stationary(&self) -> bool {
        self.max_real_part() < 0.0
    }

    fn require_stationary(&self) -> Result<(), CarmaError> {
        if self.is_stationary() {
            Ok(())
        } else {
            Err(CarmaError::NotStationary(self.max_real_part()))
        }
    }

    /// Minimum pairwise eigenvalue separation (infinite for p = 1).
    pub fn min_eigen_separation(&self) -> f64 {
        poly::min_pairwise_distance(&self.eigenvalues)
    }
}

pub fn is_stationary(sys: &CompanionSystem) -> bool {
    sys.is_stationary()
}

/// Moving-average kernel `g(u) = sum_i b(l_i)/a'(l_i) e^{l_i u}` for distinct
/// eigenvalues.
pub fn kernel(sys: &CompanionSystem, spec: &CarmaSpec, u: f64) -> Result<f64, CarmaError> {
    if !(u >= 0.0 && u.is_finite()) {
        return Err(CarmaError::InvalidArgument(format!(
            "kernel lag must be >= 0, got {u}"
        )));
    }
    let scale = sys
        .eigenvalues
        .iter()
        .map(|l| l.norm())
        .fold(1.0f64, f64::max);
    let sep = sys.min_eigen_separation();
    if sep <= (1e-6 * scale).max(1e-8) {
        return Err(CarmaError::RepeatedEigenvalues(sep));
    }
    let ma = spec.ma_polynomial();
    // a'(l_i) as the product of root differences avoids the cancellation of
    // evaluating the derivative polynomial near clustered roots.
    let total: C64 = sys
        .eigenvalues
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            let dar: C64 = sys
                .eigenvalues
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, &m)| l - m)
                .product();
            poly::eval_ascending(&ma, l) / dar * (l * u).exp()
        })
        .sum();
    Ok(total.re)
}

/// `b' e^{Au} e` by matrix exponential; valid for repeated eigenvalues too.
pub fn kernel_expm(sys: &CompanionSystem, spec: &CarmaSpec, u: f64) -> f64 {
    let eau = linalg::expm(&(&sys.matrix * u));
    spec.b_vector().dot(&(eau * &sys.e))
}

/// Stationary second-order structure of `X` and `Y`.
#[derive(Debug, Clone)]
pub struct StationaryMoments {
    /// Stationary covariance of the state.
    pub sigma: DMatrix<f64>,
    /// Stationary mean of the state, `-A^{-1} e mean_rate`.
    pub mean: DVector<f64>,
    matrix: DMatrix<f64>,
    b: DVector<f64>,
}

impl StationaryMoments {
    /// Autocovariance of `Y` at lag `h >= 0`: `b' e^{Ah} Sigma b`.
    pub fn acvf(&self, h: f64) -> f64 {
        let eah = linalg::expm(&(&self.matrix * h.abs()));
        self.b.dot(&(eah * &self.sigma * &self.b))
    }

    pub fn output_variance(&self) -> f64 {
        self.b.dot(&(&self.sigma * &self.b))
    }

    pub fn output_mean(&self) -> f64 {
        self.b.dot(&self.mean)
    }
}

pub fn stationary_covariance(
    sys: &CompanionSystem,
    spec: &CarmaSpec,
    moments: MomentRates,
) -> Result<StationaryMoments, CarmaError> {
    sys.require_stationary()?;
    let ee = &sys.e * sys.e.transpose() * moments.variance_rate;
    let sigma = linalg::solve_lyapunov(&sys.matrix, &ee)
        .ok_or_else(|| CarmaError::InvalidArgument("singular Lyapunov operator".into()))?;
    let mean = sys
        .matrix
        .clone()
        .lu()
        .solve(&(&sys.e * (-moments.mean_rate)))
        .ok_or_else(|| CarmaError::InvalidArgument("singular companion matrix".into()))?;
    Ok(StationaryMoments {
        sigma,
        mean,
        matrix: sys.matrix.clone(),
        b: spec.b_vector(),
    })
}

/// Exact one-step discretization `X_{k+1} = F X_k + Z_k`.
///
/// `Z_k` has mean `mean_rate * input_mean` and covariance
/// `variance_rate * input_cov`.
#[derive(Debug, Clone)]
pub struct Discretization {
    pub h: f64,
    pub transition: DMatrix<f64>,
    pub input_mean: DVector<f64>,
    pub input_cov: DMatrix<f64>,
}

pub fn discretize(sys: &CompanionSystem, h: f64) -> Result<Discretization, CarmaError> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(CarmaError::InvalidArgument(format!(
            "step h must be > 0, got {h}"
        )));
    }
    // The Van Loan block contains e^{-Ah}, which swamps the covariance with
    // cancellation error once the system is stiff on the scale of h. Stable
    // systems then use Q = S - F S F' with S the stationary covariance.
    let stiff = h * sys.matrix.abs().row_sum().max() > 1.0;
    let (transition, input_cov) = match (stiff && sys.is_stationary())
        .then(|| linalg::solve_lyapunov(&sys.matrix, &(&sys.e * sys.e.transpose())))
        .flatten()
    {
        Some(stat) => {
            let f = linalg::expm(&(&sys.matrix * h));
            let q = &stat - &f * &stat * f.transpose();
            (f, linalg::symmetrize(&q))
        }
        None => linalg::van_loan(&sys.matrix, &sys.e, h),
    };
    let input_mean = linalg::integrated_exp_times(&sys.matrix, &sys.e, h);
    Ok(Discretization {
        h,
        transition,
        input_mean,
        input_cov,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialState {
    /// Gaussian draw with the stationary mean and covariance.
    Stationary,
    Fixed(Vec<f64>),
}

/// Sampled state and output on the grid `t_k = k h`, `k = 0..=N`.
#[derive(Debug, Clone)]
pub struct StatePath {
    pub h: f64,
    pub states: Vec<DVector<f64>>,
    pub outputs: Vec<f64>,
}

impl StatePath {
    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }

    pub fn n_steps(&self) -> usize {
        self.outputs.len().saturating_sub(1)
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.h
    }

    /// Writes `time,Y,X1..Xp` rows (with a header line).
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let p = self.states.first().map_or(0, |s| s.len());
        write!(out, "time,Y")?;
        for i in 1..=p {
            write!(out, ",X{i}")?;
        }
        writeln!(out)?;
        for (k, (x, y)) in self.states.iter().zip(&self.outputs).enumerate() {
            write!(out, "{},{}", self.time(k), y)?;
            for v in x.iter() {
                write!(out, ",{v}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Simulates the state on a uniform grid by exact discretization.
///
/// Compound Poisson drivers propagate each sampled jump exactly; Brownian and
/// NIG drivers use a Gaussian input with matching first two moments.
pub fn simulate<R: Rng + ?Sized>(
    spec: &CarmaSpec,
    driver: &LevyDriver,
    h: f64,
    n_steps: usize,
    init: &InitialState,
    rng: &mut R,
) -> Result<StatePath, CarmaError> {
    if n_steps == 0 {
        return Err(CarmaError::InvalidArgument("n_steps must be > 0".into()));
    }
    let sys = build_system(spec)?;
    let disc = discretize(&sys, h)?;
    let p = spec.p();
    let b = spec.b_vector();
    let moments = driver.moment_rates();

    let mut x = match init {
        InitialState::Fixed(v) => {
            if v.len() != p {
                return Err(CarmaError::InvalidArgument(format!(
                    "initial state has {} entries, expected {p}",
                    v.len()
                )));
            }
            DVector::from_column_slice(v)
        }
        InitialState::Stationary => {
            let st = stationary_covariance(&sys, spec, moments)?;
            let factor = linalg::psd_factor(&st.sigma);
            let z = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
            &st.mean + factor * z
        }
    };

    let gaussian_input = if driver.has_jump_representation() {
        None
    } else {
        let mean = &disc.input_mean * moments.mean_rate;
        let factor = linalg::psd_factor(&(&disc.input_cov * moments.variance_rate));
        Some((mean, factor))
    };

    let mut states = Vec::with_capacity(n_steps + 1);
    let mut outputs = Vec::with_capacity(n_steps + 1);
    outputs.push(b.dot(&x));
    states.push(x.clone());
    for _ in 0..n_steps {
        let mut next = &disc.transition * &x;
        match &gaussian_input {
            Some((mean, factor)) => {
                let z = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
                next += mean + factor * z;
            }
            None => {
                let jumps = driver.sample_jumps(h, rng)?;
                for (t, size) in jumps.times.iter().zip(&jumps.sizes) {
                    let prop = linalg::expm(&(&sys.matrix * (h - t)));
                    next += prop * &sys.e * *size;
                }
            }
        }
        x = next;
        outputs.push(b.dot(&x));
        states.push(x.clone());
    }
    Ok(StatePath { h, states, outputs })
}

/// Trapezoidal `int Y du` between grid indices.
pub fn integrated_output(path: &StatePath, from: usize, to: usize) -> Result<f64, CarmaError> {
    if from >= to || to >= path.len() {
        return Err(CarmaError::InvalidArgument(format!(
            "index range {from}..{to} invalid for a path with {} points",
            path.len()
        )));
    }
    let y = &path.outputs;
    let interior: f64 = y[from + 1..to].iter().sum();
    Ok(path.h * (0.5 * (y[from] + y[to]) + interior))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeded_rng;

    fn example_52() -> CarmaSpec {
        CarmaSpec::with_ma(vec![1.39631, 0.05029], &[2.0]).unwrap()
    }

    #[test]
    fn companion_layout() {
        let m = companion_matrix(&[1.0, 2.0, 3.0]);
        let expected =
            DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0, -3.0, -2.0, -1.0]);
        assert_eq!(m, expected);
        assert_eq!(companion_matrix(&[6.0])[(0, 0)], -6.0);
    }

    #[test]
    fn car1_system() {
        let spec = CarmaSpec::car(vec![6.0]).unwrap();
        let sys = build_system(&spec).unwrap();
        assert_eq!(sys.matrix[(0, 0)], -6.0);
        assert!((sys.eigenvalues[0] - C64::new(-6.0, 0.0)).norm() < 1e-14);
        assert!(sys.is_stationary());
        assert!(!build_system(&CarmaSpec::car(vec![-1.0]).unwrap())
            .unwrap()
            .is_stationary());
    }

    #[test]
    fn example_52_eigenvalues() {
        // quadratic formula oracle for z^2 + 1.39631 z + 0.05029
        let (b, c) = (1.39631f64, 0.05029f64);
        let disc = (b * b - 4.0 * c).sqrt();
        let r1 = (-b + disc) / 2.0;
        let r2 = (-b - disc) / 2.0;
        assert!((r1 + 0.03700).abs() < 5e-5 && (r2 + 1.35931).abs() < 5e-5);
        let sys = build_system(&example_52()).unwrap();
        assert!((sys.eigenvalues[0].re - r2).abs() < 1e-12);
        assert!((sys.eigenvalues[1].re - r1).abs() < 1e-12);
        assert!(sys.is_stationary());
    }

    #[test]
    fn unit_roots_of_z2_minus_1() {
        let sys = build_system(&CarmaSpec::car(vec![0.0, -1.0]).unwrap()).unwrap();
        assert!((sys.eigenvalues[0].re + 1.0).abs() < 1e-14);
        assert!((sys.eigenvalues[1].re - 1.0).abs() < 1e-14);
        assert!(!sys.is_stationary());
    }

    #[test]
    fn zero_real_part_is_not_stationary() {
        // z^2 + 1 -> +-i
        let sys = build_system(&CarmaSpec::car(vec![0.0, 1.0]).unwrap()).unwrap();
        assert!(!sys.is_stationary());
    }

    #[test]
    fn common_factor_rejected() {
        // a(z) = (z+1)(z+2), b(z) = 1 + z
        let spec = CarmaSpec::with_ma(vec![3.0, 2.0], &[1.0]).unwrap();
        assert!(matches!(
            build_system(&spec),
            Err(CarmaError::CommonFactor { .. })
        ));
    }

    #[test]
    fn spec_validation() {
        assert!(CarmaSpec::new(vec![], vec![]).is_err());
        assert!(CarmaSpec::new(vec![1.0, 2.0], vec![1.0]).is_err());
        assert!(CarmaSpec::new(vec![1.0, 2.0], vec![2.0, 3.0]).is_err());
        assert!(CarmaSpec::new(vec![1.0, 2.0], vec![0.0, 0.0]).is_err());
        assert!(CarmaSpec::with_ma(vec![1.0], &[2.0]).is_err());
        let s = CarmaSpec::new(vec![1.0, 2.0, 3.0], vec![0.5, 1.0, 0.0]).unwrap();
        assert_eq!(s.q(), 1);
    }

    #[test]
    fn kernel_examples() {
        let spec = CarmaSpec::car(vec![6.0]).unwrap();
        let sys = build_system(&spec).unwrap();
        assert!((kernel(&sys, &spec, 0.0).unwrap() - 1.0).abs() < 1e-15);
        assert!((kernel(&sys, &spec, 0.5).unwrap() - (-3.0f64).exp()).abs() < 1e-15);
        assert!(kernel(&sys, &spec, -1.0).is_err());

        let spec = example_52();
        let sys = build_system(&spec).unwrap();
        let pf = kernel(&sys, &spec, 1.0).unwrap();
        let mx = kernel_expm(&sys, &spec, 1.0);
        assert!((pf - mx).abs() < 1e-12, "{pf} vs {mx}");
    }

    #[test]
    fn kernel_refuses_repeated_roots() {
        // (z+1)^2
        let spec = CarmaSpec::car(vec![2.0, 1.0]).unwrap();
        let sys = build_system(&spec).unwrap();
        assert!(matches!(
            kernel(&sys, &spec, 1.0),
            Err(CarmaError::RepeatedEigenvalues(_))
        ));
        // matrix-exponential path still works: u e^{-u}
        assert!((kernel_expm(&sys, &spec, 1.0) - (-1.0f64).exp()).abs() < 1e-14);
    }

    #[test]
    fn car1_stationary_variance() {
        let spec = CarmaSpec::car(vec![6.0]).unwrap();
        let sys = build_system(&spec).unwrap();
        let m = MomentRates {
            mean_rate: 0.0,
            variance_rate: 1.0,
        };
        let st = stationary_covariance(&sys, &spec, m).unwrap();
        assert!((st.acvf(0.0) - 1.0 / 12.0).abs() < 1e-15);
        assert!((st.acvf(1.0) - (-6.0f64).exp() / 12.0).abs() < 1e-15);
        assert!(st.acvf(50.0).abs() < 1e-20);
    }

    #[test]
    fn stationary_covariance_requires_stationarity() {
        let spec = CarmaSpec::car(vec![-1.0]).unwrap();
        let sys = build_system(&spec).unwrap();
        let m = MomentRates {
            mean_rate: 0.0,
            variance_rate: 1.0,
        };
        assert!(matches!(
            stationary_covariance(&sys, &spec, m),
            Err(CarmaError::NotStationary(_))
        ));
    }

    #[test]
    fn lyapunov_residual_carma21() {
        let spec = example_52();
        let sys = build_system(&spec).unwrap();
        let m = MomentRates {
            mean_rate: 0.0,
            variance_rate: 2.0,
        };
        let st = stationary_covariance(&sys, &spec, m).unwrap();
        let res = &sys.matrix * &st.sigma
            + &st.sigma * sys.matrix.transpose()
            + &sys.e * sys.e.transpose() * 2.0;
        assert!(res.norm() < 1e-10);
        assert!(st.acvf(0.0) > 0.0);
        assert!(st.acvf(400.0).abs() < 1e-3 * st.acvf(0.0));
    }

    #[test]
    fn zero_noise_zero_start_stays_zero() {
        let spec = example_52();
        let d = LevyDriver::compound_poisson(0.0, 1.0, 1.0).unwrap();
        let mut rng = seeded_rng(1);
        let path = simulate(
            &spec,
            &d,
            1.0,
            50,
            &InitialState::Fixed(vec![0.0, 0.0]),
            &mut rng,
        )
        .unwrap();
        assert!(path.outputs.iter().all(|&y| y == 0.0));
        assert!(path.states.iter().all(|x| x.iter().all(|&v| v == 0.0)));

        let d = LevyDriver::brownian(0.0, 0.0).unwrap();
        let path = simulate(
            &spec,
            &d,
            1.0,
            50,
            &InitialState::Fixed(vec![0.0, 0.0]),
            &mut rng,
        )
        .unwrap();
        assert!(path.outputs.iter().all(|&y| y == 0.0));
    }

    #[test]
    fn outputs_are_exact_dot_products() {
        let spec = example_52();
        let d = LevyDriver::nig(3.0, 0.5, 1.0, -0.1).unwrap();
        let mut rng = seeded_rng(8);
        let path = simulate(&spec, &d, 0.5, 200, &InitialState::Stationary, &mut rng).unwrap();
        let b = spec.b_vector();
        for (x, y) in path.states.iter().zip(&path.outputs) {
            assert_eq!(b.dot(x), *y);
        }
    }

    #[test]
    fn simulate_argument_errors() {
        let spec = CarmaSpec::car(vec![6.0]).unwrap();
        let d = LevyDriver::brownian(0.0, 1.0).unwrap();
        let mut rng = seeded_rng(1);
        assert!(simulate(&spec, &d, 1.0, 0, &InitialState::Stationary, &mut rng).is_err());
        assert!(simulate(&spec, &d, 0.0, 10, &InitialState::Stationary, &mut rng).is_err());
        assert!(simulate(&spec, &d, -1.0, 10, &InitialState::Stationary, &mut rng).is_err());
        let bad = CarmaSpec::car(vec![-1.0]).unwrap();
        assert!(matches!(
            simulate(&bad, &d, 1.0, 10, &InitialState::Stationary, &mut rng),
            Err(CarmaError::NotStationary(_))
        ));
    }

    #[test]
    fn same_seed_same_path() {
        let spec = example_52();
        let d = LevyDriver::compound_poisson(2.0, 0.1, 1.0).unwrap();
        let a = simulate(
            &spec,
            &d,
            1.0,
            100,
            &InitialState::Stationary,
            &mut seeded_rng(5),
        )
        .unwrap();
        let b = simulate(
            &spec,
            &d,
            1.0,
            100,
            &InitialState::Stationary,
            &mut seeded_rng(5),
        )
        .unwrap();
        assert_eq!(a.outputs, b.outputs);
    }

    fn path_from(outputs: Vec<f64>, h: f64) -> StatePath {
        let states = outputs
            .iter()
            .map(|&y| DVector::from_element(1, y))
            .collect();
        StatePath { h, states, outputs }
    }

    #[test]
    fn integrated_output_trapezoid() {
        let p = path_from(vec![2.5; 11], 0.3);
        assert!((integrated_output(&p, 0, 10).unwrap() - 2.5 * 10.0 * 0.3).abs() < 1e-14);
        let p = path_from(vec![0.0, 1.0], 1.0);
        assert_eq!(integrated_output(&p, 0, 1).unwrap(), 0.5);
        assert!(integrated_output(&p, 1, 1).is_err());
        assert!(integrated_output(&p, 0, 2).is_err());
    }

    #[test]
    fn stiff_discretization_matches_eigen_closed_form() {
        let (a1, a2) = (117.05307265673179, 41.1337118600929);
        let spec = CarmaSpec::new(vec![a1, a2], vec![1.6225847869056083e-5, 1.0]).unwrap();
        let sys = build_system(&spec).unwrap();
        let h = 1.0;
        let d = discretize(&sys, h).unwrap();
        let disc = (a1 * a1 - 4.0 * a2).sqrt();
        let lam = [(-a1 + disc) / 2.0, (-a1 - disc) / 2.0];
        // V = [[1, 1], [l0, l1]], w = V^{-1} (0, 1)'.
        let w = [-1.0 / (lam[1] - lam[0]), 1.0 / (lam[1] - lam[0])];
        let v = |i: usize, k: usize| if i == 0 { 1.0 } else { lam[k] };
        for i in 0..2 {
            for j in 0..2 {
                let mut q = 0.0;
                let mut f = 0.0;
                for k in 0..2 {
                    for l in 0..2 {
                        let s = lam[k] + lam[l];
                        q += v(i, k) * w[k] * w[l] * v(j, l) * ((s * h).exp() - 1.0) / s;
                    }
                    // F = V diag(e^{lh}) V^{-1}; rows of V^{-1} are (-l1, 1) and (l0, -1) over (l0 - l1).
                    let vinv = if k == 0 {
                        [-lam[1], 1.0]
                    } else {
                        [lam[0], -1.0]
                    };
                    f += v(i, k) * (lam[k] * h).exp() * vinv[j] / (lam[0] - lam[1]);
                }
                let qe = d.input_cov[(i, j)];
                assert!(
                    (qe - q).abs() <= 1e-12 * q.abs().max(1e-6),
                    "Q[{i}{j}] {qe} vs {q}"
                );
                assert!((d.transition[(i, j)] - f).abs() <= 1e-12, "F[{i}{j}]");
            }
        }
    }

    #[test]
    fn integrated_output_against_simpson() {
        // smooth output sampled finely: trapezoid and Simpson agree to O(h^2)
        let h = 0.01;
        let ys: Vec<f64> = (0..=200)
            .map(|k| (k as f64 * h * 3.0).sin() + 0.2 * (k as f64 * h))
            .collect();
        let p = path_from(ys.clone(), h);
        let trap = integrated_output(&p, 0, 200).unwrap();
        let simpson = h / 3.0
            * (ys[0]
                + ys[200]
                + (1..200)
                    .map(|k| if k % 2 == 1 { 4.0 * ys[k] } else { 2.0 * ys[k] })
                    .sum::<f64>());
        assert!((trap - simpson).abs() < 10.0 * h * h, "{trap} vs {simpson}");
    }

    #[test]
    fn csv_export_layout() {
        let spec = example_52();
        let d = LevyDriver::brownian(0.0, 1.0).unwrap();
        let path = simulate(
            &spec,
            &d,
            1.0,
            3,
            &InitialState::Stationary,
            &mut seeded_rng(2),
        )
        .unwrap();
        let mut buf = Vec::new();
        path.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "time,Y,X1,X2");
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[1].split(',').count(), 4);
    }
}
