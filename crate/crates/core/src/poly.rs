//! Real polynomials in ascending or monic-descending form.

use nalgebra::Complex;

pub(crate) type C64 = Complex<f64>;

/// Evaluates `c[0] + c[1] z + ... + c[n] z^n` (ascending coefficients).
pub(crate) fn eval_ascending(coeffs: &[f64], z: C64) -> C64 {
    coeffs
        .iter()
        .rev()
        .fold(C64::new(0.0, 0.0), |acc, &c| acc * z + c)
}

/// Unevaluated sum `hi + lo` carrying about twice the precision of `f64`.
#[derive(Clone, Copy)]
struct DoubleDouble {
    hi: f64,
    lo: f64,
}

impl DoubleDouble {
    fn from(x: f64) -> Self {
        DoubleDouble { hi: x, lo: 0.0 }
    }

    fn renorm(s: f64, e: f64) -> Self {
        let hi = s + e;
        DoubleDouble {
            hi,
            lo: e - (hi - s),
        }
    }

    fn add(self, other: Self) -> Self {
        let s = self.hi + other.hi;
        let bb = s - self.hi;
        let e = (self.hi - (s - bb)) + (other.hi - bb);
        Self::renorm(s, e + self.lo + other.lo)
    }

    fn neg(self) -> Self {
        DoubleDouble {
            hi: -self.hi,
            lo: -self.lo,
        }
    }

    fn mul_f64(self, x: f64) -> Self {
        let p = self.hi * x;
        let e = self.hi.mul_add(x, -p);
        Self::renorm(p, e + self.lo * x)
    }
}

/// [`eval_ascending`] with double-double accumulation, for residuals of
/// clustered roots where plain Horner loses the leading digits.
pub(crate) fn eval_ascending_dd(coeffs: &[f64], z: C64) -> C64 {
    let zero = DoubleDouble::from(0.0);
    let (mut re, mut im) = (zero, zero);
    for &c in coeffs.iter().rev() {
        let next_re = re
            .mul_f64(z.re)
            .add(im.mul_f64(z.im).neg())
            .add(DoubleDouble::from(c));
        let next_im = re.mul_f64(z.im).add(im.mul_f64(z.re));
        re = next_re;
        im = next_im;
    }
    C64::new(re.hi + re.lo, im.hi + im.lo)
}

/// Ascending coefficients of the derivative.
pub(crate) fn derivative_ascending(coeffs: &[f64]) -> Vec<f64> {
    coeffs
        .iter()
        .enumerate()
        .skip(1)
        .map(|(k, &c)| k as f64 * c)
        .collect()
}

/// Roots of a real polynomial given in ascending order with nonzero leading
/// coefficient, by simultaneous Aberth–Ehrlich iteration.
pub(crate) fn roots_ascending(coeffs: &[f64]) -> Vec<C64> {
    let n = coeffs.len().saturating_sub(1);
    if n == 0 {
        return Vec::new();
    }
    let lead = coeffs[n];
    let monic: Vec<f64> = coeffs.iter().map(|c| c / lead).collect();
    if n == 1 {
        return vec![C64::new(-monic[0], 0.0)];
    }
    let deriv = derivative_ascending(&monic);

    // Cauchy bound for the initial circle.
    let radius = 1.0 + monic[..n].iter().fold(0.0f64, |m, c| m.max(c.abs()));
    let mut z: Vec<C64> = (0..n)
        .map(|k| {
            let angle = 2.0 * std::f64::consts::PI * (k as f64 + 0.25) / n as f64 + 0.4;
            C64::from_polar(0.5 * radius, angle)
        })
        .collect();

    for _ in 0..1000 {
        let mut max_step = 0.0f64;
        for k in 0..n {
            let pz = eval_ascending(&monic, z[k]);
            if pz.norm() == 0.0 {
                continue;
            }
            let ratio = pz / eval_ascending(&deriv, z[k]);
            let repulsion: C64 = (0..n)
                .filter(|&j| j != k)
                .map(|j| C64::new(1.0, 0.0) / (z[k] - z[j]))
                .sum();
            let step = ratio / (C64::new(1.0, 0.0) - ratio * repulsion);
            if step.re.is_finite() && step.im.is_finite() {
                z[k] -= step;
                max_step = max_step.max(step.norm() / z[k].norm().max(1e-300));
            }
        }
        if max_step < 1e-15 {
            break;
        }
    }

    // Newton polish with an accurately evaluated residual, then snap
    // numerically-real roots onto the real axis.
    for root in z.iter_mut() {
        for _ in 0..4 {
            let d = eval_ascending(&deriv, *root);
            if d.norm() == 0.0 {
                break;
            }
            let step = eval_ascending_dd(&monic, *root) / d;
            if !(step.re.is_finite() && step.im.is_finite()) || step.norm() == 0.0 {
                break;
            }
            *root -= step;
        }
        if root.im.abs() <= 1e-13 * root.norm().max(1.0) {
            root.im = 0.0;
        }
    }
    z.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    z
}

/// Ascending coefficients of `prod (z - r_i)` for real or conjugate-paired roots.
#[cfg(test)]
pub(crate) fn from_roots(roots: &[C64]) -> Vec<f64> {
    let mut c = vec![C64::new(1.0, 0.0)];
    for r in roots {
        let mut next = vec![C64::new(0.0, 0.0); c.len() + 1];
        for (k, ck) in c.iter().enumerate() {
            next[k + 1] += ck;
            next[k] -= ck * r;
        }
        c = next;
    }
    c.into_iter().map(|v| v.re).collect()
}

pub(crate) fn min_pairwise_distance(roots: &[C64]) -> f64 {
    let mut m = f64::INFINITY;
    for i in 0..roots.len() {
        for j in (i + 1)..roots.len() {
            m = m.min((roots[i] - roots[j]).norm());
        }
    }
    m
}
