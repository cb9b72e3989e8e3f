//! Small dense helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

/// `exp(m)` by Padé scaling-and-squaring.
pub(crate) fn expm(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.clone().exp()
}

/// `(int_0^h e^{Au} du) v` from the top-right block of `exp([[A, v], [0, 0]] h)`.
pub(crate) fn integrated_exp_times(a: &DMatrix<f64>, v: &DVector<f64>, h: f64) -> DVector<f64> {
    let p = a.nrows();
    let mut block = DMatrix::zeros(p + 1, p + 1);
    block.view_mut((0, 0), (p, p)).copy_from(&(a * h));
    block.view_mut((0, p), (p, 1)).copy_from(&(v * h));
    let e = expm(&block);
    e.view((0, p), (p, 1)).column(0).into_owned()
}

/// Van Loan: returns `(e^{Ah}, int_0^h e^{Au} g g' e^{A'u} du)`.
pub(crate) fn van_loan(a: &DMatrix<f64>, g: &DVector<f64>, h: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let p = a.nrows();
    let mut block = DMatrix::zeros(2 * p, 2 * p);
    block.view_mut((0, 0), (p, p)).copy_from(&(-a * h));
    block
        .view_mut((0, p), (p, p))
        .copy_from(&(g * g.transpose() * h));
    block
        .view_mut((p, p), (p, p))
        .copy_from(&(a.transpose() * h));
    let e = expm(&block);
    let transition = e.view((p, p), (p, p)).transpose();
    let f12 = e.view((0, p), (p, p)).into_owned();
    let cov = &transition * f12;
    (transition, symmetrize(&cov))
}

pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Solves `A S + S A' = -Q` through the Kronecker form.
pub(crate) fn solve_lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let p = a.nrows();
    let eye = DMatrix::<f64>::identity(p, p);
    let op = eye.kronecker(a) + a.kronecker(&eye);
    let rhs = DVector::from_iterator(p * p, q.iter().map(|v| -v));
    let sol = op.lu().solve(&rhs)?;
    Some(symmetrize(&DMatrix::from_column_slice(
        p,
        p,
        sol.as_slice(),
    )))
}

/// Symmetric square root factor `L` with `L L' = m`, clamping tiny negative
/// eigenvalues produced by roundoff.
pub(crate) fn psd_factor(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = symmetrize(m).symmetric_eigen();
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots)
}
