//! Small dense complex linear-algebra helpers shared by the estimation,
//! combining and deterministic modules.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use num_complex::Complex64;

pub type CMat = DMatrix<Complex64>;
pub type CVec = DVector<Complex64>;

/// Relative eigenvalue cut used by the Hermitian pseudo-inverse.
pub const PINV_REL_TOL: f64 = 1e-12;

#[inline]
pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

#[inline]
pub fn cr(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

/// Real part of the trace.
pub fn trace_re(a: &CMat) -> f64 {
    (0..a.nrows()).map(|i| a[(i, i)].re).sum()
}

/// `tr(A B)` without forming the product.
pub fn trace_prod(a: &CMat, b: &CMat) -> Complex64 {
    debug_assert_eq!(a.ncols(), b.nrows());
    debug_assert_eq!(a.nrows(), b.ncols());
    let mut acc = Complex64::new(0.0, 0.0);
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            acc += a[(i, j)] * b[(j, i)];
        }
    }
    acc
}

/// `(A + A^H) / 2`.
pub fn hermitize(a: &CMat) -> CMat {
    let ah = a.adjoint();
    (a + ah).map(|z| z * 0.5)
}

/// Largest absolute deviation from Hermitian symmetry relative to the largest entry.
pub fn hermitian_defect(a: &CMat) -> f64 {
    let scale = a.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if scale == 0.0 {
        return 0.0;
    }
    let mut worst: f64 = 0.0;
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            worst = worst.max((a[(i, j)] - a[(j, i)].conj()).norm());
        }
    }
    worst / scale
}

/// Eigenvalues (ascending) of a Hermitian matrix.
pub fn hermitian_eigenvalues(a: &CMat) -> Vec<f64> {
    let eig = hermitize(a).symmetric_eigen();
    let mut v: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    v.sort_by(|x, y| x.partial_cmp(y).unwrap());
    v
}

/// Smallest eigenvalue of a Hermitian matrix.
pub fn min_eigenvalue(a: &CMat) -> f64 {
    hermitian_eigenvalues(a).first().copied().unwrap_or(0.0)
}

/// True when `a` is PSD up to `rel_tol` times its largest absolute eigenvalue.
pub fn is_psd(a: &CMat, rel_tol: f64) -> bool {
    let ev = hermitian_eigenvalues(a);
    let scale = ev.iter().map(|x| x.abs()).fold(0.0, f64::max);
    ev.first().map_or(true, |&m| m >= -rel_tol * scale.max(f64::MIN_POSITIVE))
}

/// Hermitian square root `A^{1/2}` with negative eigenvalues clipped to zero.
pub fn hermitian_sqrt(a: &CMat) -> CMat {
    let eig = hermitize(a).symmetric_eigen();
    let u = &eig.eigenvectors;
    let d = eig.eigenvalues.map(|x| cr(x.max(0.0).sqrt()));
    let ud = CMat::from_fn(u.nrows(), u.ncols(), |i, j| u[(i, j)] * d[j]);
    ud * u.adjoint()
}

/// Moore-Penrose inverse of a Hermitian matrix, dropping eigenvalues below
/// `rel_tol` times the largest one.
pub fn hermitian_pinv(a: &CMat, rel_tol: f64) -> CMat {
    let n = a.nrows();
    let eig = hermitize(a).symmetric_eigen();
    let lmax = eig.eigenvalues.iter().map(|x| x.abs()).fold(0.0, f64::max);
    let cut = rel_tol * lmax;
    let u = &eig.eigenvectors;
    let mut out = CMat::zeros(n, n);
    for (j, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam.abs() <= cut || lam == 0.0 {
            continue;
        }
        let col = u.column(j);
        out += (&col * col.adjoint()).map(|z| z / lam);
    }
    out
}

/// Factorization of a Hermitian PD system with a one-shot jitter retry and a
/// pseudo-inverse fallback.
pub enum HermitianSolver {
    Chol(Cholesky<Complex64, Dyn>),
    Pinv(CMat),
}

impl HermitianSolver {
    /// Cholesky; on failure add `1e-12 * tr(A)/n` to the diagonal and retry
    /// once; if that still fails use the eigen pseudo-inverse.
    pub fn new(a: &CMat) -> Self {
        let n = a.nrows();
        if let Some(ch) = Cholesky::new(a.clone()) {
            return HermitianSolver::Chol(ch);
        }
        let jitter = 1e-12 * trace_re(a).abs() / n.max(1) as f64;
        let mut aj = a.clone();
        for i in 0..n {
            aj[(i, i)] += cr(jitter);
        }
        if let Some(ch) = Cholesky::new(aj) {
            return HermitianSolver::Chol(ch);
        }
        HermitianSolver::Pinv(hermitian_pinv(a, PINV_REL_TOL))
    }

    pub fn solve_vec(&self, b: &CVec) -> CVec {
        match self {
            HermitianSolver::Chol(ch) => ch.solve(b),
            HermitianSolver::Pinv(p) => p * b,
        }
    }

    pub fn solve_mat(&self, b: &CMat) -> CMat {
        match self {
            HermitianSolver::Chol(ch) => ch.solve(b),
            HermitianSolver::Pinv(p) => p * b,
        }
    }

    pub fn inverse(&self) -> CMat {
        match self {
            HermitianSolver::Chol(ch) => ch.inverse(),
            HermitianSolver::Pinv(p) => p.clone(),
        }
    }
}

/// `x^H A x` for Hermitian `A` (real part).
pub fn quad_form(a: &CMat, x: &CVec) -> f64 {
    (x.adjoint() * (a * x))[(0, 0)].re
}

/// Rank-one Hermitian update `A += w * x x^H`.
pub fn add_outer(a: &mut CMat, x: &CVec, w: f64) {
    let n = x.len();
    for j in 0..n {
        let xj = x[j].conj() * w;
        if xj == Complex64::new(0.0, 0.0) {
            continue;
        }
        for i in 0..n {
            a[(i, j)] += x[i] * xj;
        }
    }
}

/// Spectral radius of a real square matrix (via complex eigenvalues of the
/// Schur form).
pub fn spectral_radius(f: &DMatrix<f64>) -> f64 {
    if f.nrows() == 0 {
        return 0.0;
    }
    f.clone()
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn herm_example() -> CMat {
        CMat::from_row_slice(
            3,
            3,
            &[
                cr(4.0),
                c(1.0, 0.5),
                c(0.0, -0.2),
                c(1.0, -0.5),
                cr(3.0),
                c(0.3, 0.0),
                c(0.0, 0.2),
                c(0.3, 0.0),
                cr(2.0),
            ],
        )
    }

    #[test]
    fn sqrt_squares_back() {
        let a = herm_example();
        let s = hermitian_sqrt(&a);
        assert!((&s * &s - &a).norm() < 1e-12);
    }

    #[test]
    fn pinv_of_pd_is_inverse() {
        let a = herm_example();
        let p = hermitian_pinv(&a, PINV_REL_TOL);
        assert!((&a * &p - CMat::identity(3, 3)).norm() < 1e-12);
    }

    #[test]
    fn pinv_of_rank_one() {
        let x = CVec::from_vec(vec![c(1.0, 1.0), cr(2.0)]);
        let a = &x * x.adjoint();
        let p = hermitian_pinv(&a, PINV_REL_TOL);
        assert!((&a * &p * &a - &a).norm() < 1e-12);
    }

    #[test]
    fn solver_falls_back_on_singular() {
        let x = CVec::from_vec(vec![c(1.0, 1.0), cr(2.0)]);
        let a = &x * x.adjoint();
        let s = HermitianSolver::new(&a);
        let y = s.solve_vec(&x);
        assert!((&a * y - &x).norm() < 1e-9);
    }

    #[test]
    fn trace_prod_matches_product() {
        let a = herm_example();
        let b = a.map(|z| z * c(0.5, 0.1));
        let t = trace_prod(&a, &b);
        let direct = (&a * &b).trace();
        assert!((t - direct).norm() < 1e-12);
    }

    #[test]
    fn spectral_radius_of_diag() {
        let f = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, -0.7]);
        assert!((spectral_radius(&f) - 0.7).abs() < 1e-12);
    }
}
