//! Small dense complex linear algebra helpers on top of `nalgebra`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;

pub const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
pub const ONE: C64 = C64 { re: 1.0, im: 0.0 };
pub const I: C64 = C64 { re: 0.0, im: 1.0 };

/// Frobenius norm.
pub fn fro(a: &CMat) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// `(a + a*) / 2`.
pub fn hermitian_part(a: &CMat) -> CMat {
    (a + a.adjoint()) * C64::new(0.5, 0.0)
}

/// Relative deviation `|a - a*| / max(|a|, tiny)`.
pub fn hermitian_deviation(a: &CMat) -> f64 {
    let scale = fro(a).max(f64::MIN_POSITIVE);
    fro(&(a - a.adjoint())) / scale
}

/// Eigen-decomposition of a hermitian matrix, eigenvalues ascending.
pub fn eigh(a: &CMat) -> (Vec<f64>, CMat) {
    let d = a.nrows();
    let eig = hermitian_part(a).symmetric_eigen();
    let mut idx: Vec<usize> = (0..d).collect();
    idx.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let vals = idx.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vecs = CMat::zeros(d, d);
    for (c, &i) in idx.iter().enumerate() {
        vecs.set_column(c, &eig.eigenvectors.column(i));
    }
    (vals, vecs)
}

/// Ascending eigenvalues of a hermitian matrix.
pub fn eigvalsh(a: &CMat) -> Vec<f64> {
    let mut v: Vec<f64> = hermitian_part(a)
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .collect();
    v.sort_by(f64::total_cmp);
    v
}

pub fn min_eigenvalue(a: &CMat) -> f64 {
    eigvalsh(a)[0]
}

/// Smallest eigenvalue with a unit eigenvector.
pub fn min_eigenpair(a: &CMat) -> (f64, CVec) {
    let (vals, vecs) = eigh(a);
    (vals[0], vecs.column(0).into_owned())
}

/// `f(a)` for hermitian `a` through its spectral decomposition.
pub fn herm_fn(a: &CMat, f: impl Fn(f64) -> f64) -> CMat {
    let (vals, vecs) = eigh(a);
    let d = DVector::from_iterator(vals.len(), vals.iter().map(|&x| C64::new(f(x), 0.0)));
    &vecs * CMat::from_diagonal(&d) * vecs.adjoint()
}

/// Lower Cholesky factor of a hermitian positive definite matrix.
pub fn cholesky_lower(h: &CMat) -> Result<CMat> {
    let hs = hermitian_part(h);
    let fail = || Error::NonPositiveMetric {
        min_eigenvalue: min_eigenvalue(&hs),
    };
    let l = hs.clone().cholesky().ok_or_else(fail)?.l();
    // Complex square roots succeed on negative pivots, so inspect the diagonal.
    if (0..l.nrows()).any(|i| !(l[(i, i)].re > 0.0) || l[(i, i)].im.abs() > 1e-12 * l[(i, i)].re) {
        return Err(fail());
    }
    Ok(l)
}

/// Inverse of a lower triangular matrix.
pub fn lower_inverse(l: &CMat) -> CMat {
    let d = l.nrows();
    let mut x = CMat::identity(d, d);
    l.solve_lower_triangular_mut(&mut x);
    x
}

/// `log det` of a hermitian positive definite matrix via its eigenvalues.
pub fn logdet_hpd(a: &CMat) -> Option<f64> {
    let v = eigvalsh(a);
    if v[0] <= 0.0 {
        return None;
    }
    Some(v.iter().map(|x| x.ln()).sum())
}

/// Inverse of a hermitian positive definite matrix.
pub fn inv_hpd(a: &CMat) -> Option<CMat> {
    let hs = hermitian_part(a);
    if min_eigenvalue(&hs) <= 0.0 {
        return None;
    }
    hs.cholesky().map(|c| c.inverse())
}

/// Inverse of a general square matrix.
pub fn inv(a: &CMat) -> Option<CMat> {
    a.clone().try_inverse()
}

/// Determinant of a general square matrix.
pub fn det(a: &CMat) -> C64 {
    a.clone().determinant()
}

/// Trace.
pub fn tr(a: &CMat) -> C64 {
    a.trace()
}

/// Real part of `tr(a b)`.
pub fn re_tr_prod(a: &CMat, b: &CMat) -> f64 {
    let d = a.nrows();
    let mut s = 0.0;
    for i in 0..d {
        for k in 0..d {
            s += (a[(i, k)] * b[(k, i)]).re;
        }
    }
    s
}

/// Real orthonormal basis of the hermitian `r x r` matrices for the inner
/// product `Re tr(a b*)`. Element 0 is `Id / sqrt(r)`, the rest span the
/// trace-free part: generalized Gell-Mann diagonals first, then the
/// symmetric and antisymmetric off-diagonal pairs.
pub fn hermitian_basis(r: usize) -> Vec<CMat> {
    let mut basis = Vec::with_capacity(r * r);
    basis.push(CMat::identity(r, r) * C64::new(1.0 / (r as f64).sqrt(), 0.0));
    for l in 1..r {
        let mut m = CMat::zeros(r, r);
        let norm = ((l * (l + 1)) as f64).sqrt();
        for a in 0..l {
            m[(a, a)] = C64::new(1.0 / norm, 0.0);
        }
        m[(l, l)] = C64::new(-(l as f64) / norm, 0.0);
        basis.push(m);
    }
    let s = std::f64::consts::FRAC_1_SQRT_2;
    for a in 0..r {
        for b in (a + 1)..r {
            let mut m = CMat::zeros(r, r);
            m[(a, b)] = C64::new(s, 0.0);
            m[(b, a)] = C64::new(s, 0.0);
            basis.push(m);
            let mut m = CMat::zeros(r, r);
            m[(a, b)] = C64::new(0.0, -s);
            m[(b, a)] = C64::new(0.0, s);
            basis.push(m);
        }
    }
    basis
}

/// Coordinates of a hermitian matrix in [`hermitian_basis`].
pub fn herm_to_coords(a: &CMat, basis: &[CMat]) -> Vec<f64> {
    basis.iter().map(|b| re_tr_prod(a, &b.adjoint())).collect()
}

/// Hermitian matrix from coordinates in [`hermitian_basis`].
pub fn coords_to_herm(x: &[f64], basis: &[CMat]) -> CMat {
    let r = basis[0].nrows();
    let mut m = CMat::zeros(r, r);
    for (xi, b) in x.iter().zip(basis) {
        m += b * C64::new(*xi, 0.0);
    }
    m
}

/// Smallest singular value of a real matrix.
pub fn min_singular_value(a: &DMatrix<f64>) -> f64 {
    let sv = a.clone().singular_values();
    sv.iter().copied().fold(f64::INFINITY, f64::min)
}
