//! Fréchet derivative of the matrix logarithm on positive hermitian matrices.

use crate::error::{Error, Result};
use crate::linalg::{self, CMat, C64};

/// Relative eigenvalue gap below which the series branch is used.
pub const SERIES_GAP: f64 = 1e-6;

/// `γ(a, b) = a/(a − b) · log(a/b)`, equal to 1 when `a = b`.
///
/// Writing `a/b = 1 + δ`, small gaps use `1 + δ/2 − δ²/6 + δ³/12`.
pub fn log_gamma(a: f64, b: f64) -> f64 {
    let d = a / b - 1.0;
    if d.abs() < SERIES_GAP {
        1.0 + d * (0.5 + d * (-1.0 / 6.0 + d / 12.0))
    } else {
        a / (a - b) * (a / b).ln()
    }
}

/// Divided difference `(log a − log b)/(a − b)` of the logarithm.
pub fn log_divided_difference(a: f64, b: f64) -> f64 {
    log_gamma(a, b) / a
}

/// Eigen-decomposition of a positive definite hermitian matrix.
pub(crate) fn positive_eigh(g: &CMat) -> Result<(Vec<f64>, CMat)> {
    let (vals, vecs) = linalg::eigh(g);
    if vals[0] <= 0.0 {
        return Err(Error::NonPositiveMetric { min_eigenvalue: vals[0] });
    }
    Ok((vals, vecs))
}

/// `d log(g)[x]` from an eigen-decomposition of `g`.
pub(crate) fn dlog_from_eigen(vals: &[f64], vecs: &CMat, x: &CMat) -> CMat {
    let y = vecs.adjoint() * x * vecs;
    let z = CMat::from_fn(y.nrows(), y.ncols(), |a, b| {
        y[(a, b)] * C64::new(log_divided_difference(vals[a], vals[b]), 0.0)
    });
    vecs * z * vecs.adjoint()
}

/// `log g` of a positive definite hermitian matrix.
pub(crate) fn log_from_eigen(vals: &[f64], vecs: &CMat) -> CMat {
    let d = nalgebra::DVector::from_iterator(vals.len(), vals.iter().map(|v| C64::new(v.ln(), 0.0)));
    vecs * CMat::from_diagonal(&d) * vecs.adjoint()
}

/// Variation of `log g` along the logarithmic variation `u`, that is
/// `d log(g)[g u]`. In an eigenbasis of `g` with eigenvalues `α` the entry
/// `(a, b)` of `u` is multiplied by `γ(α_a, α_b)`.
pub fn log_matrix_differential(g: &CMat, u: &CMat) -> Result<CMat> {
    let (vals, vecs) = positive_eigh(g)?;
    let y = vecs.adjoint() * u * &vecs;
    let z = CMat::from_fn(y.nrows(), y.ncols(), |a, b| {
        y[(a, b)] * C64::new(log_gamma(vals[a], vals[b]), 0.0)
    });
    Ok(&vecs * z * vecs.adjoint())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Principal logarithm through a scaled Taylor series, independent of
    /// the eigen-decomposition.
    fn log_series(g: &CMat) -> CMat {
        let d = g.nrows();
        let s = g.trace().re / d as f64;
        let x = g / C64::new(s, 0.0) - CMat::identity(d, d);
        let mut term = x.clone();
        let mut acc = CMat::zeros(d, d);
        for k in 1..400 {
            let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
            acc += &term * C64::new(sign / k as f64, 0.0);
            term = &term * &x;
        }
        acc + CMat::identity(d, d) * C64::new(s.ln(), 0.0)
    }

    #[test]
    fn gamma_values() {
        let e = std::f64::consts::E;
        assert!((log_gamma(e, 1.0) - e / (e - 1.0)).abs() < 1e-14);
        assert!((log_gamma(2.0, 2.0) - 1.0).abs() < 1e-15);
        for gap in [1e-9f64, 1e-7, 5e-7, 2e-6, 1e-5] {
            let exact = (1.0 + gap) * gap.ln_1p() / gap;
            assert!((log_gamma(1.0 + gap, 1.0) - exact).abs() < 1e-12, "{gap}");
        }
    }

    #[test]
    fn identity_gives_input() {
        let u = crate::random::hermitian(3, &mut crate::random::rng(1));
        let out = log_matrix_differential(&CMat::identity(3, 3), &u).unwrap();
        assert!(linalg::fro(&(out - u)) < 1e-14);
    }

    #[test]
    fn diagonal_e_matches_finite_differences() {
        let e = std::f64::consts::E;
        let g = CMat::from_diagonal(&nalgebra::DVector::from_vec(vec![C64::new(1.0, 0.0), C64::new(e, 0.0)]));
        let mut x = CMat::zeros(2, 2);
        x[(0, 1)] = C64::new(1.0, 0.0);
        x[(1, 0)] = C64::new(1.0, 0.0);
        // x = g u with u = g⁻¹ x; the (1,0) entry of u is x/e and picks up γ(e, 1).
        let u = g.clone().try_inverse().unwrap() * &x;
        let out = log_matrix_differential(&g, &u).unwrap();
        let h = 1e-5;
        let fd = (log_series(&(&g + &x * C64::new(h, 0.0))) - log_series(&(&g - &x * C64::new(h, 0.0))))
            / C64::new(2.0 * h, 0.0);
        assert!(linalg::fro(&(&out - &fd)) < 1e-8);
        assert!((out[(1, 0)].re - u[(1, 0)].re * e / (e - 1.0)).abs() < 1e-14);
    }

    #[test]
    fn random_matches_finite_differences_to_second_order() {
        let noise = crate::random::hermitian(3, &mut crate::random::rng(4));
        let g = CMat::identity(3, 3) * C64::new(2.0, 0.0) + &noise * C64::new(0.6 / linalg::fro(&noise), 0.0);
        let x = crate::random::hermitian(3, &mut crate::random::rng(5));
        let u = g.clone().try_inverse().unwrap() * &x;
        let d = log_matrix_differential(&g, &u).unwrap();
        let err = |h: f64| linalg::fro(&(log_series(&(&g + &x * C64::new(h, 0.0))) - log_series(&g) - &d * C64::new(h, 0.0)));
        let slope = (err(1e-3) / err(5e-4)).log2();
        assert!((slope - 2.0).abs() < 0.1, "{slope}");
    }

    #[test]
    fn near_degenerate_is_smooth() {
        let g = CMat::from_diagonal(&nalgebra::DVector::from_vec(vec![C64::new(1.0, 0.0), C64::new(1.0 + 1e-9, 0.0)]));
        let u = crate::random::hermitian(2, &mut crate::random::rng(2));
        let out = log_matrix_differential(&g, &u).unwrap();
        assert!(linalg::fro(&(out - &u)) < 1e-8);
    }

    #[test]
    fn rejects_nonpositive() {
        let g = CMat::from_diagonal(&nalgebra::DVector::from_vec(vec![C64::new(1.0, 0.0), C64::new(-1.0, 0.0)]));
        assert!(log_matrix_differential(&g, &CMat::identity(2, 2)).is_err());
    }
}
