//! Seeded random generators for tensors, metrics and frames.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::linalg::{self, CMat, CVec, C64};
use crate::tensor::{CurvatureTensor, Form11, Mode};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Complex Gaussian vector.
pub fn cvec(d: usize, rng: &mut ChaCha8Rng) -> CVec {
    CVec::from_iterator(d, (0..d).map(|_| C64::new(gauss(rng), gauss(rng))))
}

/// Hermitian matrix with standard complex Gaussian off-diagonal entries.
pub fn hermitian(d: usize, rng: &mut ChaCha8Rng) -> CMat {
    let g = CMat::from_fn(d, d, |_, _| C64::new(gauss(rng), gauss(rng)));
    linalg::hermitian_part(&g)
}

/// Hermitian positive definite matrix `G G* / d + κ Id` with `κ ∈ [0.2, 1.2]`.
pub fn hpd(d: usize, rng: &mut ChaCha8Rng) -> CMat {
    let g = CMat::from_fn(d, d, |_, _| C64::new(gauss(rng), gauss(rng)));
    let k: f64 = rng.random_range(0.2..1.2);
    &g * g.adjoint() / C64::new(d as f64, 0.0) + CMat::identity(d, d) * C64::new(k, 0.0)
}

/// Haar-distributed unitary matrix (QR of a Gaussian matrix with phase fix).
pub fn unitary(d: usize, rng: &mut ChaCha8Rng) -> CMat {
    let g = CMat::from_fn(d, d, |_, _| C64::new(gauss(rng), gauss(rng)));
    let qr = g.qr();
    let mut q = qr.q();
    let rm = qr.r();
    for c in 0..d {
        let ph = rm[(c, c)] / rm[(c, c)].norm();
        let col = q.column(c) * ph;
        q.set_column(c, &col);
    }
    q
}

/// Hermitian tensor whose Nakano matrix is Gaussian (no positivity).
pub fn tensor(n: usize, r: usize, rng: &mut ChaCha8Rng) -> CurvatureTensor {
    CurvatureTensor::from_nakano(n, r, &hermitian(n * r, rng)).expect("hermitian by construction")
}

/// Gaussian tensor shifted by `κ·Id` with `κ` uniform in `[0, 2·sqrt(nr)]`.
pub fn shifted_tensor(n: usize, r: usize, rng: &mut ChaCha8Rng) -> CurvatureTensor {
    let d = n * r;
    let k: f64 = rng.random_range(0.0..(2.0 * (d as f64).sqrt()));
    let m = hermitian(d, rng) + CMat::identity(d, d) * C64::new(k, 0.0);
    CurvatureTensor::from_nakano(n, r, &m).expect("hermitian by construction")
}

/// Rejection sample of a `mode`-positive tensor from [`shifted_tensor`].
pub fn positive_tensor(n: usize, r: usize, mode: Mode, rng: &mut ChaCha8Rng) -> CurvatureTensor {
    loop {
        let t = shifted_tensor(n, r, rng);
        if t.bundle_trace().is_positive() && crate::tensor::positivity_margin_lenient(&t, mode) > 0.0 {
            return t;
        }
    }
}

/// Positive definite diagonal (1,1)-form with entries in `[lo, hi)`.
pub fn positive_form(n: usize, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Form11 {
    let u = unitary(n, rng);
    let d: Vec<f64> = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    let diag = CMat::from_diagonal(&nalgebra::DVector::from_iterator(
        n,
        d.iter().map(|&x| C64::new(x, 0.0)),
    ));
    Form11 {
        a: linalg::hermitian_part(&(&u * diag * u.adjoint())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unitary_is_unitary() {
        let mut g = rng(1);
        let u = unitary(4, &mut g);
        assert!(linalg::fro(&(u.adjoint() * &u - CMat::identity(4, 4))) < 1e-13);
    }

    #[test]
    fn positive_tensor_is_positive() {
        let mut g = rng(2);
        for _ in 0..5 {
            let t = positive_tensor(2, 2, Mode::Nakano, &mut g);
            assert!(t.nakano_matrix().min_eigenvalue() > 0.0);
        }
    }
}
