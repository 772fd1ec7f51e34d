//! Independent oracles and fixtures for unit tests.

use crate::linalg::{CMat, CVec, C64, ZERO};
use crate::random;
use crate::tensor::CurvatureTensor;

pub fn random_tensor(n: usize, r: usize, seed: u64) -> CurvatureTensor {
    random::tensor(n, r, &mut random::rng(seed))
}

pub fn random_hpd(d: usize, seed: u64) -> CMat {
    random::hpd(d, &mut random::rng(seed))
}

pub fn random_cvec(d: usize, seed: u64) -> CVec {
    random::cvec(d, &mut random::rng(seed))
}

pub fn random_unitary(d: usize, seed: u64) -> CMat {
    random::unitary(d, &mut random::rng(seed))
}

/// `a = h^{-1} s` with `s` hermitian, so that `h a` is hermitian.
pub fn random_h_selfadjoint(h: &CMat, seed: u64) -> CMat {
    let s = random::hermitian(h.nrows(), &mut random::rng(seed));
    h.clone().try_inverse().unwrap() * s
}

fn h_inner(h: &CMat, x: &CVec, y: &CVec) -> C64 {
    (y.adjoint() * h * x)[(0, 0)]
}

/// Coefficients `⟨a e_λ, e_μ⟩_h` in the frame obtained by Gram-Schmidt on the
/// standard basis.
pub fn gram_schmidt_coefficients(a: &CMat, h: &CMat) -> CMat {
    let r = h.nrows();
    let mut frame: Vec<CVec> = Vec::new();
    for l in 0..r {
        let mut v = CVec::zeros(r);
        v[l] = C64::new(1.0, 0.0);
        for e in &frame {
            let p = h_inner(h, &v, e);
            v -= e * p;
        }
        let nrm = h_inner(h, &v, &v).re.sqrt();
        frame.push(v / C64::new(nrm, 0.0));
    }
    CMat::from_fn(r, r, |l, mu| h_inner(h, &(a * &frame[l]), &frame[mu]))
}

/// `Σ c[j,k,λ,μ] γ_{jλ} conj(γ_{kμ})` by explicit summation.
pub fn nakano_form_direct(t: &CurvatureTensor, g: &CVec) -> C64 {
    let (n, r) = (t.n(), t.r());
    let mut s = ZERO;
    for j in 0..n {
        for k in 0..n {
            for l in 0..r {
                for mu in 0..r {
                    s += t.get(j, k, l, mu) * g[j * r + l] * g[k * r + mu].conj();
                }
            }
        }
    }
    s
}

/// `Σ c[j,k,μ,λ] γ_{jλ} conj(γ_{kμ})` by explicit summation.
pub fn dual_form_direct(t: &CurvatureTensor, g: &CVec) -> C64 {
    let (n, r) = (t.n(), t.r());
    let mut s = ZERO;
    for j in 0..n {
        for k in 0..n {
            for l in 0..r {
                for mu in 0..r {
                    s += t.get(j, k, mu, l) * g[j * r + l] * g[k * r + mu].conj();
                }
            }
        }
    }
    s
}

/// `c = δ_jk δ_λμ − (3/4) δ_jλ δ_kμ` for `n = r = 2`: every `A(v)` is
/// `Id − (3/4) v v*`, positive, while the Nakano matrix has eigenvalue `−1/2`.
pub fn witness_tensor() -> CurvatureTensor {
    let mut c = Vec::new();
    for j in 0..2 {
        for k in 0..2 {
            for l in 0..2 {
                for mu in 0..2 {
                    let mut v = 0.0;
                    if j == k && l == mu {
                        v += 1.0;
                    }
                    if j == l && k == mu {
                        v -= 0.75;
                    }
                    c.push(C64::new(v, 0.0));
                }
            }
        }
    }
    CurvatureTensor::new(2, 2, c).unwrap()
}

/// Smallest eigenvalue of `A(v)` over a Fibonacci lattice on `CP^1`.
pub fn brute_force_griffiths(t: &CurvatureTensor, count: usize) -> f64 {
    assert_eq!(t.r(), 2);
    let golden = (1.0 + 5f64.sqrt()) / 2.0;
    let mut best = f64::INFINITY;
    for i in 0..count {
        let u = (i as f64 + 0.5) / count as f64;
        let ang = 2.0 * std::f64::consts::PI * (i as f64 / golden).fract();
        let v = CVec::from_vec(vec![C64::new(u.sqrt(), 0.0), C64::from_polar((1.0 - u).sqrt(), ang)]);
        let a = t.contract_vector(&v);
        let ev = a.symmetric_eigenvalues();
        let m = ev.iter().copied().fold(f64::INFINITY, f64::min);
        best = best.min(m);
    }
    best
}
