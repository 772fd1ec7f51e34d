//! Pointwise Chern curvature tensors: normal form, traces, twists,
//! transposes and the three positivity tests.
//!
//! A tensor stores `c[j,k,λ,μ]` in an `h`-orthonormal frame of `E` and fixed
//! holomorphic coordinates, so that
//! `Θ = Σ c[j,k,λ,μ] dz_j ∧ dz̄_k ⊗ e*_λ ⊗ e_μ`. As an endomorphism of `E`,
//! the `(j,k)` block therefore has matrix entries `M[μ,λ] = c[j,k,λ,μ]`.

use std::fmt;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, CMat, CVec, C64, ONE, ZERO};
use crate::sphere;

/// Relative tolerance for hermitian symmetry of tensor inputs.
pub const SYMMETRY_TOL: f64 = 1e-10;
/// Relative tolerance for [`HermitianMatrix`] inputs.
pub const HERMITIAN_TOL: f64 = 1e-12;

/// Positivity notion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    /// Nakano positivity on `T_X ⊗ E`.
    #[serde(rename = "N")]
    Nakano,
    /// Dual Nakano positivity on `T_X ⊗ E*`.
    #[serde(rename = "N*")]
    DualNakano,
    /// Griffiths positivity on decomposable tensors.
    #[serde(rename = "G")]
    Griffiths,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Nakano, Mode::DualNakano, Mode::Griffiths];

    pub fn label(self) -> &'static str {
        match self {
            Mode::Nakano => "N",
            Mode::DualNakano => "N*",
            Mode::Griffiths => "G",
        }
    }

    pub fn parse(s: &str) -> Option<Mode> {
        match s {
            "N" | "n" | "nakano" => Some(Mode::Nakano),
            "N*" | "n*" | "dual_nakano" => Some(Mode::DualNakano),
            "G" | "g" | "griffiths" => Some(Mode::Griffiths),
            _ => None,
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Hermitian matrix with positivity queries.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianMatrix {
    m: CMat,
}

impl HermitianMatrix {
    /// Checks symmetry to a relative tolerance of `1e-12` and symmetrizes.
    pub fn new(m: CMat) -> Result<Self> {
        if m.nrows() != m.ncols() || m.nrows() == 0 {
            return Err(Error::InvalidInput("hermitian matrix must be square and nonempty".into()));
        }
        if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::InvalidInput("non-finite matrix entry".into()));
        }
        let dev = linalg::hermitian_deviation(&m);
        if dev > HERMITIAN_TOL {
            return Err(Error::SymmetryViolation { deviation: dev });
        }
        Ok(HermitianMatrix {
            m: linalg::hermitian_part(&m),
        })
    }

    /// Real diagonal matrix.
    pub fn from_real_diagonal(d: &[f64]) -> Self {
        let v = DVector::from_iterator(d.len(), d.iter().map(|&x| C64::new(x, 0.0)));
        HermitianMatrix {
            m: CMat::from_diagonal(&v),
        }
    }

    pub fn identity(d: usize) -> Self {
        HermitianMatrix {
            m: CMat::identity(d, d),
        }
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn matrix(&self) -> &CMat {
        &self.m
    }

    pub fn into_matrix(self) -> CMat {
        self.m
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        linalg::eigvalsh(&self.m)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues()[0]
    }

    pub fn is_positive_definite(&self) -> bool {
        self.min_eigenvalue() > 0.0
    }
}

/// Coefficients `a[j,k]` of the real (1,1)-form `i Σ a[j,k] dz_j ∧ dz̄_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Form11 {
    pub a: CMat,
}

impl Form11 {
    pub fn new(a: CMat) -> Result<Self> {
        Ok(Form11 {
            a: HermitianMatrix::new(a)?.into_matrix(),
        })
    }

    pub fn diagonal(d: &[f64]) -> Self {
        Form11 {
            a: HermitianMatrix::from_real_diagonal(d).into_matrix(),
        }
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        linalg::eigvalsh(&self.a)
    }

    pub fn is_positive(&self) -> bool {
        self.eigenvalues()[0] > 0.0
    }

    /// Real determinant of the coefficient matrix.
    pub fn det(&self) -> f64 {
        self.eigenvalues().iter().product()
    }
}

/// Hermitian endomorphism of `E` written in an `h`-orthonormal frame.
#[derive(Debug, Clone, PartialEq)]
pub struct EndoHerm {
    pub m: CMat,
    pub trace_free: bool,
}

impl EndoHerm {
    pub fn new(m: CMat) -> Result<Self> {
        Ok(EndoHerm {
            m: HermitianMatrix::new(m)?.into_matrix(),
            trace_free: false,
        })
    }

    /// Marks the endomorphism as trace-free after checking `|tr| < 1e-12·|m|`.
    pub fn new_trace_free(m: CMat) -> Result<Self> {
        let e = Self::new(m)?;
        let t = linalg::tr(&e.m).norm();
        if t > 1e-12 * linalg::fro(&e.m).max(f64::MIN_POSITIVE) {
            return Err(Error::InvalidInput(format!("trace {t:e} is not zero")));
        }
        Ok(EndoHerm {
            m: e.m,
            trace_free: true,
        })
    }

    pub fn r(&self) -> usize {
        self.m.nrows()
    }

    /// Trace-free part.
    pub fn trace_free_part(&self) -> EndoHerm {
        let r = self.r();
        let t = linalg::tr(&self.m) / C64::new(r as f64, 0.0);
        EndoHerm {
            m: &self.m - CMat::identity(r, r) * t,
            trace_free: true,
        }
    }
}

/// Chern curvature coefficients `c[j,k,λ,μ]` in an `h`-orthonormal frame.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvatureTensor {
    n: usize,
    r: usize,
    c: Vec<C64>,
}

impl CurvatureTensor {
    /// Builds a tensor from coefficients ordered `((j·n + k)·r + λ)·r + μ`.
    ///
    /// The input is checked for hermitian symmetry to a relative tolerance of
    /// `1e-10` and then symmetrized.
    pub fn new(n: usize, r: usize, c: Vec<C64>) -> Result<Self> {
        if n == 0 || r == 0 {
            return Err(Error::InvalidInput("n and r must be at least 1".into()));
        }
        if c.len() != n * n * r * r {
            return Err(Error::InvalidInput(format!(
                "expected {} coefficients, got {}",
                n * n * r * r,
                c.len()
            )));
        }
        if c.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::InvalidInput("non-finite tensor entry".into()));
        }
        let raw = CurvatureTensor { n, r, c };
        let nm = raw.nakano_matrix_raw();
        let dev = linalg::hermitian_deviation(&nm);
        if dev > SYMMETRY_TOL {
            return Err(Error::SymmetryViolation { deviation: dev });
        }
        Ok(Self::from_nakano_unchecked(n, r, &linalg::hermitian_part(&nm)))
    }

    /// Zero tensor.
    pub fn zeros(n: usize, r: usize) -> Self {
        CurvatureTensor {
            n,
            r,
            c: vec![ZERO; n * n * r * r],
        }
    }

    /// Tensor whose Nakano matrix is `m` (rows `(j,λ)`, columns `(k,μ)`).
    pub fn from_nakano(n: usize, r: usize, m: &CMat) -> Result<Self> {
        if m.nrows() != n * r || m.ncols() != n * r {
            return Err(Error::InvalidInput("Nakano matrix has wrong size".into()));
        }
        let mut c = Vec::with_capacity(n * n * r * r);
        for j in 0..n {
            for k in 0..n {
                for l in 0..r {
                    for mu in 0..r {
                        c.push(m[(j * r + l, k * r + mu)]);
                    }
                }
            }
        }
        Self::new(n, r, c)
    }

    fn from_nakano_unchecked(n: usize, r: usize, m: &CMat) -> Self {
        let mut c = Vec::with_capacity(n * n * r * r);
        for j in 0..n {
            for k in 0..n {
                for l in 0..r {
                    for mu in 0..r {
                        c.push(m[(j * r + l, k * r + mu)]);
                    }
                }
            }
        }
        CurvatureTensor { n, r, c }
    }

    /// `α ⊗ Id_r` for a (1,1)-form `α`.
    pub fn projectively_flat(alpha: &Form11, r: usize) -> Self {
        let n = alpha.n();
        let mut t = Self::zeros(n, r);
        for j in 0..n {
            for k in 0..n {
                for l in 0..r {
                    t.set(j, k, l, l, alpha.a[(j, k)]);
                }
            }
        }
        t
    }

    /// Tensor from endomorphism blocks `M_{jk}` (row-major in `(j,k)`), with
    /// `c[j,k,λ,μ] = M_{jk}[μ,λ]`. Symmetry is checked as in [`Self::new`].
    pub fn from_endo_blocks(n: usize, r: usize, blocks: &[CMat]) -> Result<Self> {
        if blocks.len() != n * n {
            return Err(Error::InvalidInput("need n*n endomorphism blocks".into()));
        }
        let mut c = Vec::with_capacity(n * n * r * r);
        for b in blocks {
            if b.nrows() != r || b.ncols() != r {
                return Err(Error::InvalidInput("endomorphism block has wrong size".into()));
            }
            for l in 0..r {
                for mu in 0..r {
                    c.push(b[(mu, l)]);
                }
            }
        }
        Self::new(n, r, c)
    }

    pub(crate) fn from_endo_blocks_unchecked(n: usize, r: usize, blocks: &[CMat]) -> Self {
        let mut c = Vec::with_capacity(n * n * r * r);
        for b in blocks {
            for l in 0..r {
                for mu in 0..r {
                    c.push(b[(mu, l)]);
                }
            }
        }
        CurvatureTensor { n, r, c }
    }

    /// Tensor from endomorphism blocks after projecting onto the hermitian
    /// part; also returns the relative deviation that was removed.
    pub(crate) fn from_endo_blocks_symmetrized(n: usize, r: usize, blocks: &[CMat]) -> (Self, f64) {
        let raw = Self::from_endo_blocks_unchecked(n, r, blocks);
        let nm = raw.nakano_matrix_raw();
        let dev = linalg::hermitian_deviation(&nm);
        (Self::from_nakano_unchecked(n, r, &linalg::hermitian_part(&nm)), dev)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn coefficients(&self) -> &[C64] {
        &self.c
    }

    #[inline]
    fn idx(&self, j: usize, k: usize, l: usize, mu: usize) -> usize {
        ((j * self.n + k) * self.r + l) * self.r + mu
    }

    #[inline]
    pub fn get(&self, j: usize, k: usize, l: usize, mu: usize) -> C64 {
        self.c[self.idx(j, k, l, mu)]
    }

    #[inline]
    fn set(&mut self, j: usize, k: usize, l: usize, mu: usize, v: C64) {
        let i = self.idx(j, k, l, mu);
        self.c[i] = v;
    }

    /// Endomorphism matrix of the `(j,k)` block: `M[μ,λ] = c[j,k,λ,μ]`.
    pub fn endo_block(&self, j: usize, k: usize) -> CMat {
        let r = self.r;
        CMat::from_fn(r, r, |mu, l| self.get(j, k, l, mu))
    }

    /// All endomorphism blocks, row-major in `(j,k)`.
    pub fn endo_blocks(&self) -> Vec<CMat> {
        let mut out = Vec::with_capacity(self.n * self.n);
        for j in 0..self.n {
            for k in 0..self.n {
                out.push(self.endo_block(j, k));
            }
        }
        out
    }

    pub(crate) fn nakano_matrix_raw(&self) -> CMat {
        let (n, r) = (self.n, self.r);
        CMat::from_fn(n * r, n * r, |row, col| {
            self.get(row / r, col / r, row % r, col % r)
        })
    }

    /// The `nr × nr` matrix with entry `c[j,k,λ,μ]` at row `(j,λ)`, column `(k,μ)`.
    pub fn nakano_matrix(&self) -> HermitianMatrix {
        HermitianMatrix {
            m: self.nakano_matrix_raw(),
        }
    }

    /// `c'[j,k,λ,μ] = c[j,k,μ,λ]`: the form on `T_X ⊗ E*`.
    pub fn dual_transpose(&self) -> CurvatureTensor {
        let mut out = self.clone();
        for j in 0..self.n {
            for k in 0..self.n {
                for l in 0..self.r {
                    for mu in 0..self.r {
                        out.set(j, k, l, mu, self.get(j, k, mu, l));
                    }
                }
            }
        }
        out
    }

    /// `a[j,k] = Σ_λ c[j,k,λ,λ]`.
    pub fn bundle_trace(&self) -> Form11 {
        let n = self.n;
        let a = CMat::from_fn(n, n, |j, k| (0..self.r).map(|l| self.get(j, k, l, l)).sum());
        Form11 {
            a: linalg::hermitian_part(&a),
        }
    }

    pub(crate) fn bundle_trace_raw(&self) -> CMat {
        let n = self.n;
        CMat::from_fn(n, n, |j, k| (0..self.r).map(|l| self.get(j, k, l, l)).sum())
    }

    /// `Θ + t·tr_E(Θ)⊗Id`.
    pub fn twist(&self, t: f64) -> CurvatureTensor {
        let tr = self.bundle_trace_raw();
        let mut out = self.clone();
        let tc = C64::new(t, 0.0);
        for j in 0..self.n {
            for k in 0..self.n {
                for l in 0..self.r {
                    let v = self.get(j, k, l, l) + tc * tr[(j, k)];
                    out.set(j, k, l, l, v);
                }
            }
        }
        out
    }

    /// `Θ − (1/r)·tr_E(Θ)⊗Id`.
    pub fn trace_free(&self) -> CurvatureTensor {
        self.twist(-1.0 / self.r as f64)
    }

    /// `s·Θ`.
    pub fn scale(&self, s: f64) -> CurvatureTensor {
        CurvatureTensor {
            n: self.n,
            r: self.r,
            c: self.c.iter().map(|z| z * s).collect(),
        }
    }

    /// Entrywise sum.
    pub fn add(&self, other: &CurvatureTensor) -> CurvatureTensor {
        assert_eq!((self.n, self.r), (other.n, other.r));
        CurvatureTensor {
            n: self.n,
            r: self.r,
            c: self.c.iter().zip(&other.c).map(|(a, b)| a + b).collect(),
        }
    }

    /// Frobenius norm over all four indices.
    pub fn frobenius_norm(&self) -> f64 {
        self.c.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// `A(v)[j,k] = Σ c[j,k,λ,μ] v_λ v̄_μ`.
    pub fn contract_vector(&self, v: &CVec) -> CMat {
        let (n, r) = (self.n, self.r);
        let mut a = CMat::zeros(n, n);
        for j in 0..n {
            for k in 0..n {
                let mut s = ZERO;
                for l in 0..r {
                    for mu in 0..r {
                        s += self.get(j, k, l, mu) * v[l] * v[mu].conj();
                    }
                }
                a[(j, k)] = s;
            }
        }
        a
    }

    /// `B(x)[λ,μ] = Σ c[j,k,λ,μ] x̄_j x_k`.
    pub fn contract_covector(&self, x: &CVec) -> CMat {
        let (n, r) = (self.n, self.r);
        let mut b = CMat::zeros(r, r);
        for j in 0..n {
            for k in 0..n {
                let w = x[j].conj() * x[k];
                for l in 0..r {
                    for mu in 0..r {
                        b[(l, mu)] += self.get(j, k, l, mu) * w;
                    }
                }
            }
        }
        b
    }

    /// Change of orthonormal frame `e'_λ = Σ_α U[α,λ] e_α` for unitary `U`.
    pub fn unitary_frame_change(&self, u: &CMat) -> CurvatureTensor {
        let blocks: Vec<CMat> = self
            .endo_blocks()
            .iter()
            .map(|m| u.adjoint() * m * u)
            .collect();
        Self::from_endo_blocks_unchecked(self.n, self.r, &blocks)
    }

    /// Coefficients in new coordinates `w = P* z`, i.e. `c' = P^{-1} c P^{-*}`
    /// in the `(j,k)` indices. With `P` the Cholesky factor of a positive
    /// (1,1)-form, that form becomes the identity.
    pub fn coordinate_change(&self, p_inv: &CMat) -> CurvatureTensor {
        let (n, r) = (self.n, self.r);
        let mut out = Self::zeros(n, r);
        for a in 0..n {
            for b in 0..n {
                for l in 0..r {
                    for mu in 0..r {
                        let mut s = ZERO;
                        for j in 0..n {
                            for k in 0..n {
                                s += p_inv[(a, j)] * self.get(j, k, l, mu) * p_inv[(b, k)].conj();
                            }
                        }
                        out.set(a, b, l, mu, s);
                    }
                }
            }
        }
        out
    }

    /// Coefficients in coordinates that are orthonormal for `tr_E Θ`.
    pub fn in_trace_orthonormal_coordinates(&self) -> Result<CurvatureTensor> {
        let omega = self.bundle_trace();
        let p = linalg::cholesky_lower(&omega.a).map_err(|_| Error::NonPositiveTrace {
            min_eigenvalue: omega.eigenvalues()[0],
        })?;
        Ok(self.coordinate_change(&linalg::lower_inverse(&p)))
    }
}

/// Converts curvature matrices of a holomorphic frame to the `h`-orthonormal
/// normal form.
///
/// `theta_raw` holds the `n²` endomorphism matrices `a_{jk}` (row-major in
/// `(j,k)`), acting on column vectors of the holomorphic frame, and `h` is the
/// metric with `⟨x, y⟩_h = y* h x`. With `h = L L*`, the frame `ẽ = L^{-*}` is
/// orthonormal and `c[j,k,λ,μ] = ⟨a_{jk} ẽ_λ, ẽ_μ⟩_h`.
pub fn orthonormalize(theta_raw: &[CMat], h: &HermitianMatrix) -> Result<CurvatureTensor> {
    let r = h.dim();
    let n = (theta_raw.len() as f64).sqrt().round() as usize;
    if n * n != theta_raw.len() || n == 0 {
        return Err(Error::InvalidInput("need n*n curvature matrices".into()));
    }
    let min = h.min_eigenvalue();
    if min <= 0.0 {
        return Err(Error::NonPositiveMetric { min_eigenvalue: min });
    }
    let l = linalg::cholesky_lower(h.matrix())?;
    let l_inv = linalg::lower_inverse(&l);
    let la = l.adjoint();
    let blocks: Vec<CMat> = theta_raw.iter().map(|a| &la * a * l_inv.adjoint()).collect();
    CurvatureTensor::from_endo_blocks(n, r, &blocks)
}

/// Result of the Griffiths minimization.
#[derive(Debug, Clone)]
pub struct GriffithsMin {
    /// Smallest value found; an upper bound of the true minimum.
    pub value: f64,
    /// Unit vector of `E` attaining `value`.
    pub direction: CVec,
    pub converged: bool,
    /// Number of points in the starting net.
    pub net_size: usize,
}

/// Size of the starting net for rank `r`.
pub fn griffiths_net_size(r: usize) -> usize {
    512.max(64 * r * r)
}

const REFINE_STARTS: usize = 8;
const REFINE_ITERS: usize = 2000;

/// `min_{|v|=1} λ_min(A(v))` by a quasi-uniform net and alternating
/// refinement from the best starting points.
///
/// For fixed `v` the inner minimum is an eigenvector `x` of `A(v)`; for fixed
/// `x` the minimum over `v` is an eigenvector of `B(x)`. Alternating the two
/// never increases the objective.
pub fn griffiths_min(theta: &CurvatureTensor) -> GriffithsMin {
    let (n, r) = (theta.n(), theta.r());
    if n == 1 {
        let b = theta.contract_covector(&CVec::from_element(1, ONE));
        let (val, v) = linalg::min_eigenpair(&b.transpose());
        return GriffithsMin {
            value: val,
            direction: v,
            converged: true,
            net_size: 0,
        };
    }
    if r == 1 {
        let v = CVec::from_element(1, ONE);
        let val = linalg::min_eigenvalue(&theta.contract_vector(&v));
        return GriffithsMin {
            value: val,
            direction: v,
            converged: true,
            net_size: 0,
        };
    }
    let size = griffiths_net_size(r);
    let net = sphere::quasi_uniform_net(r, size);
    let mut scored: Vec<(f64, usize)> = net
        .iter()
        .enumerate()
        .map(|(i, v)| (linalg::min_eigenvalue(&theta.contract_vector(v)), i))
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let scale = theta.frobenius_norm().max(f64::MIN_POSITIVE);
    let mut best: Option<(f64, CVec, bool)> = None;
    for &(_, i) in scored.iter().take(REFINE_STARTS) {
        let mut v = net[i].clone();
        let (mut val, mut x) = linalg::min_eigenpair(&theta.contract_vector(&v));
        let mut converged = false;
        for _ in 0..REFINE_ITERS {
            let b = theta.contract_covector(&x);
            let (_, v_new) = linalg::min_eigenpair(&b.transpose());
            let (val_new, x_new) = linalg::min_eigenpair(&theta.contract_vector(&v_new));
            let drop = val - val_new;
            if val_new <= val {
                v = v_new;
                x = x_new;
                val = val_new;
            }
            if drop <= 1e-15 * scale {
                converged = true;
                break;
            }
        }
        if best.as_ref().is_none_or(|b| val < b.0) {
            best = Some((val, v, converged));
        }
    }
    let (value, direction, converged) = best.expect("net is nonempty");
    GriffithsMin {
        value,
        direction,
        converged,
        net_size: size,
    }
}

/// Smallest eigenvalue (N, N*) or Griffiths minimum (G); positive iff the
/// tensor is positive in that sense. The G value is an upper bound of the
/// true minimum.
pub fn positivity_margin(theta: &CurvatureTensor, mode: Mode) -> Result<f64> {
    match mode {
        Mode::Nakano => Ok(theta.nakano_matrix().min_eigenvalue()),
        Mode::DualNakano => Ok(theta.dual_transpose().nakano_matrix().min_eigenvalue()),
        Mode::Griffiths => {
            let g = griffiths_min(theta);
            if g.converged {
                Ok(g.value)
            } else {
                Err(Error::NonConvergence { best: g.value })
            }
        }
    }
}

/// Like [`positivity_margin`] but returns the best G value even when the
/// refinement did not stabilize.
pub fn positivity_margin_lenient(theta: &CurvatureTensor, mode: Mode) -> f64 {
    match positivity_margin(theta, mode) {
        Ok(v) => v,
        Err(Error::NonConvergence { best }) => {
            log::warn!("Griffiths refinement did not stabilize; using best value {best:e}");
            best
        }
        Err(_) => unreachable!("margin only fails with NonConvergence"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn identity_metric_leaves_coefficients() {
        let t = random_tensor(2, 2, 11);
        let back = orthonormalize(&t.endo_blocks(), &HermitianMatrix::identity(2)).unwrap();
        for (a, b) in t.coefficients().iter().zip(back.coefficients()) {
            assert!((a - b).norm() < 1e-14);
        }
    }

    #[test]
    fn rank_one_scalar_is_fixed() {
        let h = HermitianMatrix::from_real_diagonal(&[4.0]);
        let a = vec![CMat::from_element(1, 1, c(2.0, 0.0))];
        let t = orthonormalize(&a, &h).unwrap();
        assert_eq!(t.get(0, 0, 0, 0), c(2.0, 0.0));
    }

    #[test]
    fn triangular_factor_matches_gram_schmidt() {
        let h = HermitianMatrix::from_real_diagonal(&[1.0, 4.0]);
        let a = CMat::from_row_slice(2, 2, &[c(1.0, 0.0), c(2.0, 0.0), c(0.5, 0.0), c(1.0, 0.0)]);
        let t = orthonormalize(std::slice::from_ref(&a), &h).unwrap();
        let want = gram_schmidt_coefficients(&a, h.matrix());
        for l in 0..2 {
            for mu in 0..2 {
                assert!((t.get(0, 0, l, mu) - want[(l, mu)]).norm() < 1e-14);
            }
        }
        for z in t.coefficients() {
            assert!((z - c(1.0, 0.0)).norm() < 1e-14);
        }
    }

    #[test]
    fn triangular_factor_matches_gram_schmidt_random() {
        let h = random_hpd(3, 5);
        let a = random_h_selfadjoint(&h, 6);
        let t = orthonormalize(std::slice::from_ref(&a), &HermitianMatrix::new(h.clone()).unwrap()).unwrap();
        let want = gram_schmidt_coefficients(&a, &h);
        for l in 0..3 {
            for mu in 0..3 {
                assert!((t.get(0, 0, l, mu) - want[(l, mu)]).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn orthonormalize_rejects_bad_metric() {
        let h = HermitianMatrix::from_real_diagonal(&[1.0, -1.0]);
        let a = vec![CMat::identity(2, 2)];
        assert!(matches!(orthonormalize(&a, &h), Err(Error::NonPositiveMetric { .. })));
    }

    #[test]
    fn orthonormalize_rejects_asymmetric_input() {
        let h = HermitianMatrix::identity(2);
        let a = vec![CMat::from_row_slice(2, 2, &[c(1.0, 0.0), c(1.0, 0.0), c(0.0, 0.0), c(1.0, 0.0)])];
        assert!(matches!(orthonormalize(&a, &h), Err(Error::SymmetryViolation { .. })));
    }

    #[test]
    fn nakano_of_scalar() {
        let t = CurvatureTensor::new(1, 1, vec![c(3.0, 0.0)]).unwrap();
        assert_eq!(t.nakano_matrix().matrix()[(0, 0)], c(3.0, 0.0));
    }

    #[test]
    fn nakano_of_projectively_flat_has_kronecker_spectrum() {
        let t = CurvatureTensor::projectively_flat(&Form11::diagonal(&[1.0, 2.5]), 3);
        let ev = t.nakano_matrix().eigenvalues();
        let want = [1.0, 1.0, 1.0, 2.5, 2.5, 2.5];
        for (a, b) in ev.iter().zip(want) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn nakano_form_matches_direct_summation() {
        let t = random_tensor(2, 2, 3);
        let m = t.nakano_matrix();
        for s in 0..100 {
            let g = random_cvec(4, 1000 + s);
            let direct = nakano_form_direct(&t, &g);
            let via = (g.transpose() * m.matrix() * g.map(|z| z.conj()))[(0, 0)];
            assert!((direct - via).norm() <= 1e-12 * direct.norm().max(1.0));
        }
    }

    #[test]
    fn dual_transpose_matches_direct_summation() {
        let t = random_tensor(2, 2, 4);
        let m = t.dual_transpose().nakano_matrix();
        for s in 0..100 {
            let g = random_cvec(4, 2000 + s);
            let direct = dual_form_direct(&t, &g);
            let via = (g.transpose() * m.matrix() * g.map(|z| z.conj()))[(0, 0)];
            assert!((direct - via).norm() <= 1e-12 * direct.norm().max(1.0));
        }
    }

    #[test]
    fn dual_transpose_involution_and_fixed_points() {
        let t = random_tensor(2, 3, 9);
        assert_eq!(t.dual_transpose().dual_transpose(), t);
        let pf = CurvatureTensor::projectively_flat(&Form11::diagonal(&[1.0, 2.0]), 2);
        assert_eq!(pf.dual_transpose(), pf);
        let z = c(0.3, -0.7);
        let t = CurvatureTensor::new(1, 2, vec![c(1.0, 0.0), z, z.conj(), c(2.0, 0.0)]).unwrap();
        let d = t.dual_transpose();
        assert_eq!(d.get(0, 0, 0, 1), z.conj());
        assert_eq!(d.get(0, 0, 1, 0), z);
    }

    #[test]
    fn bundle_trace_cases() {
        let pf = CurvatureTensor::projectively_flat(&Form11::diagonal(&[1.0, 2.0]), 3);
        let a = pf.bundle_trace();
        assert!((a.a[(0, 0)] - c(3.0, 0.0)).norm() < 1e-15);
        assert!((a.a[(1, 1)] - c(6.0, 0.0)).norm() < 1e-15);
        let t1 = random_tensor(2, 1, 5);
        let a1 = t1.bundle_trace();
        for j in 0..2 {
            for k in 0..2 {
                assert!((a1.a[(j, k)] - t1.get(j, k, 0, 0)).norm() < 1e-15);
            }
        }
        let t = random_tensor(2, 3, 8);
        let m = t.nakano_matrix();
        let a = t.bundle_trace();
        for j in 0..2 {
            for k in 0..2 {
                let blk = m.matrix().view((j * 3, k * 3), (3, 3)).trace();
                assert!((blk - a.a[(j, k)]).norm() < 1e-13);
            }
        }
    }

    #[test]
    fn trace_free_reconstructs() {
        let t = random_tensor(2, 3, 12);
        let tf = t.trace_free();
        assert!(linalg::fro(&tf.bundle_trace().a) < 1e-12 * t.frobenius_norm());
        let tr = t.bundle_trace();
        let back = tf.add(&CurvatureTensor::projectively_flat(&Form11 { a: tr.a / c(3.0, 0.0) }, 3));
        for (a, b) in back.coefficients().iter().zip(t.coefficients()) {
            assert!((a - b).norm() < 1e-14);
        }
        let pf = CurvatureTensor::projectively_flat(&Form11::diagonal(&[1.0, 2.0]), 2);
        assert!(pf.trace_free().frobenius_norm() < 1e-15);
        assert!(random_tensor(2, 1, 1).trace_free().frobenius_norm() < 1e-15);
    }

    #[test]
    fn twist_cases() {
        let t = random_tensor(2, 2, 13);
        assert_eq!(t.twist(0.0), t);
        let pf = CurvatureTensor::projectively_flat(&Form11::diagonal(&[1.0, 2.0]), 2);
        let tw = pf.twist(0.7);
        let want = pf.scale(1.0 + 2.0 * 0.7);
        for (a, b) in tw.coefficients().iter().zip(want.coefficients()) {
            assert!((a - b).norm() < 1e-14);
        }
        assert!(linalg::fro(&t.twist(-0.5).bundle_trace().a) < 1e-12 * t.frobenius_norm());
        assert_eq!(t.twist(-0.5), t.trace_free());
    }

    #[test]
    fn margins_of_simple_tensors() {
        let pf = CurvatureTensor::projectively_flat(&Form11::diagonal(&[1.0, 2.0]), 2);
        for mode in Mode::ALL {
            assert!((positivity_margin(&pf, mode).unwrap() - 1.0).abs() < 1e-12);
        }
        let d = CurvatureTensor::new(1, 2, vec![c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(3.0, 0.0)]).unwrap();
        for mode in Mode::ALL {
            assert!((positivity_margin(&d, mode).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn griffiths_positive_nakano_negative_witness() {
        let t = witness_tensor();
        let n = positivity_margin(&t, Mode::Nakano).unwrap();
        assert!((n + 0.5).abs() < 1e-12);
        let g = positivity_margin(&t, Mode::Griffiths).unwrap();
        assert!(g > 0.0);
        let brute = brute_force_griffiths(&t, 100_000);
        // The optimizer value is attained, so it is never below the true
        // minimum; the dense sample can only overshoot the true minimum.
        assert!(g <= brute + 1e-12);
        assert!((g - brute).abs() < 1e-3);
    }

    #[test]
    fn griffiths_min_agrees_with_brute_force_random() {
        for seed in 0..5 {
            let t = random_tensor(2, 2, 100 + seed);
            let g = griffiths_min(&t).value;
            let brute = brute_force_griffiths(&t, 100_000);
            assert!(g <= brute + 1e-12, "seed {seed}: {g} vs {brute}");
            assert!(brute - g < 1e-3 * t.frobenius_norm(), "seed {seed}: {g} vs {brute}");
        }
    }

    #[test]
    fn griffiths_dominates_nakano_margins() {
        for seed in 0..20 {
            let t = random_tensor(2, 2, 300 + seed);
            let g = positivity_margin_lenient(&t, Mode::Griffiths);
            assert!(positivity_margin(&t, Mode::Nakano).unwrap() <= g + 1e-9);
            assert!(positivity_margin(&t, Mode::DualNakano).unwrap() <= g + 1e-9);
        }
    }

    #[test]
    fn unitary_frame_change_preserves_spectrum() {
        let t = random_tensor(2, 3, 21);
        let u = random_unitary(3, 22);
        let t2 = t.unitary_frame_change(&u);
        let a = t.nakano_matrix().eigenvalues();
        let b = t2.nakano_matrix().eigenvalues();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
        let g = CVec::from_vec(vec![c(0.3, 0.1), c(-0.2, 0.5), c(0.7, 0.0)]);
        let gv = &u * &g;
        let lhs = t2.contract_vector(&g);
        let rhs = t.contract_vector(&gv);
        assert!(linalg::fro(&(lhs - rhs)) < 1e-12);
    }
}
