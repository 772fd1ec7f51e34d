//! Distortion constants, principal symbols of the linearized system and
//! ellipticity certificates.
//!
//! All quantities are evaluated in coordinates orthonormal for `ω = tr_E Θ`
//! and in `h`-orthonormal frames. Tensor norms are Frobenius norms over all
//! four indices. Hermitian endomorphisms `u` are expanded in
//! [`linalg::hermitian_basis`], so `tr u` is carried by the first coordinate.

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::CurvatureField;
use crate::functionals::DensityMode;
use crate::linalg::{self, CMat, CVec, C64};
use crate::random;
use crate::sphere::SphereQuadrature;
use crate::tensor::{CurvatureTensor, Mode};

/// Smoothing exponent used for the Griffiths density in the solver.
pub const DEFAULT_SMOOTHING: f64 = 8.0;

/// Number of seeded random covectors appended to the deterministic net.
pub const RANDOM_COVECTORS: usize = 20;

/// Relative tolerance for the trace-free output of the second symbol row.
pub const TRACE_FREE_TOL: f64 = 1e-12;

fn smoothing(mode: DensityMode) -> Option<f64> {
    match mode {
        DensityMode::G => Some(DEFAULT_SMOOTHING),
        DensityMode::Gs(s) => Some(s),
        _ => None,
    }
}

fn positivity_mode(mode: DensityMode) -> Mode {
    match mode {
        DensityMode::N => Mode::Nakano,
        DensityMode::NStar => Mode::DualNakano,
        DensityMode::G | DensityMode::Gs(_) => Mode::Griffiths,
    }
}

/// Pointwise data shared by the distortion and the symbol: the tensor in
/// `ω`-orthonormal coordinates and the inverse of the twisted density
/// matrix, or quadrature weights and inverses `A(v)⁻¹` for the Griffiths
/// density.
pub(crate) struct SymbolContext {
    n: usize,
    r: usize,
    t: f64,
    theta: CurvatureTensor,
    trace_free_blocks: Vec<CMat>,
    density: DensityInverse,
}

enum DensityInverse {
    Nakano(CMat),
    Dual(CMat),
    Sphere {
        nodes: Vec<CVec>,
        weights: Vec<f64>,
        a_inv: Vec<CMat>,
    },
}

impl SymbolContext {
    pub(crate) fn new(theta: &CurvatureTensor, t: f64, mode: DensityMode, quad: Option<&SphereQuadrature>) -> Result<Self> {
        let (n, r) = (theta.n(), theta.r());
        let theta = theta.in_trace_orthonormal_coordinates()?;
        let twisted = theta.twist(t);
        let not_positive = |margin: f64| Error::NotPositive {
            mode: positivity_mode(mode),
            margin,
        };
        let density = match smoothing(mode) {
            None => {
                let m = if mode == DensityMode::N {
                    twisted.nakano_matrix_raw()
                } else {
                    twisted.dual_transpose().nakano_matrix_raw()
                };
                let inv = linalg::inv_hpd(&m).ok_or_else(|| not_positive(linalg::min_eigenvalue(&m)))?;
                if mode == DensityMode::N {
                    DensityInverse::Nakano(inv)
                } else {
                    DensityInverse::Dual(inv)
                }
            }
            Some(s) => {
                let owned;
                let quad = match quad {
                    Some(q) => q,
                    None => {
                        owned = SphereQuadrature::default_for(r);
                        &owned
                    }
                };
                let mut logs = Vec::with_capacity(quad.len());
                let mut a_inv = Vec::with_capacity(quad.len());
                for v in &quad.nodes {
                    let a = twisted.contract_vector(v);
                    let ld = linalg::logdet_hpd(&a).ok_or_else(|| not_positive(linalg::min_eigenvalue(&a)))?;
                    logs.push(ld);
                    a_inv.push(linalg::inv_hpd(&a).expect("positive definite"));
                }
                let top = logs.iter().map(|l| -s * l).fold(f64::NEG_INFINITY, f64::max);
                let mut weights: Vec<f64> = logs.iter().map(|l| (-s * l - top).exp()).collect();
                let total: f64 = weights.iter().sum();
                weights.iter_mut().for_each(|w| *w /= total);
                DensityInverse::Sphere {
                    nodes: quad.nodes.clone(),
                    weights,
                    a_inv,
                }
            }
        };
        let trace_free_blocks = theta.trace_free().endo_blocks();
        Ok(SymbolContext {
            n,
            r,
            t,
            theta,
            trace_free_blocks,
            density,
        })
    }

    /// Distortion constant of the density at this point.
    pub(crate) fn distortion(&self) -> f64 {
        let n = self.n as f64;
        let spread = (n - 1.0).sqrt() + 1.0;
        let tf = self.theta.trace_free().frobenius_norm();
        match &self.density {
            DensityInverse::Nakano(inv) | DensityInverse::Dual(inv) => spread / self.r as f64 * tf * linalg::fro(inv),
            DensityInverse::Sphere { weights, a_inv, .. } => {
                let mean: f64 = weights.iter().zip(a_inv).map(|(w, a)| w * a.trace().re).sum();
                spread * tf * mean
            }
        }
    }

    /// Real `r² × r²` symbol matrix at the covector `ξ`: column `b` is the
    /// image of the basis element `B_b`, row 0 is the scalar equation and
    /// rows `1..` are the trace-free coordinates of the endomorphism
    /// equation. Also returns the largest trace of the endomorphism row.
    pub(crate) fn symbol(&self, beta: f64, xi: &CVec, omega_ratio: f64, basis: &[CMat]) -> (DMatrix<f64>, f64) {
        let (n, r) = (self.n, self.r);
        let rr = r * r;
        let xi2: f64 = xi.iter().map(|z| z.norm_sqr()).sum();
        // Σ_{jk} ξ_k ξ̄_j C°_{jk}
        let mut coupling = CMat::zeros(r, r);
        for j in 0..n {
            for k in 0..n {
                coupling += &self.trace_free_blocks[j * n + k] * (xi[k] * xi[j].conj());
            }
        }
        let mut out = DMatrix::zeros(rr, rr);
        let mut max_trace: f64 = 0.0;
        for (b, u) in basis.iter().enumerate() {
            let tr_u = u.trace().re;
            let shifted = u + CMat::identity(r, r) * C64::new(self.t * tr_u, 0.0);
            let scalar = match &self.density {
                DensityInverse::Nakano(inv) | DensityInverse::Dual(inv) => {
                    let mut blocks = Vec::with_capacity(n * n);
                    for j in 0..n {
                        for k in 0..n {
                            blocks.push(&shifted * (xi[j] * xi[k].conj()));
                        }
                    }
                    let mut x = CurvatureTensor::from_endo_blocks_unchecked(n, r, &blocks);
                    if matches!(self.density, DensityInverse::Dual(_)) {
                        x = x.dual_transpose();
                    }
                    -linalg::re_tr_prod(inv, &x.nakano_matrix_raw()) / r as f64
                }
                DensityInverse::Sphere { nodes, weights, a_inv } => {
                    let mut acc = 0.0;
                    for ((v, w), ai) in nodes.iter().zip(weights).zip(a_inv) {
                        let q = (xi.adjoint() * ai * xi)[(0, 0)].re;
                        let uv = (v.adjoint() * &shifted * v)[(0, 0)].re;
                        acc += w * q * uv;
                    }
                    -acc
                }
            } - beta * xi2 * tr_u;
            let tf_u = u - CMat::identity(r, r) * C64::new(tr_u / r as f64, 0.0);
            let endo = (&coupling * C64::new(tr_u, 0.0) - tf_u * C64::new(xi2, 0.0))
                * C64::new(omega_ratio / n as f64, 0.0);
            max_trace = max_trace.max(endo.trace().norm());
            let coords = linalg::herm_to_coords(&endo, basis);
            out[(0, b)] = scalar;
            for row in 1..rr {
                out[(row, b)] = coords[row];
            }
        }
        (out, max_trace)
    }
}

/// Sufficient distortion constant of the density `mode` for `θ_t = Θ + t ω ⊗ Id`.
///
/// For the Nakano densities this is `((√(n−1) + 1)/r)·|Θ°|·|θ_t⁻¹|`; for the
/// Griffiths densities `(√(n−1) + 1)·|Θ°|` times the `det A(v)^{-s}`-weighted
/// mean of `tr A(v)⁻¹`. `G` uses the default smoothing exponent.
pub fn distortion(theta: &CurvatureTensor, t: f64, mode: DensityMode) -> Result<f64> {
    Ok(SymbolContext::new(theta, t, mode, None)?.distortion())
}

/// Principal symbol of the linearized system at one point.
#[derive(Debug, Clone, Serialize)]
pub struct SymbolOperator {
    /// Real `r² × r²` matrix in the hermitian basis.
    pub matrix: Vec<Vec<f64>>,
    pub min_singular_value: f64,
    /// Largest `|tr|` of the endomorphism row over basis inputs.
    pub trace_residual: f64,
}

/// Principal symbol at the covector `ξ` (coordinates orthonormal for `ω`).
/// `omega_ratio` scales the endomorphism row and equals `ω^n/Ω`.
pub fn symbol_operator(
    theta: &CurvatureTensor,
    t: f64,
    beta: f64,
    xi: &CVec,
    omega_ratio: f64,
    mode: DensityMode,
) -> Result<SymbolOperator> {
    if xi.len() != theta.n() {
        return Err(Error::InvalidInput("covector has wrong dimension".into()));
    }
    if xi.norm() == 0.0 {
        return Err(Error::ZeroCovector);
    }
    let ctx = SymbolContext::new(theta, t, mode, None)?;
    let basis = linalg::hermitian_basis(theta.r());
    let (m, max_trace) = ctx.symbol(beta, xi, omega_ratio, &basis);
    let scale = m.iter().fold(0.0f64, |a, x| a.max(x.abs())).max(1.0);
    if max_trace > TRACE_FREE_TOL * scale {
        return Err(Error::SymmetryViolation { deviation: max_trace / scale });
    }
    Ok(SymbolOperator {
        min_singular_value: linalg::min_singular_value(&m),
        matrix: m.row_iter().map(|row| row.iter().copied().collect()).collect(),
        trace_residual: max_trace,
    })
}

fn unit(v: CVec) -> CVec {
    let nrm = v.norm();
    v / C64::new(nrm, 0.0)
}

/// Unit covectors used to bound symbols from below: the `n` coordinate
/// vectors, `(e_j + ζ e_k)/√2` for `ζ ∈ {1, i, −1, −i}` and `j < k`, `n + 10`
/// golden-ratio lattice vectors, then seeded Gaussian directions.
pub fn xi_net(n: usize, seed: u64) -> Vec<CVec> {
    let mut out = Vec::new();
    for j in 0..n {
        let mut e = CVec::zeros(n);
        e[j] = C64::new(1.0, 0.0);
        out.push(e);
    }
    let phases = [C64::new(1.0, 0.0), C64::new(0.0, 1.0), C64::new(-1.0, 0.0), C64::new(0.0, -1.0)];
    for j in 0..n {
        for k in (j + 1)..n {
            for z in phases {
                let mut e = CVec::zeros(n);
                e[j] = C64::new(1.0, 0.0);
                e[k] = z;
                out.push(unit(e));
            }
        }
    }
    let golden = (1.0 + 5f64.sqrt()) / 2.0;
    for i in 0..(n + 10) {
        let v = CVec::from_iterator(
            n,
            (0..n).map(|a| {
                let step = (i + 1) as f64;
                let x = (step * golden.powi(a as i32 + 1)).fract() + 0.1;
                let y = (step * golden.powi(a as i32 + 2) + 0.5).fract() - 0.5;
                C64::new(x, y)
            }),
        );
        out.push(unit(v));
    }
    let mut rng = random::rng(seed);
    for _ in 0..RANDOM_COVECTORS {
        let v = CVec::from_iterator(
            n,
            (0..n).map(|_| {
                let a: f64 = StandardNormal.sample(&mut rng);
                let b: f64 = StandardNormal.sample(&mut rng);
                C64::new(a, b)
            }),
        );
        out.push(unit(v));
    }
    out
}

/// Numerical ellipticity certificate of a curvature field.
#[derive(Debug, Clone, Serialize)]
pub struct EllipticityCertificate {
    pub mode: String,
    pub t: f64,
    pub beta: f64,
    pub sup_distortion: f64,
    pub worst_node: usize,
    pub min_sigma: f64,
    pub xi_net_seed: u64,
    pub xi_net_size: usize,
    pub norm: String,
    /// `β` exceeds the supremum of the distortion.
    pub sufficient: bool,
}

/// Supremum of the distortion and minimum of the smallest symbol singular
/// value over all nodes and the covector net.
pub fn ellipticity_certificate(
    c: &CurvatureField,
    t: f64,
    beta: f64,
    mode: DensityMode,
    seed: u64,
) -> Result<EllipticityCertificate> {
    let net = xi_net(c.n(), seed);
    let basis = linalg::hermitian_basis(c.r());
    let quad = smoothing(mode).map(|_| SphereQuadrature::default_for(c.r()));
    let per_node: Result<Vec<(f64, f64)>> = c
        .tensors
        .par_iter()
        .map(|theta| {
            let ctx = SymbolContext::new(theta, t, mode, quad.as_ref())?;
            let sigma = net
                .iter()
                .map(|xi| linalg::min_singular_value(&ctx.symbol(beta, xi, 1.0, &basis).0))
                .fold(f64::INFINITY, f64::min);
            Ok((ctx.distortion(), sigma))
        })
        .collect();
    let per_node = per_node?;
    let mut worst_node = 0;
    let mut sup_distortion = f64::NEG_INFINITY;
    let mut min_sigma = f64::INFINITY;
    for (i, (d, s)) in per_node.iter().enumerate() {
        if *d > sup_distortion {
            sup_distortion = *d;
            worst_node = i;
        }
        min_sigma = min_sigma.min(*s);
    }
    Ok(EllipticityCertificate {
        mode: crate::field::density_label(mode),
        t,
        beta,
        sup_distortion,
        worst_node,
        min_sigma,
        xi_net_seed: seed,
        xi_net_size: net.len(),
        norm: "frobenius".into(),
        sufficient: beta > sup_distortion,
    })
}
