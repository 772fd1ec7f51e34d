//! Pointwise Monge-Ampère densities `Φ_N`, `Φ_N*`, `Φ_G`, `Φ_{G,s}` and the
//! comparison with the determinant of the bundle trace.
//!
//! Densities are real numbers relative to the chart volume
//! `Π_j (i dz_j ∧ dz̄_j)`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{self, CMat, CVec, C64};
use crate::sphere::{self, SphereQuadrature};
use crate::tensor::{self, griffiths_net_size, CurvatureTensor, Mode};

/// Threshold below which `det A(v)` counts as degenerate in `Φ_{G,s}`.
pub const DIVERGENCE_EPS: f64 = 1e-10;

/// Which density a value refers to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum DensityMode {
    N,
    NStar,
    G,
    Gs(f64),
}

impl From<Mode> for DensityMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Nakano => DensityMode::N,
            Mode::DualNakano => DensityMode::NStar,
            Mode::Griffiths => DensityMode::G,
        }
    }
}

/// A positive density relative to the chart volume.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DensityValue {
    pub value: f64,
    pub mode: DensityMode,
}

/// `det(m)^{1/r}` for a positive definite hermitian `m`, through the sum of
/// log-eigenvalues. `None` when `m` is not positive definite.
pub fn det_root(m: &CMat, r: usize) -> Option<f64> {
    linalg::logdet_hpd(m).map(|ld| (ld / r as f64).exp())
}

/// Minimum of `det A(v)` over the unit sphere of `E`, valid on the
/// Griffiths-positive cone.
#[derive(Debug, Clone)]
pub struct DetMin {
    pub value: f64,
    pub direction: CVec,
    pub converged: bool,
}

fn log_det_at(theta: &CurvatureTensor, v: &CVec) -> Option<(f64, CMat)> {
    let a = theta.contract_vector(v);
    let ld = linalg::logdet_hpd(&a)?;
    Some((ld, a))
}

/// Riemannian gradient of `v ↦ log det A(v)` on the unit sphere.
fn log_det_gradient(theta: &CurvatureTensor, v: &CVec, a: &CMat) -> CVec {
    let (n, r) = (theta.n(), theta.r());
    let ainv = linalg::inv_hpd(a).expect("positive");
    let mut w = CMat::zeros(r, r);
    for j in 0..n {
        for k in 0..n {
            let s = ainv[(k, j)];
            for l in 0..r {
                for mu in 0..r {
                    w[(l, mu)] += s * theta.get(j, k, l, mu);
                }
            }
        }
    }
    let g = w.transpose() * v;
    (g - v * C64::new(n as f64, 0.0)) * C64::new(2.0, 0.0)
}

/// `min_{|v|=1} det A(v)` by a quasi-uniform net followed by projected
/// gradient descent with Armijo backtracking from the best eight points.
pub fn griffiths_det_min(theta: &CurvatureTensor) -> DetMin {
    let (n, r) = (theta.n(), theta.r());
    if n == 1 {
        let g = tensor::griffiths_min(theta);
        return DetMin {
            value: g.value,
            direction: g.direction,
            converged: g.converged,
        };
    }
    if r == 1 {
        let v = CVec::from_element(1, linalg::ONE);
        let a = theta.contract_vector(&v);
        return DetMin {
            value: linalg::eigvalsh(&a).iter().product(),
            direction: v,
            converged: true,
        };
    }
    let net = sphere::quasi_uniform_net(r, griffiths_net_size(r));
    let mut scored: Vec<(f64, usize)> = net
        .iter()
        .enumerate()
        .map(|(i, v)| (log_det_at(theta, v).map_or(f64::NEG_INFINITY, |x| x.0), i))
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut best: Option<(f64, CVec, bool)> = None;
    for &(f0, i) in scored.iter().take(8) {
        if !f0.is_finite() {
            return DetMin {
                value: 0.0,
                direction: net[i].clone(),
                converged: true,
            };
        }
        let mut v = net[i].clone();
        let (mut f, mut a) = log_det_at(theta, &v).expect("finite");
        let mut eta = 0.1;
        let mut converged = false;
        for _ in 0..5000 {
            let g = log_det_gradient(theta, &v, &a);
            let gn2 = g.norm_squared();
            if gn2.sqrt() < 1e-11 {
                converged = true;
                break;
            }
            let mut accepted = false;
            let mut step = eta;
            for _ in 0..60 {
                let cand = &v - &g * C64::new(step, 0.0);
                let cand = &cand / C64::new(cand.norm(), 0.0);
                if let Some((fc, ac)) = log_det_at(theta, &cand) {
                    if fc <= f - 1e-4 * step * gn2 {
                        let drop = f - fc;
                        v = cand;
                        f = fc;
                        a = ac;
                        accepted = true;
                        if drop < 1e-15 * f.abs().max(1.0) {
                            converged = true;
                        }
                        break;
                    }
                }
                step *= 0.5;
            }
            if !accepted {
                converged = true;
                break;
            }
            if converged {
                break;
            }
            eta = (step * 2.0).min(10.0);
        }
        if best.as_ref().is_none_or(|b| f < b.0) {
            best = Some((f, v, converged));
        }
    }
    let (f, direction, converged) = best.expect("nonempty net");
    DetMin {
        value: f.exp(),
        direction,
        converged,
    }
}

fn require_margin(theta: &CurvatureTensor, mode: Mode) -> Result<f64> {
    let margin = tensor::positivity_margin_lenient(theta, mode);
    if margin > 0.0 {
        Ok(margin)
    } else {
        Err(Error::NotPositive { mode, margin })
    }
}

/// `Φ_N = det(Nakano)^{1/r}`, `Φ_N* = det(dual Nakano)^{1/r}` and
/// `Φ_G = min_{|v|=1} det A(v)`.
pub fn phi_density(theta: &CurvatureTensor, mode: Mode) -> Result<DensityValue> {
    let r = theta.r();
    let value = match mode {
        Mode::Nakano | Mode::DualNakano => {
            let m = if mode == Mode::Nakano {
                theta.nakano_matrix()
            } else {
                theta.dual_transpose().nakano_matrix()
            };
            let margin = m.min_eigenvalue();
            if margin <= 0.0 {
                return Err(Error::NotPositive { mode, margin });
            }
            det_root(m.matrix(), r).expect("positive definite")
        }
        Mode::Griffiths => {
            require_margin(theta, mode)?;
            griffiths_det_min(theta).value
        }
    };
    Ok(DensityValue {
        value,
        mode: mode.into(),
    })
}

/// `log det A(v)` at every quadrature node, with the divergence checks.
pub(crate) fn quadrature_log_dets(
    theta: &CurvatureTensor,
    s: f64,
    quad: &SphereQuadrature,
) -> Result<Vec<f64>> {
    let r = theta.r();
    let mut out = Vec::with_capacity(quad.len());
    let mut min_det = f64::INFINITY;
    for v in &quad.nodes {
        let a = theta.contract_vector(v);
        let ev = linalg::eigvalsh(&a);
        if ev[0] <= 0.0 {
            return Err(Error::NotPositive {
                mode: Mode::Griffiths,
                margin: ev[0],
            });
        }
        let ld: f64 = ev.iter().map(|x| x.ln()).sum();
        min_det = min_det.min(ld.exp());
        out.push(ld);
    }
    if min_det < DIVERGENCE_EPS && s >= r as f64 - 1.0 {
        return Err(Error::DivergentIntegral { min_det, s });
    }
    Ok(out)
}

/// `(mean_i exp(-s·ℓ_i))^{-1/s}` evaluated in log space.
pub(crate) fn power_mean_from_logs(logs: &[f64], s: f64) -> f64 {
    let m = logs
        .iter()
        .map(|l| -s * l)
        .fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logs.iter().map(|l| (-s * l - m).exp()).sum();
    let log_mean = m + (sum / logs.len() as f64).ln();
    (-log_mean / s).exp()
}

/// `Φ_{G,s} = (∫_{|v|=1} det A(v)^{-s} dσ)^{-1/s}` on the given quadrature,
/// after checking Griffiths positivity.
pub fn phi_gs_density(theta: &CurvatureTensor, s: f64, quad: &SphereQuadrature) -> Result<DensityValue> {
    if !(s > 0.0) {
        return Err(Error::InvalidInput(format!("smoothing exponent must be positive, got {s}")));
    }
    if quad.r != theta.r() {
        return Err(Error::InvalidInput("quadrature rank does not match tensor".into()));
    }
    require_margin(theta, Mode::Griffiths)?;
    phi_gs_unchecked(theta, s, quad)
}

/// `Φ_{G,s}` without the Griffiths margin check; quadrature nodes with
/// `det A(v) ≤ 0` still raise `NotPositive`.
pub fn phi_gs_unchecked(theta: &CurvatureTensor, s: f64, quad: &SphereQuadrature) -> Result<DensityValue> {
    let logs = quadrature_log_dets(theta, s, quad)?;
    Ok(DensityValue {
        value: power_mean_from_logs(&logs, s),
        mode: DensityMode::Gs(s),
    })
}

/// Comparison of a density with `det(tr_E Θ)/r^n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Prop25 {
    pub lhs: DensityValue,
    pub rhs: f64,
    pub gap: f64,
}

impl Prop25 {
    /// `gap ≥ −1e-10·rhs`.
    pub fn holds(&self) -> bool {
        self.gap >= -1e-10 * self.rhs
    }
}

/// Density versus the bound `det(tr_E Θ)/r^n`; the gap is nonnegative and
/// vanishes only for projectively flat tensors.
pub fn prop25_check(theta: &CurvatureTensor, mode: Mode) -> Result<Prop25> {
    let lhs = phi_density(theta, mode)?;
    let tr = theta.bundle_trace();
    let rhs = tr.det() / (theta.r() as f64).powi(theta.n() as i32);
    Ok(Prop25 {
        lhs,
        rhs,
        gap: rhs - lhs.value,
    })
}
