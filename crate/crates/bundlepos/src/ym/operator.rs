//! The Monge-Ampère-Yang-Mills operator on a metric field and its exact
//! linearization.
//!
//! Perturbations are hermitian endomorphism fields `U` in the Cholesky
//! frames of `h = L L*`, acting through `δh = L U L*`. Equivalently
//! `U = L* (h⁻¹ δh) L^{-*}` is the logarithmic variation in the orthonormal
//! frame. The operator at a node is the pair
//!
//! ```text
//! Q̂_ℝ = (det h / det h₀)^λ (ω^n / Ω)^β Ω⁻¹ Φ(θ_t)
//! Q̂°  = (1/n) tr_ω Θ° + ε A(det h) (log h̃)° − C°
//! ```
//!
//! with `ω = tr_E Θ`, `θ_t = Θ + t ω ⊗ Id`, `h̃ = h₀⁻¹ h`, `ω^n = n! det ω` and
//! a calibration term `C°` fixed in the Cholesky frame.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::{self, factorial, CurvatureField, DensityField, MetricField};
use crate::functionals::{self, DensityMode};
use crate::linalg::{self, CMat, C64};
use crate::spectral::Spectral;
use crate::sphere::SphereQuadrature;
use crate::tensor::{CurvatureTensor, Mode};

use super::logdiff;
use super::symbol::DEFAULT_SMOOTHING;

/// Dependence of the friction coefficient on `det h`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Friction {
    /// `A = 1`.
    Constant,
    /// `A = (det h₀ / det h)^μ`.
    PowerRatio(f64),
}

impl Friction {
    /// `A` from `log det h − log det h₀`.
    fn value(self, log_ratio: f64) -> f64 {
        match self {
            Friction::Constant => 1.0,
            Friction::PowerRatio(mu) => (-mu * log_ratio).exp(),
        }
    }

    /// `A'(det h)·det h`, so that `dA = slope · tr u`.
    fn slope(self, log_ratio: f64) -> f64 {
        match self {
            Friction::Constant => 0.0,
            Friction::PowerRatio(mu) => -mu * self.value(log_ratio),
        }
    }
}

/// Parameters of the system at one value of `t`.
#[derive(Debug, Clone)]
pub struct YMParams {
    pub t: f64,
    pub beta: f64,
    pub epsilon: f64,
    pub lambda: f64,
    /// `N`, `N*` or `Gs(s)`; plain `G` is read as `Gs` with the default exponent.
    pub mode: DensityMode,
    /// Reference volume form `Ω` as a density.
    pub omega: DensityField,
    pub friction: Friction,
    /// Reference metric `h₀` in the global frame.
    pub reference: Vec<CMat>,
    /// Trace-free calibration `C°` per node in the Cholesky frame.
    pub calibration: Vec<CMat>,
    /// Sphere quadrature for the Griffiths density.
    pub quadrature: Option<SphereQuadrature>,
}

impl YMParams {
    pub fn validate(&self, metric: &MetricField) -> Result<()> {
        let nodes = metric.chart.num_nodes();
        if !(self.beta > 0.0) || !(self.epsilon >= 0.0) || !(self.lambda >= 0.0) {
            return Err(Error::InvalidInput("need beta > 0, epsilon >= 0, lambda >= 0".into()));
        }
        if self.t <= -1.0 / metric.r() as f64 {
            return Err(Error::InvalidInput(format!("t must exceed -1/r, got {}", self.t)));
        }
        if self.omega.values.len() != nodes || self.reference.len() != nodes || self.calibration.len() != nodes {
            return Err(Error::InvalidInput("parameter fields do not match the grid".into()));
        }
        if self.omega.values.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::InvalidInput("reference volume must be positive".into()));
        }
        if let DensityMode::Gs(s) = self.mode {
            if !(s > 0.0) {
                return Err(Error::InvalidInput("smoothing exponent must be positive".into()));
            }
        }
        Ok(())
    }

    pub(crate) fn density_mode(&self) -> DensityMode {
        match self.mode {
            DensityMode::G => DensityMode::Gs(DEFAULT_SMOOTHING),
            m => m,
        }
    }

    pub(crate) fn positivity_mode(&self) -> Mode {
        match self.mode {
            DensityMode::N => Mode::Nakano,
            DensityMode::NStar => Mode::DualNakano,
            _ => Mode::Griffiths,
        }
    }

    fn sphere(&self, r: usize) -> SphereQuadrature {
        self.quadrature.clone().unwrap_or_else(|| SphereQuadrature::default_for(r))
    }
}

/// Lower triangle of `u` with half its diagonal, so that `K + K* = u`.
pub(crate) fn half_lower(u: &CMat) -> CMat {
    let r = u.nrows();
    CMat::from_fn(r, r, |a, b| {
        if a > b {
            u[(a, b)]
        } else if a == b {
            C64::new(0.5 * u[(a, a)].re, 0.0)
        } else {
            C64::new(0.0, 0.0)
        }
    })
}

/// Curvature data of a metric field kept for linearization.
pub struct Geometry {
    pub(crate) sp: Spectral,
    pub(crate) n: usize,
    pub(crate) r: usize,
    pub(crate) h: Vec<CMat>,
    pub(crate) h_inv: Vec<CMat>,
    /// `h⁻¹ ∂_j h` before dealiasing, `[j][node]`.
    p: Vec<Vec<CMat>>,
    pub(crate) l: Vec<CMat>,
    pub(crate) l_inv: Vec<CMat>,
    /// `L* a_{jk} L^{-*}` without the background, `[node][j·n + k]`.
    m0: Vec<Vec<CMat>>,
    pub(crate) theta: Vec<CurvatureTensor>,
}

impl Geometry {
    pub fn new(metric: &MetricField) -> Result<Self> {
        let (n, r) = (metric.n(), metric.r());
        let sp = metric.chart.spectral();
        let h = metric.nodes().to_vec();
        let (l, l_inv) = field::factor_nodes(&h)?;
        let h_inv: Vec<CMat> = l_inv.par_iter().map(|li| li.adjoint() * li).collect();
        let hs = field::matrix_spectra(&sp, &h, r);
        let mut p = Vec::with_capacity(n);
        let mut gamma = Vec::with_capacity(n);
        for j in 0..n {
            let dh = field::synthesize(&sp, &hs, r, |k| sp.dz_symbol(j, k), false);
            let pj: Vec<CMat> = h_inv.par_iter().zip(dh.par_iter()).map(|(a, b)| a * b).collect();
            let ps = field::matrix_spectra(&sp, &pj, r);
            gamma.push(field::synthesize(&sp, &ps, r, |_| C64::new(1.0, 0.0), true));
            p.push(pj);
        }
        let a = field::curvature_of_connection(&sp, n, r, &gamma);
        let background = metric.background();
        let (m0, theta): (Vec<Vec<CMat>>, Vec<CurvatureTensor>) = a
            .par_iter()
            .zip(l.par_iter().zip(l_inv.par_iter()))
            .map(|(ai, (li, lii))| {
                let la = li.adjoint();
                let lia = lii.adjoint();
                let blocks: Vec<CMat> = ai.iter().map(|x| &la * x * &lia).collect();
                let (t, _) = CurvatureTensor::from_endo_blocks_symmetrized(n, r, &blocks);
                (blocks, t.add(background))
            })
            .unzip();
        Ok(Geometry {
            sp,
            n,
            r,
            h,
            h_inv,
            p,
            l,
            l_inv,
            m0,
            theta,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.h.len()
    }

    /// Exact derivative of the curvature tensors (in the moving Cholesky
    /// frames) along `δh = L U L*`.
    pub fn d_theta(&self, u: &[CMat]) -> Vec<CurvatureTensor> {
        let (n, r, sp) = (self.n, self.r, &self.sp);
        let dh: Vec<CMat> = (0..u.len())
            .into_par_iter()
            .map(|i| &self.l[i] * &u[i] * self.l[i].adjoint())
            .collect();
        let ug: Vec<CMat> = (0..u.len())
            .into_par_iter()
            .map(|i| &self.h_inv[i] * &dh[i])
            .collect();
        let ds = field::matrix_spectra(sp, &dh, r);
        let mut da: Vec<Vec<CMat>> = vec![Vec::with_capacity(n * n); u.len()];
        for j in 0..n {
            let d_dh = field::synthesize(sp, &ds, r, |k| sp.dz_symbol(j, k), false);
            let dp: Vec<CMat> = (0..u.len())
                .into_par_iter()
                .map(|i| &self.h_inv[i] * &d_dh[i] - &ug[i] * &self.p[j][i])
                .collect();
            let dps = field::matrix_spectra(sp, &dp, r);
            for k in 0..n {
                let d = field::synthesize(sp, &dps, r, |ks| -sp.dzbar_symbol(k, ks), true);
                for (slot, v) in da.iter_mut().zip(d) {
                    slot.push(v);
                }
            }
        }
        (0..u.len())
            .into_par_iter()
            .map(|i| {
                let k = half_lower(&u[i]);
                let ks = k.adjoint();
                let la = self.l[i].adjoint();
                let lia = self.l_inv[i].adjoint();
                let blocks: Vec<CMat> = self.m0[i]
                    .iter()
                    .zip(&da[i])
                    .map(|(m, d)| &ks * m - m * &ks + &la * d * &lia)
                    .collect();
                CurvatureTensor::from_endo_blocks_symmetrized(n, r, &blocks).0
            })
            .collect()
    }
}

/// Derivative of the curvature field along `δh = h u` with `u` the
/// logarithmic variation in the global frame.
pub fn linearized_curvature(metric: &MetricField, u: &[CMat]) -> Result<CurvatureField> {
    if u.len() != metric.chart.num_nodes() {
        return Err(Error::InvalidInput("perturbation has wrong grid size".into()));
    }
    let geom = Geometry::new(metric)?;
    let frame: Vec<CMat> = (0..u.len())
        .map(|i| geom.l[i].adjoint() * &u[i] * geom.l_inv[i].adjoint())
        .collect();
    Ok(CurvatureField {
        chart: metric.chart.clone(),
        tensors: geom.d_theta(&frame),
        aliasing_warning: false,
        symmetry_defect: 0.0,
    })
}

/// Inverse of the density matrix of `θ_t`, or quadrature data for `Φ_{G,s}`.
enum DensityData {
    Nakano(CMat),
    Dual(CMat),
    Sphere { weights: Vec<f64>, a_inv: Vec<CMat> },
}

/// Pointwise state of the operator.
pub(crate) struct NodeState {
    omega_inv: CMat,
    trace_free_blocks: Vec<CMat>,
    density: DensityData,
    g: CMat,
    g_vals: Vec<f64>,
    g_vecs: CMat,
    log_g_tf: CMat,
    friction: f64,
    friction_slope: f64,
    pub(crate) q_real: f64,
    pub(crate) q_circ: CMat,
}

fn trace_free(m: &CMat) -> CMat {
    let r = m.nrows();
    m - CMat::identity(r, r) * (m.trace() / C64::new(r as f64, 0.0))
}

/// `(1/n) Σ_{jk} (ω⁻¹)_{kj} M_{jk}`.
fn contract_omega(n: usize, omega_inv: &CMat, blocks: &[CMat]) -> CMat {
    let r = blocks[0].nrows();
    let mut out = CMat::zeros(r, r);
    for j in 0..n {
        for k in 0..n {
            out += &blocks[j * n + k] * omega_inv[(k, j)];
        }
    }
    out / C64::new(n as f64, 0.0)
}

/// The operator evaluated at a metric field, with everything needed for
/// its linearization.
pub struct YmPoint {
    pub geom: Geometry,
    pub(crate) nodes: Vec<NodeState>,
    quad: Option<SphereQuadrature>,
}

/// Largest `Q̂_ℝ − 1` and `Q̂°` entries of an operator evaluation.
#[derive(Debug, Clone, Serialize)]
pub struct ResidualSummary {
    pub scalar_sup: f64,
    pub endo_sup: f64,
    pub sup: f64,
}

impl YmPoint {
    /// Evaluates the operator; fails when `ω` or the density degenerates.
    pub fn new(metric: &MetricField, params: &YMParams) -> Result<Self> {
        params.validate(metric)?;
        let geom = Geometry::new(metric)?;
        let quad = match params.density_mode() {
            DensityMode::Gs(_) => Some(params.sphere(geom.r)),
            _ => None,
        };
        let nf = factorial(geom.n).ln();
        let states: Vec<std::result::Result<NodeState, (usize, Error)>> = (0..geom.num_nodes())
            .into_par_iter()
            .map(|i| node_state(&geom, params, quad.as_ref(), nf, i).map_err(|e| (i, e)))
            .collect();
        let mut nodes = Vec::with_capacity(states.len());
        let mut bad = Vec::new();
        let mut first_err = None;
        for s in states {
            match s {
                Ok(ns) => nodes.push(ns),
                Err((i, e)) => {
                    if let Error::NotPositive { .. } = e {
                        bad.push(i);
                    } else if first_err.is_none() {
                        first_err = Some(e);
                    }
                }
            }
        }
        if let Some(e) = first_err {
            return Err(e);
        }
        if !bad.is_empty() {
            return Err(Error::NotPositiveSomewhere {
                mode: params.positivity_mode(),
                nodes: bad,
            });
        }
        Ok(YmPoint { geom, nodes, quad })
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn q_real(&self) -> Vec<f64> {
        self.nodes.iter().map(|s| s.q_real).collect()
    }

    pub fn q_circ(&self) -> Vec<CMat> {
        self.nodes.iter().map(|s| s.q_circ.clone()).collect()
    }

    pub fn residual_summary(&self) -> ResidualSummary {
        let scalar_sup = self.nodes.iter().map(|s| (s.q_real - 1.0).abs()).fold(0.0, f64::max);
        let endo_sup = self
            .nodes
            .iter()
            .flat_map(|s| s.q_circ.iter().map(|z| z.norm()).collect::<Vec<_>>())
            .fold(0.0, f64::max);
        ResidualSummary {
            scalar_sup,
            endo_sup,
            sup: scalar_sup.max(endo_sup),
        }
    }

    /// `(d log Q̂_ℝ, dQ̂°)` along the Cholesky-frame perturbation `U`.
    pub fn linearize(&self, params: &YMParams, u: &[CMat]) -> (Vec<f64>, Vec<CMat>) {
        let dtheta = self.geom.d_theta(u);
        let quad = self.quad.as_ref();
        (0..u.len())
            .into_par_iter()
            .map(|i| {
                let ns = &self.nodes[i];
                let k = half_lower(&u[i]);
                let dg = k.adjoint() * &ns.g + &ns.g * &k;
                let (dl, dq) = response(self.geom.n, ns, params, quad, &dtheta[i]);
                let tr_u = u[i].trace().re;
                let dlog_g = trace_free(&logdiff::dlog_from_eigen(&ns.g_vals, &ns.g_vecs, &dg));
                let friction = &ns.log_g_tf * C64::new(ns.friction_slope * tr_u, 0.0) + dlog_g * C64::new(ns.friction, 0.0);
                (
                    dl.re + params.lambda * tr_u,
                    linalg::hermitian_part(&(dq + friction * C64::new(params.epsilon, 0.0))),
                )
            })
            .unzip()
    }

    /// Principal part of the linearization for `dθ_{jk} = s_{jk} U` with
    /// complex coefficients `s_{jk}`, returned before taking real parts.
    pub(crate) fn principal_response(&self, params: &YMParams, node: usize, blocks: &[CMat]) -> (C64, CMat) {
        let t = CurvatureTensor::from_endo_blocks_unchecked(self.geom.n, self.geom.r, blocks);
        response(self.geom.n, &self.nodes[node], params, self.quad.as_ref(), &t)
    }
}

/// Linear response of `(log Q̂_ℝ, Q̂°)` to a curvature variation `dθ`,
/// without the `λ` and `ε` terms.
fn response(
    n: usize,
    ns: &NodeState,
    params: &YMParams,
    quad: Option<&SphereQuadrature>,
    dtheta: &CurvatureTensor,
) -> (C64, CMat) {
    let d_omega = dtheta.bundle_trace_raw();
    let twisted = dtheta.twist(params.t);
    let d_phi = match &ns.density {
        DensityData::Nakano(inv) => (inv * twisted.nakano_matrix_raw()).trace() / C64::new(dtheta.r() as f64, 0.0),
        DensityData::Dual(inv) => {
            (inv * twisted.dual_transpose().nakano_matrix_raw()).trace() / C64::new(dtheta.r() as f64, 0.0)
        }
        DensityData::Sphere { weights, a_inv } => {
            let nodes = &quad.expect("quadrature present for sphere densities").nodes;
            let mut acc = C64::new(0.0, 0.0);
            for ((v, w), ai) in nodes.iter().zip(weights).zip(a_inv) {
                acc += (ai * twisted.contract_vector(v)).trace() * *w;
            }
            acc
        }
    };
    let d_log = (&ns.omega_inv * &d_omega).trace() * params.beta + d_phi;
    let d_blocks: Vec<CMat> = dtheta.endo_blocks().iter().map(trace_free).collect();
    let d_inv = -(&ns.omega_inv * &d_omega * &ns.omega_inv);
    let dq = contract_omega(n, &ns.omega_inv, &d_blocks) + contract_omega(n, &d_inv, &ns.trace_free_blocks);
    (d_log, dq)
}

fn node_state(
    geom: &Geometry,
    params: &YMParams,
    quad: Option<&SphereQuadrature>,
    log_nfact: f64,
    i: usize,
) -> Result<NodeState> {
    let (n, r) = (geom.n, geom.r);
    let theta = &geom.theta[i];
    let omega = theta.bundle_trace();
    let omega_inv = linalg::inv_hpd(&omega.a).ok_or(Error::NonPositiveTrace {
        min_eigenvalue: omega.eigenvalues()[0],
    })?;
    let log_det_omega = linalg::logdet_hpd(&omega.a).expect("positive definite");
    let twisted = theta.twist(params.t);
    let mode = params.positivity_mode();
    let not_positive = |m: &CMat| Error::NotPositive {
        mode,
        margin: linalg::min_eigenvalue(m),
    };
    let (density, log_phi) = match params.density_mode() {
        DensityMode::N | DensityMode::NStar => {
            let dual = params.density_mode() == DensityMode::NStar;
            let m = if dual {
                twisted.dual_transpose().nakano_matrix_raw()
            } else {
                twisted.nakano_matrix_raw()
            };
            let ld = linalg::logdet_hpd(&m).ok_or_else(|| not_positive(&m))?;
            let inv = linalg::inv_hpd(&m).ok_or_else(|| not_positive(&m))?;
            let data = if dual { DensityData::Dual(inv) } else { DensityData::Nakano(inv) };
            (data, ld / r as f64)
        }
        DensityMode::Gs(s) => {
            let quad = quad.expect("quadrature present for sphere densities");
            let mut logs = Vec::with_capacity(quad.len());
            let mut a_inv = Vec::with_capacity(quad.len());
            for v in &quad.nodes {
                let a = twisted.contract_vector(v);
                logs.push(linalg::logdet_hpd(&a).ok_or_else(|| not_positive(&a))?);
                a_inv.push(linalg::inv_hpd(&a).expect("positive definite"));
            }
            let top = logs.iter().map(|l| -s * l).fold(f64::NEG_INFINITY, f64::max);
            let mut weights: Vec<f64> = logs.iter().map(|l| (-s * l - top).exp()).collect();
            let total: f64 = weights.iter().sum();
            weights.iter_mut().for_each(|w| *w /= total);
            let phi = functionals::power_mean_from_logs(&logs, s);
            (DensityData::Sphere { weights, a_inv }, phi.ln())
        }
        DensityMode::G => unreachable!("plain G is mapped to Gs"),
    };
    let h0 = &params.reference[i];
    let log_ratio = linalg::logdet_hpd(&geom.h[i]).expect("positive metric")
        - linalg::logdet_hpd(h0).ok_or(Error::NonPositiveMetric {
            min_eigenvalue: linalg::min_eigenvalue(h0),
        })?;
    let log_omega_ref = params.omega.values[i].ln();
    let log_q = params.lambda * log_ratio + params.beta * (log_nfact + log_det_omega) - (1.0 + params.beta) * log_omega_ref
        + log_phi;
    let h0_inv = linalg::inv_hpd(h0).expect("positive reference");
    let g = linalg::hermitian_part(&(geom.l[i].adjoint() * h0_inv * &geom.l[i]));
    let (g_vals, g_vecs) = logdiff::positive_eigh(&g)?;
    let log_g_tf = trace_free(&logdiff::log_from_eigen(&g_vals, &g_vecs));
    let friction = params.friction.value(log_ratio);
    let friction_slope = params.friction.slope(log_ratio);
    let trace_free_blocks: Vec<CMat> = theta.trace_free().endo_blocks();
    let q0 = contract_omega(n, &omega_inv, &trace_free_blocks);
    let q_circ = linalg::hermitian_part(
        &(q0 + &log_g_tf * C64::new(params.epsilon * friction, 0.0) - &params.calibration[i]),
    );
    Ok(NodeState {
        omega_inv,
        trace_free_blocks,
        density,
        g,
        g_vals,
        g_vecs,
        log_g_tf,
        friction,
        friction_slope,
        q_real: log_q.exp(),
        q_circ,
    })
}

/// `(1/n) tr_ω Θ°` at every node of a curvature field, in the orthonormal frames.
pub fn trace_free_contraction(c: &CurvatureField) -> Result<Vec<CMat>> {
    c.tensors
        .par_iter()
        .map(|theta| {
            let omega = theta.bundle_trace();
            let inv = linalg::inv_hpd(&omega.a).ok_or(Error::NonPositiveTrace {
                min_eigenvalue: omega.eigenvalues()[0],
            })?;
            Ok(linalg::hermitian_part(&contract_omega(
                theta.n(),
                &inv,
                &theta.trace_free().endo_blocks(),
            )))
        })
        .collect()
}

/// Linearized operator along a Cholesky-frame perturbation field `U`:
/// `(d log Q̂_ℝ, dQ̂°)`.
pub fn linearized_q(metric: &MetricField, params: &YMParams, u: &[CMat]) -> Result<(Vec<f64>, Vec<CMat>)> {
    if u.len() != metric.chart.num_nodes() {
        return Err(Error::InvalidInput("perturbation has wrong grid size".into()));
    }
    let point = YmPoint::new(metric, params)?;
    Ok(point.linearize(params, u))
}

/// Metric `L exp(U) L*` at every node.
pub fn retract(geom: &Geometry, u: &[CMat]) -> Vec<CMat> {
    (0..u.len())
        .into_par_iter()
        .map(|i| {
            let e = linalg::herm_fn(&u[i], f64::exp);
            linalg::hermitian_part(&(&geom.l[i] * e * geom.l[i].adjoint()))
        })
        .collect()
}

/// Pairing `Σ_nodes det ω (d log Q̂_ℝ · tr U + ⟨dQ̂°, U°⟩)` of the
/// linearization with the perturbation.
pub fn coercivity_pairing(point: &YmPoint, params: &YMParams, u: &[CMat]) -> f64 {
    let (dl, dq) = point.linearize(params, u);
    let mut acc = 0.0;
    for i in 0..u.len() {
        let theta = &point.geom.theta[i];
        let w = theta.bundle_trace().det();
        let tr_u = u[i].trace().re;
        let tf = trace_free(&u[i]);
        acc += w * (dl[i] * tr_u + linalg::re_tr_prod(&dq[i], &tf.adjoint()));
    }
    acc / u.len() as f64
}

/// Smooth random hermitian perturbation field built from a few low Fourier
/// modes with Gaussian coefficients, scaled to the given sup norm.
pub fn random_smooth_field(chart: &field::TorusChart, r: usize, modes: usize, sup: f64, seed: u64) -> Vec<CMat> {
    use rand::Rng;
    let mut rng = crate::random::rng(seed);
    let dims = chart.dims();
    let mut terms = Vec::new();
    for _ in 0..modes {
        let ks: Vec<f64> = (0..dims).map(|_| rng.random_range(-2i64..=2) as f64).collect();
        let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let coef = crate::random::hermitian(r, &mut rng);
        terms.push((ks, phase, coef));
    }
    let mut out: Vec<CMat> = (0..chart.num_nodes())
        .map(|i| {
            let x = chart.coords(i);
            let mut m = CMat::zeros(r, r);
            for (ks, phase, coef) in &terms {
                let arg: f64 = ks
                    .iter()
                    .zip(&x)
                    .zip(&chart.periods)
                    .map(|((k, xi), p)| std::f64::consts::TAU * k * xi / p)
                    .sum::<f64>()
                    + phase;
                m += coef * C64::new(arg.cos(), 0.0);
            }
            m
        })
        .collect();
    let top = out.iter().flat_map(|m| m.iter().map(|z| z.norm()).collect::<Vec<_>>()).fold(0.0, f64::max);
    if top > 0.0 {
        for m in out.iter_mut() {
            *m *= C64::new(sup / top, 0.0);
        }
    }
    out
}

/// Endomorphism blocks `s_{jk} U`, row-major in `(j,k)`.
pub(crate) fn principal_blocks(n: usize, s: &[C64], u: &CMat) -> Vec<CMat> {
    let mut blocks = Vec::with_capacity(n * n);
    for j in 0..n {
        for k in 0..n {
            blocks.push(u * s[j * n + k]);
        }
    }
    blocks
}
