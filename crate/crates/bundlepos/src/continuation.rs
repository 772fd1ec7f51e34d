//! Calibration, residuals, damped Newton-Krylov solves and continuation in
//! the twist parameter for the Monge-Ampère-Yang-Mills system.
//!
//! Unknowns are hermitian perturbations `U` in the Cholesky frames of the
//! current metric, with coordinates in [`linalg::hermitian_basis`]; a Newton
//! step updates `h ← L exp(U) L*`. Residual vectors hold `Q̂_ℝ − 1` and the
//! trace-free coordinates of `Q̂°` at every node.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{self, DensityField, MetricField};
use crate::functionals::DensityMode;
use crate::krylov;
use crate::linalg::{self, CMat, C64};
use crate::spectral::Spectral;
use crate::sphere::SphereQuadrature;
use crate::tensor::{positivity_margin_lenient, CurvatureTensor};
use crate::ym::operator::{self, coercivity_pairing, principal_blocks, random_smooth_field, ResidualSummary};
use crate::ym::{symbol, Friction, YMParams, YmPoint};

pub const DEFAULT_NEWTON_TOL: f64 = 1e-9;
/// Largest number of friction doublings in [`escalate_friction`].
pub const MAX_FRICTION_DOUBLINGS: u32 = 10;
/// Nodes sampled when averaging the principal symbol for the preconditioner.
const PRECONDITIONER_SAMPLES: usize = 256;

/// Newton-Krylov settings.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SolverOptions {
    pub newton_tol: f64,
    pub max_newton: usize,
    pub max_halvings: usize,
    pub gmres_restart: usize,
    pub gmres_max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            newton_tol: DEFAULT_NEWTON_TOL,
            max_newton: 25,
            max_halvings: 12,
            gmres_restart: 50,
            gmres_max_iter: 500,
        }
    }
}

/// Operator parameters with `Ω` and the trace-free calibration chosen so
/// that `(t₀, M₀)` solves the system exactly.
pub fn calibrated_params(
    metric: &MetricField,
    t0: f64,
    beta: f64,
    epsilon: f64,
    lambda: f64,
    mode: DensityMode,
    friction: Friction,
) -> Result<YMParams> {
    let nodes = metric.chart.num_nodes();
    let r = metric.r();
    let quadrature = match mode {
        DensityMode::G | DensityMode::Gs(_) => Some(solver_quadrature(r)),
        _ => None,
    };
    let mut params = YMParams {
        t: t0,
        beta,
        epsilon,
        lambda,
        mode,
        omega: DensityField::new(metric.chart.clone(), vec![1.0; nodes])?,
        friction,
        reference: metric.nodes().to_vec(),
        calibration: vec![CMat::zeros(r, r); nodes],
        quadrature,
    };
    let point = YmPoint::new(metric, &params)?;
    let omega: Vec<f64> = point.q_real().iter().map(|q| q.powf(1.0 / (1.0 + beta))).collect();
    params.omega = DensityField::new(metric.chart.clone(), omega)?;
    params.calibration = point.q_circ();
    Ok(params)
}

/// Sphere quadrature used by the solver for Griffiths densities.
pub fn solver_quadrature(r: usize) -> SphereQuadrature {
    SphereQuadrature::new(r, 64 * r * r, crate::sphere::DEFAULT_QUAD_SEED)
}

/// `Ω = ((ω^n)^β Φ(θ_{t₀}))^{1/(1+β)}` at every node of `M₀`.
pub fn calibrate_reference_volume(metric: &MetricField, t0: f64, beta: f64, mode: DensityMode) -> Result<DensityField> {
    Ok(calibrated_params(metric, t0, beta, 0.0, 0.0, mode, Friction::Constant)?.omega)
}

/// `(Q̂_ℝ − 1, Q̂°)` at every node.
#[derive(Debug, Clone)]
pub struct Residual {
    pub scalar: Vec<f64>,
    pub endo: Vec<CMat>,
    pub summary: ResidualSummary,
}

pub fn residual(metric: &MetricField, params: &YMParams) -> Result<Residual> {
    let point = YmPoint::new(metric, params)?;
    Ok(Residual {
        scalar: point.q_real().iter().map(|q| q - 1.0).collect(),
        endo: point.q_circ(),
        summary: point.residual_summary(),
    })
}

fn residual_vector(point: &YmPoint, basis: &[CMat]) -> Vec<f64> {
    let rr = basis.len();
    let mut out = vec![0.0; point.num_nodes() * rr];
    for (i, ns) in point.nodes.iter().enumerate() {
        out[i * rr] = ns.q_real - 1.0;
        let c = linalg::herm_to_coords(&ns.q_circ, basis);
        out[i * rr + 1..(i + 1) * rr].copy_from_slice(&c[1..]);
    }
    out
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |a, x| a.max(x.abs()))
}

fn fields_from_vector(x: &[f64], basis: &[CMat]) -> Vec<CMat> {
    x.chunks(basis.len()).map(|c| linalg::coords_to_herm(c, basis)).collect()
}

fn jacobian_vector(point: &YmPoint, params: &YMParams, basis: &[CMat], x: &[f64]) -> Vec<f64> {
    let rr = basis.len();
    let u = fields_from_vector(x, basis);
    let (dl, dq) = point.linearize(params, &u);
    let mut out = vec![0.0; x.len()];
    for i in 0..u.len() {
        out[i * rr] = point.nodes[i].q_real * dl[i];
        let c = linalg::herm_to_coords(&dq[i], basis);
        out[i * rr + 1..(i + 1) * rr].copy_from_slice(&c[1..]);
    }
    out
}

/// Constant-coefficient approximation of the Jacobian, inverted mode by
/// mode in Fourier space. The principal part is averaged over sampled
/// nodes; the zero-order part keeps the `λ` and `ε` terms.
struct SymbolPreconditioner {
    rr: usize,
    inverses: Vec<DMatrix<f64>>,
}

impl SymbolPreconditioner {
    fn new(point: &YmPoint, params: &YMParams, basis: &[CMat]) -> Self {
        let (n, r) = (point.geom.n, point.geom.r);
        let rr = r * r;
        let nodes = point.num_nodes();
        let stride = nodes.div_ceil(PRECONDITIONER_SAMPLES).max(1);
        let samples: Vec<usize> = (0..nodes).step_by(stride).collect();
        let zero = CMat::zeros(r, r);
        // Averaged responses to dθ_{jk} = B_b for each (j,k).
        let mut scalar = vec![vec![C64::new(0.0, 0.0); rr]; n * n];
        let mut endo = vec![vec![zero.clone(); rr]; n * n];
        let per_sample: Vec<Vec<Vec<(C64, CMat)>>> = samples
            .par_iter()
            .map(|&i| {
                (0..n * n)
                    .map(|jk| {
                        basis
                            .iter()
                            .map(|b| {
                                let mut s = vec![C64::new(0.0, 0.0); n * n];
                                s[jk] = C64::new(1.0, 0.0);
                                point.principal_response(params, i, &principal_blocks(n, &s, b))
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        let w = 1.0 / samples.len() as f64;
        for sample in &per_sample {
            for jk in 0..n * n {
                for b in 0..rr {
                    scalar[jk][b] += sample[jk][b].0 * w;
                    endo[jk][b] += &sample[jk][b].1 * C64::new(w, 0.0);
                }
            }
        }
        let q_mean = point.nodes.iter().map(|s| s.q_real).sum::<f64>() / nodes as f64;
        let zero_order_scalar = q_mean * params.lambda * (r as f64).sqrt();
        let zero_order_endo = params.epsilon;
        let sp = &point.geom.sp;
        let inverses: Vec<DMatrix<f64>> = (0..sp.len())
            .into_par_iter()
            .map(|idx| {
                let ks = sp.wave_ints(idx);
                let mut p = DMatrix::zeros(rr, rr);
                for b in 0..rr {
                    let mut acc_s = C64::new(0.0, 0.0);
                    let mut acc_m = CMat::zeros(r, r);
                    for j in 0..n {
                        for k in 0..n {
                            let s = -sp.dz_symbol(j, ks) * sp.dzbar_symbol(k, ks);
                            acc_s += scalar[j * n + k][b] * s;
                            acc_m += &endo[j * n + k][b] * s;
                        }
                    }
                    p[(0, b)] = q_mean * acc_s.re;
                    let coords = linalg::herm_to_coords(&linalg::hermitian_part(&acc_m), basis);
                    for a in 1..rr {
                        p[(a, b)] = coords[a];
                    }
                }
                p[(0, 0)] += zero_order_scalar;
                for a in 1..rr {
                    p[(a, a)] += zero_order_endo;
                }
                p.try_inverse().unwrap_or_else(|| DMatrix::identity(rr, rr))
            })
            .collect();
        SymbolPreconditioner { rr, inverses }
    }

    fn apply(&self, sp: &Spectral, y: &[f64]) -> Vec<f64> {
        let rr = self.rr;
        let nodes = sp.len();
        let spectra: Vec<Vec<C64>> = (0..rr)
            .into_par_iter()
            .map(|b| {
                let mut line: Vec<C64> = (0..nodes).map(|i| C64::new(y[i * rr + b], 0.0)).collect();
                sp.forward(&mut line);
                line
            })
            .collect();
        let mut solved = vec![vec![C64::new(0.0, 0.0); nodes]; rr];
        for idx in 0..nodes {
            let inv = &self.inverses[idx];
            for a in 0..rr {
                let mut acc = C64::new(0.0, 0.0);
                for b in 0..rr {
                    acc += spectra[b][idx] * inv[(a, b)];
                }
                solved[a][idx] = acc;
            }
        }
        let back: Vec<Vec<C64>> = solved
            .into_par_iter()
            .map(|mut line| {
                sp.inverse(&mut line);
                line
            })
            .collect();
        let mut out = vec![0.0; nodes * rr];
        for a in 0..rr {
            for i in 0..nodes {
                out[i * rr + a] = back[a][i].re;
            }
        }
        out
    }
}

/// A solved state of the system.
#[derive(Debug, Clone)]
pub struct SolverState {
    pub t: f64,
    pub metric: MetricField,
    pub residual: ResidualSummary,
    /// Smallest positivity margin of `θ_t` over the nodes.
    pub margin: f64,
    pub margin_node: usize,
    pub newton_iterations: usize,
    pub residual_history: Vec<f64>,
    pub gmres_iterations: Vec<usize>,
}

/// Scalars of a [`SolverState`] for reports and checkpoints.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct StateSummary {
    pub t: f64,
    pub residual_scalar: f64,
    pub residual_endo: f64,
    pub margin: f64,
    pub margin_node: usize,
    pub newton_iterations: usize,
    pub gmres_iterations: usize,
}

impl SolverState {
    pub fn summary(&self) -> StateSummary {
        StateSummary {
            t: self.t,
            residual_scalar: self.residual.scalar_sup,
            residual_endo: self.residual.endo_sup,
            margin: self.margin,
            margin_node: self.margin_node,
            newton_iterations: self.newton_iterations,
            gmres_iterations: self.gmres_iterations.iter().sum(),
        }
    }
}

fn margins(point: &YmPoint, params: &YMParams) -> (f64, usize) {
    let mode = params.positivity_mode();
    let m: Vec<f64> = point
        .geom
        .theta
        .par_iter()
        .map(|th| positivity_margin_lenient(&th.twist(params.t), mode))
        .collect();
    let mut best = (f64::INFINITY, 0);
    for (i, v) in m.iter().enumerate() {
        if *v < best.0 {
            best = (*v, i);
        }
    }
    best
}

fn positivity_lost(params: &YMParams, e: Error) -> Error {
    match e {
        Error::NotPositiveSomewhere { mode, nodes } => Error::PositivityLost {
            t: params.t,
            mode,
            margin: 0.0,
            node: nodes[0],
        },
        Error::NonPositiveTrace { min_eigenvalue } => Error::PositivityLost {
            t: params.t,
            mode: params.positivity_mode(),
            margin: min_eigenvalue,
            node: 0,
        },
        other => other,
    }
}

/// Damped Newton-Krylov solve at `params.t` starting from `initial`. Warns
/// when `β` does not exceed the distortion at the starting point.
pub fn solve_at_t(initial: &MetricField, params: &YMParams, opts: &SolverOptions) -> Result<SolverState> {
    newton(initial, params, opts, true)
}

fn newton(initial: &MetricField, params: &YMParams, opts: &SolverOptions, check_beta: bool) -> Result<SolverState> {
    let basis = linalg::hermitian_basis(initial.r());
    let mut metric = initial.clone();
    let mut point = YmPoint::new(&metric, params).map_err(|e| positivity_lost(params, e))?;
    if check_beta {
        warn_if_not_elliptic(&point, params);
    }
    let mut f = residual_vector(&point, &basis);
    let mut history = vec![sup(&f)];
    let mut gmres_iterations = Vec::new();
    let mut iterations = 0;
    while history[iterations] >= opts.newton_tol {
        if iterations == opts.max_newton {
            return Err(Error::NewtonDiverged {
                t: params.t,
                residual: history[iterations],
            });
        }
        let current = history[iterations];
        let pre = SymbolPreconditioner::new(&point, params, &basis);
        let rhs: Vec<f64> = f.iter().map(|v| -v).collect();
        let rel_tol = current.clamp(1e-12, 1e-4);
        let out = krylov::gmres(
            |x| jacobian_vector(&point, params, &basis, x),
            |y| pre.apply(&point.geom.sp, y),
            &rhs,
            rel_tol,
            opts.gmres_restart,
            opts.gmres_max_iter,
        );
        gmres_iterations.push(out.iterations);
        let step = fields_from_vector(&out.x, &basis);
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let scaled: Vec<CMat> = step.iter().map(|u| u * C64::new(alpha, 0.0)).collect();
            let trial = metric.with_nodes(operator::retract(&point.geom, &scaled));
            if let Ok(trial) = trial {
                if let Ok(p) = YmPoint::new(&trial, params) {
                    let g = residual_vector(&p, &basis);
                    let s = sup(&g);
                    if s < (1.0 - 1e-4 * alpha) * current || s < opts.newton_tol {
                        accepted = Some((trial, p, g, s));
                        break;
                    }
                }
            }
            alpha *= 0.5;
        }
        let Some((m, p, g, s)) = accepted else {
            return Err(Error::NewtonDiverged {
                t: params.t,
                residual: current,
            });
        };
        log::debug!("t = {}: newton {} residual {s:e} (gmres {})", params.t, iterations + 1, out.iterations);
        metric = m;
        point = p;
        f = g;
        history.push(s);
        iterations += 1;
    }
    let (margin, margin_node) = margins(&point, params);
    if !(margin > 0.0) {
        return Err(Error::PositivityLost {
            t: params.t,
            mode: params.positivity_mode(),
            margin,
            node: margin_node,
        });
    }
    Ok(SolverState {
        t: params.t,
        residual: point.residual_summary(),
        metric,
        margin,
        margin_node,
        newton_iterations: iterations,
        residual_history: history,
        gmres_iterations,
    })
}

/// Largest distortion over a set of curvature tensors.
pub fn sup_distortion(thetas: &[CurvatureTensor], t: f64, mode: DensityMode) -> Result<f64> {
    let d: Result<Vec<f64>> = thetas.par_iter().map(|th| symbol::distortion(th, t, mode)).collect();
    Ok(d?.into_iter().fold(0.0, f64::max))
}

fn warn_if_not_elliptic(point: &YmPoint, params: &YMParams) {
    match sup_distortion(&point.geom.theta, params.t, params.density_mode()) {
        Ok(worst) if params.beta <= worst => {
            log::warn!("beta = {} does not exceed the distortion {worst:e}; ellipticity is not certified", params.beta)
        }
        Ok(_) => {}
        Err(e) => log::warn!("distortion check failed: {e}"),
    }
}

/// Doubles `ε` and `λ` until the coercivity pairing is nonnegative on
/// `probes` random smooth fields, at most [`MAX_FRICTION_DOUBLINGS`] times.
/// Returns the accepted parameters and the number of doublings.
pub fn escalate_friction(metric: &MetricField, params: &YMParams, probes: usize, seed: u64) -> Result<(YMParams, u32)> {
    let mut p = params.clone();
    for doublings in 0..=MAX_FRICTION_DOUBLINGS {
        let point = YmPoint::new(metric, &p)?;
        let ok = (0..probes).all(|k| {
            let u = random_smooth_field(&metric.chart, metric.r(), 4, 1.0, seed.wrapping_add(k as u64));
            coercivity_pairing(&point, &p, &u) >= 0.0
        });
        if ok {
            return Ok((p, doublings));
        }
        if doublings < MAX_FRICTION_DOUBLINGS {
            p.epsilon *= 2.0;
            p.lambda *= 2.0;
        }
    }
    Err(Error::InvalidInput(format!(
        "coercivity probe still fails at epsilon = {}, lambda = {}",
        p.epsilon, p.lambda
    )))
}

/// Newton restarts from random perturbations of a solved state.
#[derive(Debug, Clone, Serialize)]
pub struct UniquenessReport {
    pub restarts: usize,
    pub amplitude: f64,
    pub seed: u64,
    /// Largest relative Frobenius distance to the reference solution.
    pub max_deviation: f64,
    pub all_converged: bool,
}

pub fn uniqueness_probe(
    state: &SolverState,
    params: &YMParams,
    opts: &SolverOptions,
    restarts: usize,
    amplitude: f64,
    seed: u64,
) -> Result<UniquenessReport> {
    let geom = operator::Geometry::new(&state.metric)?;
    let mut max_deviation: f64 = 0.0;
    let mut all_converged = true;
    for k in 0..restarts {
        let u = random_smooth_field(&state.metric.chart, state.metric.r(), 5, amplitude, seed.wrapping_add(k as u64));
        let start = state.metric.with_nodes(operator::retract(&geom, &u))?;
        match solve_at_t(&start, params, opts) {
            Ok(s) => {
                for (a, b) in s.metric.nodes().iter().zip(state.metric.nodes()) {
                    max_deviation = max_deviation.max(linalg::fro(&(a - b)) / linalg::fro(b));
                }
            }
            Err(e) => {
                log::warn!("restart {k} failed: {e}");
                all_converged = false;
            }
        }
    }
    Ok(UniquenessReport {
        restarts,
        amplitude,
        seed,
        max_deviation,
        all_converged,
    })
}

/// Adaptive stepping controls.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ContinuationOptions {
    pub solver: SolverOptions,
    pub dt_init: f64,
    pub dt_min: f64,
    pub grow: f64,
    /// Steps solved within this many Newton iterations enlarge `δt`.
    pub easy_iterations: usize,
    pub max_steps: usize,
}

impl Default for ContinuationOptions {
    fn default() -> Self {
        ContinuationOptions {
            solver: SolverOptions::default(),
            dt_init: 0.01,
            dt_min: 1e-5,
            grow: 1.5,
            easy_iterations: 3,
            max_steps: 10_000,
        }
    }
}

/// Why a continuation run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    ReachedTarget,
    PositivityLost,
    NewtonDiverged,
    StepFloor,
    MaxSteps,
}

/// Path of accepted states and the reason the run ended.
#[derive(Debug, Clone)]
pub struct ContinuationReport {
    pub path: Vec<StateSummary>,
    pub t_inf: f64,
    pub stop_reason: StopReason,
    pub last_error: Option<String>,
    pub dt: f64,
    pub params: ParamsRecord,
    pub final_state: SolverState,
}

/// Scalars describing the operator parameters, enough to rebuild them from
/// the reference metric.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ParamsRecord {
    pub t0: f64,
    pub beta: f64,
    pub epsilon: f64,
    pub lambda: f64,
    pub mode: String,
    pub friction_mu: Option<f64>,
}

impl ParamsRecord {
    pub fn new(t0: f64, params: &YMParams) -> Self {
        ParamsRecord {
            t0,
            beta: params.beta,
            epsilon: params.epsilon,
            lambda: params.lambda,
            mode: field::density_label(params.mode),
            friction_mu: match params.friction {
                Friction::Constant => None,
                Friction::PowerRatio(mu) => Some(mu),
            },
        }
    }

    pub fn density_mode(&self) -> Result<DensityMode> {
        parse_density_mode(&self.mode)
    }

    /// Rebuilds calibrated parameters at `t0` from the reference metric.
    pub fn rebuild(&self, reference: &MetricField) -> Result<YMParams> {
        let friction = self.friction_mu.map_or(Friction::Constant, Friction::PowerRatio);
        calibrated_params(reference, self.t0, self.beta, self.epsilon, self.lambda, self.density_mode()?, friction)
    }
}

/// Parses `N`, `N*`, `G`, `G,s=<s>` or `Gs:<s>`.
pub fn parse_density_mode(s: &str) -> Result<DensityMode> {
    match s {
        "N" => Ok(DensityMode::N),
        "N*" => Ok(DensityMode::NStar),
        "G" => Ok(DensityMode::G),
        _ => {
            let tail = s
                .strip_prefix("G,s=")
                .or_else(|| s.strip_prefix("Gs:"))
                .ok_or_else(|| Error::InvalidInput(format!("unknown density mode {s}")))?;
            tail.parse::<f64>()
                .map(DensityMode::Gs)
                .map_err(|_| Error::InvalidInput(format!("unknown density mode {s}")))
        }
    }
}

/// Checkpoint sidecar contents.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CheckpointSidecar {
    pub version: u32,
    pub params: ParamsRecord,
    pub t_target: f64,
    pub dt: f64,
    pub options: ContinuationOptions,
    pub path: Vec<StateSummary>,
}

pub const CHECKPOINT_STATE: &str = "state.bpos";
pub const CHECKPOINT_PREVIOUS: &str = "previous.bpos";
pub const CHECKPOINT_REFERENCE: &str = "reference.bpos";
pub const CHECKPOINT_SIDECAR: &str = "checkpoint.json";

/// Where and how often to write checkpoints.
#[derive(Debug, Clone)]
pub struct CheckpointSpec {
    pub dir: PathBuf,
    pub every: usize,
}

fn write_checkpoint(
    spec: &CheckpointSpec,
    reference: &MetricField,
    state: &MetricField,
    previous: Option<&MetricField>,
    sidecar: &CheckpointSidecar,
) -> Result<()> {
    std::fs::create_dir_all(&spec.dir)?;
    field::write_metric(&spec.dir.join(CHECKPOINT_REFERENCE), reference)?;
    field::write_metric(&spec.dir.join(CHECKPOINT_STATE), state)?;
    let prev_path = spec.dir.join(CHECKPOINT_PREVIOUS);
    match previous {
        Some(p) => field::write_metric(&prev_path, p)?,
        None if prev_path.exists() => std::fs::remove_file(&prev_path)?,
        None => {}
    }
    let json = serde_json::to_string_pretty(sidecar).map_err(|e| Error::Io(e.to_string()))?;
    std::fs::write(spec.dir.join(CHECKPOINT_SIDECAR), json + "\n")?;
    Ok(())
}

fn classify(e: &Error) -> StopReason {
    match e {
        Error::PositivityLost { .. } | Error::NotPositiveSomewhere { .. } | Error::NonPositiveTrace { .. } => {
            StopReason::PositivityLost
        }
        Error::NewtonDiverged { .. } => StopReason::NewtonDiverged,
        _ => StopReason::StepFloor,
    }
}

/// Starting guess at `t_try` extrapolated linearly in the Cholesky frame of
/// the current solution from the previous one: with `h_prev = L exp(U) L*`,
/// the guess is `L exp(−w U) L*` for `w = (t_try − t)/(t − t_prev)`.
fn predict(state: &SolverState, previous: &(f64, MetricField), t_try: f64) -> Option<MetricField> {
    let (t_prev, prev) = previous;
    let span = state.t - t_prev;
    if span == 0.0 {
        return None;
    }
    let w = (t_try - state.t) / span;
    let nodes: Option<Vec<CMat>> = state
        .metric
        .nodes()
        .par_iter()
        .zip(prev.nodes().par_iter())
        .map(|(h, hp)| {
            let l = linalg::cholesky_lower(h).ok()?;
            let li = linalg::lower_inverse(&l);
            let g = linalg::hermitian_part(&(&li * hp * li.adjoint()));
            if linalg::min_eigenvalue(&g) <= 0.0 {
                return None;
            }
            let step = linalg::herm_fn(&g, |x| (-w * x.ln()).exp());
            Some(linalg::hermitian_part(&(&l * step * l.adjoint())))
        })
        .collect();
    state.metric.with_nodes(nodes?).ok()
}

struct Run<'a> {
    reference: &'a MetricField,
    record: ParamsRecord,
    params: YMParams,
    t_target: f64,
    opts: ContinuationOptions,
    checkpoint: Option<CheckpointSpec>,
}

impl Run<'_> {
    fn go(
        mut self,
        start: SolverState,
        mut previous: Option<(f64, MetricField)>,
        mut path: Vec<StateSummary>,
        mut dt: f64,
    ) -> Result<ContinuationReport> {
        let mut state = start;
        let mut check_beta = true;
        let mut last_error = None;
        let mut steps = 0;
        let sign = if self.t_target < state.t { -1.0 } else { 1.0 };
        let stop_reason = loop {
            if (self.t_target - state.t) * sign <= 0.0 {
                break StopReason::ReachedTarget;
            }
            if steps == self.opts.max_steps {
                break StopReason::MaxSteps;
            }
            let remaining = (self.t_target - state.t).abs();
            let h = dt.min(remaining);
            let t_try = if h == remaining { self.t_target } else { state.t + sign * h };
            self.params.t = t_try;
            let first = std::mem::take(&mut check_beta);
            let guess = previous.as_ref().and_then(|p| predict(&state, p, t_try));
            let attempt = match guess {
                Some(g) => newton(&g, &self.params, &self.opts.solver, first)
                    .or_else(|_| newton(&state.metric, &self.params, &self.opts.solver, false)),
                None => newton(&state.metric, &self.params, &self.opts.solver, first),
            };
            match attempt {
                Ok(next) => {
                    if next.newton_iterations <= self.opts.easy_iterations {
                        dt *= self.opts.grow;
                    }
                    log::info!("accepted t = {t_try} ({} newton iterations)", next.newton_iterations);
                    path.push(next.summary());
                    previous = Some((state.t, std::mem::replace(&mut state, next).metric));
                    steps += 1;
                    if let Some(spec) = &self.checkpoint {
                        if steps % spec.every.max(1) == 0 {
                            let sidecar = CheckpointSidecar {
                                version: 1,
                                params: self.record.clone(),
                                t_target: self.t_target,
                                dt,
                                options: self.opts.clone(),
                                path: path.clone(),
                            };
                            let prev = previous.as_ref().map(|p| &p.1);
                            write_checkpoint(spec, self.reference, &state.metric, prev, &sidecar)?;
                        }
                    }
                }
                Err(e) => {
                    log::info!("step to t = {t_try} failed: {e}");
                    let reason = classify(&e);
                    last_error = Some(e.to_string());
                    dt *= 0.5;
                    if dt < self.opts.dt_min {
                        break reason;
                    }
                }
            }
        };
        Ok(ContinuationReport {
            t_inf: state.t,
            path,
            stop_reason,
            last_error,
            dt,
            params: self.record,
            final_state: state,
        })
    }
}

/// Continues a solved state at `params.t` toward `t_target` with adaptive
/// steps. Terminal failures end the run and are reported, not raised.
pub fn continue_in_t(
    reference: &MetricField,
    start: SolverState,
    params: &YMParams,
    t0: f64,
    t_target: f64,
    opts: &ContinuationOptions,
    checkpoint: Option<CheckpointSpec>,
) -> Result<ContinuationReport> {
    let path = vec![start.summary()];
    let run = Run {
        reference,
        record: ParamsRecord::new(t0, params),
        params: params.clone(),
        t_target,
        opts: opts.clone(),
        checkpoint,
    };
    run.go(start, None, path, opts.dt_init)
}

/// Resumes a run from a checkpoint directory, continuing toward the stored
/// target with the stored options.
pub fn resume_continuation(dir: &Path, checkpoint: Option<CheckpointSpec>) -> Result<ContinuationReport> {
    let text = std::fs::read_to_string(dir.join(CHECKPOINT_SIDECAR))?;
    let sidecar: CheckpointSidecar =
        serde_json::from_str(&text).map_err(|e| Error::InvalidInput(format!("bad checkpoint sidecar: {e}")))?;
    let reference = field::read_metric(&dir.join(CHECKPOINT_REFERENCE))?;
    let metric = field::read_metric(&dir.join(CHECKPOINT_STATE))?;
    let mut params = sidecar.params.rebuild(&reference)?;
    let last = sidecar
        .path
        .last()
        .ok_or_else(|| Error::InvalidInput("checkpoint has an empty path".into()))?;
    params.t = last.t;
    let start = solve_at_t(&metric, &params, &sidecar.options.solver)?;
    let prev_path = dir.join(CHECKPOINT_PREVIOUS);
    let previous = if prev_path.exists() && sidecar.path.len() >= 2 {
        Some((sidecar.path[sidecar.path.len() - 2].t, field::read_metric(&prev_path)?))
    } else {
        None
    };
    let run = Run {
        reference: &reference,
        record: sidecar.params.clone(),
        params,
        t_target: sidecar.t_target,
        opts: sidecar.options.clone(),
        checkpoint,
    };
    run.go(start, previous, sidecar.path.clone(), sidecar.dt)
}

#[cfg(test)]
mod tests;
