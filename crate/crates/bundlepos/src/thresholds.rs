//! Per-metric positivity thresholds of the twist family
//! `θ_t = Θ + t·(tr_E Θ) ⊗ Id`.
//!
//! For `tr_E Θ ≻ 0` every margin is nondecreasing in `t`, so the threshold is
//! found by bisection. Field thresholds are maxima over nodes and are upper
//! bounds for the bundle threshold, which involves an infimum over metrics.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::CurvatureField;
use crate::tensor::{griffiths_net_size, positivity_margin_lenient, CurvatureTensor, Mode};

/// Largest twist tried before giving up.
pub const DEFAULT_T_MAX: f64 = 1e3;

const GRID_POINTS: usize = 9;

/// Default bisection tolerance: `1e-10`, or `1e-6` for the Griffiths mode
/// when its margin comes from the heuristic minimization (`n, r ≥ 2`).
pub fn default_tol(mode: Mode, n: usize, r: usize) -> f64 {
    if mode == Mode::Griffiths && n > 1 && r > 1 {
        1e-6
    } else {
        1e-10
    }
}

fn margin_at(theta: &CurvatureTensor, mode: Mode, t: f64) -> f64 {
    positivity_margin_lenient(&theta.twist(t), mode)
}

/// Smallest `t` with `θ_t` positive in the given sense, to within `tol`.
///
/// The returned value is the upper end of the final bracket, so
/// `θ_{t*}` itself is positive.
pub fn pointwise_threshold(theta: &CurvatureTensor, mode: Mode, tol: f64) -> Result<f64> {
    pointwise_threshold_capped(theta, mode, tol, DEFAULT_T_MAX)
}

pub fn pointwise_threshold_capped(theta: &CurvatureTensor, mode: Mode, tol: f64, t_max: f64) -> Result<f64> {
    if !(tol > 0.0) {
        return Err(Error::InvalidInput(format!("tolerance must be positive, got {tol}")));
    }
    let tr = theta.bundle_trace();
    if !tr.is_positive() {
        return Err(Error::NonPositiveTrace {
            min_eigenvalue: tr.eigenvalues()[0],
        });
    }
    let mut lo = -1.0 / theta.r() as f64;
    let mut hi = (lo.max(0.0) + 1.0).min(t_max);
    let mut m_hi = margin_at(theta, mode, hi);
    while m_hi <= 0.0 {
        if hi >= t_max {
            return Err(Error::NoPositiveTwist { mode, t_max });
        }
        lo = hi;
        hi = (2.0 * hi).min(t_max);
        m_hi = margin_at(theta, mode, hi);
    }
    check_monotone(theta, mode, -1.0 / theta.r() as f64, hi)?;
    if margin_at(theta, mode, lo) > 0.0 {
        return Ok(lo);
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if margin_at(theta, mode, mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Checks that the margin does not decrease on a uniform grid of `[a, b]`.
fn check_monotone(theta: &CurvatureTensor, mode: Mode, a: f64, b: f64) -> Result<()> {
    let slack = match mode {
        Mode::Griffiths => 1e-9,
        _ => 1e-12,
    } * theta.frobenius_norm().max(1.0)
        * (1.0 + b.abs());
    let mut prev = f64::NEG_INFINITY;
    for i in 0..GRID_POINTS {
        let t = a + (b - a) * i as f64 / (GRID_POINTS - 1) as f64;
        let m = margin_at(theta, mode, t);
        if m < prev - slack {
            return Err(Error::NonMonotoneMargin { mode, t });
        }
        prev = m;
    }
    Ok(())
}

/// One named pass/fail check in a report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Check {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

/// Per-metric threshold of one mode on a field.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdReport {
    pub mode: String,
    pub t_star: f64,
    pub node: usize,
    pub tol: f64,
    /// Griffiths starting-net size, when the heuristic minimization is used.
    pub sample_budget: Option<usize>,
    pub checks: Vec<Check>,
}

/// `max` over nodes of the pointwise threshold, with the arg-max node.
pub fn metric_threshold(c: &CurvatureField, mode: Mode, tol: f64) -> Result<ThresholdReport> {
    let ts: Vec<Result<f64>> = c
        .tensors
        .par_iter()
        .map(|t| pointwise_threshold(t, mode, tol))
        .collect();
    let mut best = (f64::NEG_INFINITY, 0usize);
    for (i, t) in ts.into_iter().enumerate() {
        let t = t?;
        if t > best.0 {
            best = (t, i);
        }
    }
    let (t_star, node) = best;
    let theta = &c.tensors[node];
    let r = c.r();
    let above = margin_at(theta, mode, t_star + 2.0 * tol);
    let below = margin_at(theta, mode, t_star - 2.0 * tol);
    let checks = vec![
        Check::new(
            "t_star >= -1/r - tol",
            t_star >= -1.0 / r as f64 - tol,
            format!("t_star = {t_star:.12e}, -1/r = {:.12e}", -1.0 / r as f64),
        ),
        Check::new(
            "margin(t_star + 2 tol) > 0",
            above > 0.0,
            format!("margin = {above:.6e}"),
        ),
        Check::new(
            "margin(t_star - 2 tol) <= 0",
            below <= 0.0,
            format!("margin = {below:.6e}"),
        ),
    ];
    let sample_budget = (mode == Mode::Griffiths && c.n() > 1 && r > 1).then(|| griffiths_net_size(r));
    Ok(ThresholdReport {
        mode: mode.label().into(),
        t_star,
        node,
        tol,
        sample_budget,
        checks,
    })
}

/// Thresholds of all three modes and the ordering chain.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrderingReport {
    pub thresholds: Vec<ThresholdReport>,
    pub checks: Vec<Check>,
    pub note: String,
}

impl OrderingReport {
    pub fn threshold(&self, mode: Mode) -> &ThresholdReport {
        self.thresholds
            .iter()
            .find(|t| t.mode == mode.label())
            .expect("all modes are present")
    }

    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed) && self.thresholds.iter().all(|t| t.checks.iter().all(|c| c.passed))
    }
}

/// Computes the N, N* and G thresholds and checks `t_N ≥ t_G` and
/// `t_N* ≥ t_G` within the tolerances. `tol = None` uses [`default_tol`].
pub fn ordering_report(c: &CurvatureField, tol: Option<f64>) -> Result<OrderingReport> {
    let (n, r) = (c.n(), c.r());
    let mut thresholds = Vec::new();
    for mode in Mode::ALL {
        let t = tol.unwrap_or_else(|| default_tol(mode, n, r));
        thresholds.push(metric_threshold(c, mode, t)?);
    }
    let get = |m: Mode| thresholds.iter().find(|t| t.mode == m.label()).expect("present");
    let (tn, tns, tg) = (get(Mode::Nakano), get(Mode::DualNakano), get(Mode::Griffiths));
    let slack_n = tn.tol + tg.tol;
    let slack_ns = tns.tol + tg.tol;
    let checks = vec![
        Check::new(
            "t_N >= t_G - tol",
            tn.t_star >= tg.t_star - slack_n,
            format!("t_N = {:.12e}, t_G = {:.12e}", tn.t_star, tg.t_star),
        ),
        Check::new(
            "t_N* >= t_G - tol",
            tns.t_star >= tg.t_star - slack_ns,
            format!("t_N* = {:.12e}, t_G = {:.12e}", tns.t_star, tg.t_star),
        ),
    ];
    Ok(OrderingReport {
        thresholds,
        checks,
        note: "per-metric thresholds: upper bounds for the bundle thresholds; t_G is also an upper bound for the ampleness threshold, which is not computed".into(),
    })
}
