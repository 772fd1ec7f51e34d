use super::*;
use crate::field::{bump_density, yau_split_metric, TorusChart};
use crate::tensor::{Form11, HermitianMatrix};
use crate::CurvatureTensor;
use nalgebra::DVector;
use std::f64::consts::PI;

fn split_metric(m: usize) -> MetricField {
    let chart = TorusChart::standard(1, m).unwrap();
    let g1 = bump_density(&chart, 0.6, 0.0);
    let g2 = bump_density(&chart, 0.4, PI / 2.0);
    yau_split_metric(&chart, &[0.25, 0.75], &[g1, g2]).unwrap()
}

fn split_params(metric: &MetricField, t0: f64) -> YMParams {
    calibrated_params(metric, t0, 1.0, 1.0, 1.0, DensityMode::N, Friction::Constant).unwrap()
}

#[test]
fn calibration_solves_at_reference() {
    let metric = split_metric(16);
    let params = split_params(&metric, 0.0);
    let res = residual(&metric, &params).unwrap();
    assert!(res.summary.sup < 1e-12, "{:?}", res.summary);
    let state = solve_at_t(&metric, &params, &SolverOptions::default()).unwrap();
    assert_eq!(state.newton_iterations, 0);
    assert!(state.margin > 0.0);
}

#[test]
fn projectively_flat_volume_is_constant() {
    let chart = TorusChart::standard(1, 8).unwrap();
    let alpha = Form11::diagonal(&[1.3]);
    let bg = CurvatureTensor::projectively_flat(&alpha, 2);
    let metric = MetricField::constant(chart, &HermitianMatrix::identity(2), bg).unwrap();
    let omega = calibrate_reference_volume(&metric, 0.0, 0.5, DensityMode::N).unwrap();
    // Φ = 1.3 and ω = 2.6, so Ω^{1.5} = 2.6^{0.5} · 1.3.
    let want = (2.6f64.powf(0.5) * 1.3).powf(1.0 / 1.5);
    for v in &omega.values {
        assert!((v - want).abs() < 1e-12 * want);
    }
}

#[test]
fn split_step_converges_quickly() {
    let metric = split_metric(32);
    let mut params = split_params(&metric, 0.0);
    params.t = -0.01;
    let state = solve_at_t(&metric, &params, &SolverOptions::default()).unwrap();
    assert!(state.residual.sup < 1e-9);
    assert!(state.newton_iterations <= 6, "{} iterations", state.newton_iterations);
    for w in state.residual_history.windows(2) {
        assert!(w[1] < w[0]);
    }
}

#[test]
fn residual_is_first_order_in_perturbation() {
    let metric = split_metric(16);
    let params = split_params(&metric, 0.0);
    let u = random_smooth_field(&metric.chart, 2, 3, 1.0, 9);
    let geom = operator::Geometry::new(&metric).unwrap();
    let at = |eps: f64| {
        let scaled: Vec<CMat> = u.iter().map(|x| x * C64::new(eps, 0.0)).collect();
        let m = metric.with_nodes(operator::retract(&geom, &scaled)).unwrap();
        residual(&m, &params).unwrap().summary.sup
    };
    let (a, b) = (at(1e-3), at(5e-4));
    let slope = (a / b).log2();
    assert!((slope - 1.0).abs() < 0.05, "slope {slope}");
}

#[test]
fn density_mode_labels_round_trip() {
    for mode in [DensityMode::N, DensityMode::NStar, DensityMode::G, DensityMode::Gs(8.0)] {
        assert_eq!(parse_density_mode(&field::density_label(mode)).unwrap(), mode);
    }
    assert!(parse_density_mode("X").is_err());
}

/// Spectral second-derivative matrix on `m` equispaced points of a circle
/// of length `2π`, summed mode by mode without the Nyquist term.
fn second_derivative_matrix(m: usize) -> DMatrix<f64> {
    let half = (m / 2) as i64;
    DMatrix::from_fn(m, m, |i, j| {
        let mut acc = 0.0;
        for k in (1 - half)..half {
            let kf = k as f64;
            acc -= kf * kf * (2.0 * PI * kf * (i as f64 - j as f64) / m as f64).cos();
        }
        acc / m as f64
    })
}

/// Solves `−λψ + (1+β) log(θ₀ + Δψ/4) + log(1+t) − (1+β) log Ω = 0` on a
/// periodic `m × m` grid by dense Newton.
fn scalar_oracle(m: usize, theta0: &[f64], log_omega: &[f64], lambda: f64, beta: f64, t: f64) -> Vec<f64> {
    let d2 = second_derivative_matrix(m);
    let eye = DMatrix::<f64>::identity(m, m);
    let lap = d2.kronecker(&eye) + eye.kronecker(&d2);
    let nodes = m * m;
    let mut psi = DVector::<f64>::zeros(nodes);
    for _ in 0..30 {
        let lp = &lap * &psi;
        let theta: Vec<f64> = (0..nodes).map(|i| theta0[i] + lp[i] / 4.0).collect();
        let f = DVector::from_fn(nodes, |i, _| {
            -lambda * psi[i] + (1.0 + beta) * theta[i].ln() + (1.0 + t).ln() - (1.0 + beta) * log_omega[i]
        });
        if f.amax() < 1e-14 {
            break;
        }
        let mut jac = &lap * 0.25;
        for i in 0..nodes {
            let w = (1.0 + beta) / theta[i];
            jac.row_mut(i).scale_mut(w);
            jac[(i, i)] -= lambda;
        }
        psi -= jac.lu().solve(&f).unwrap();
    }
    psi.as_slice().to_vec()
}

#[test]
fn line_bundle_matches_scalar_oracle() {
    let m = 32;
    let chart = TorusChart::standard(1, m).unwrap();
    let phi0 = |x: &[f64]| 0.2 * x[0].cos() + 0.1 * (x[1] + 0.3).sin();
    let bg = CurvatureTensor::new(1, 1, vec![C64::new(1.0, 0.0)]).unwrap();
    let metric = MetricField::from_fn(chart.clone(), bg, |x| CMat::from_element(1, 1, C64::new((-phi0(x)).exp(), 0.0)))
        .unwrap();
    let (lambda, beta, t) = (2.0, 0.5, -0.1);
    let mut params = calibrated_params(&metric, t, beta, 1.0, lambda, DensityMode::N, Friction::Constant).unwrap();
    let log_omega: Vec<f64> = (0..chart.num_nodes())
        .map(|i| {
            let x = chart.coords(i);
            0.1 * (x[0] + x[1]).cos() + 0.05 * x[1].sin()
        })
        .collect();
    params.omega = DensityField::new(chart.clone(), log_omega.iter().map(|v| v.exp()).collect()).unwrap();
    let state = solve_at_t(&metric, &params, &SolverOptions::default()).unwrap();
    assert!(state.residual.sup < 1e-9);

    // θ₀ = 1 + Δφ₀/4 in closed form.
    let theta0: Vec<f64> = (0..chart.num_nodes())
        .map(|i| {
            let x = chart.coords(i);
            1.0 - 0.05 * x[0].cos() - 0.025 * (x[1] + 0.3).sin()
        })
        .collect();
    let psi = scalar_oracle(m, &theta0, &log_omega, lambda, beta, t);
    let mut worst: f64 = 0.0;
    for i in 0..chart.num_nodes() {
        let h0 = metric.nodes()[i][(0, 0)].re;
        let want = h0 * (-psi[i]).exp();
        let got = state.metric.nodes()[i][(0, 0)].re;
        worst = worst.max((got - want).abs() / want);
    }
    assert!(worst < 1e-8, "relative deviation {worst:e}");
}

#[test]
fn resume_reproduces_path() {
    let metric = split_metric(16);
    let params = split_params(&metric, 0.0);
    let state = solve_at_t(&metric, &params, &SolverOptions::default()).unwrap();
    let opts = ContinuationOptions {
        dt_init: 0.02,
        max_steps: 4,
        ..ContinuationOptions::default()
    };
    let full = continue_in_t(&metric, state.clone(), &params, 0.0, -0.1, &opts, None).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let spec = CheckpointSpec {
        dir: dir.path().to_path_buf(),
        every: 1,
    };
    let short = ContinuationOptions { max_steps: 2, ..opts.clone() };
    let first = continue_in_t(&metric, state, &params, 0.0, -0.1, &short, Some(spec)).unwrap();
    assert_eq!(first.stop_reason, StopReason::MaxSteps);
    // The stored options cap the resumed run at two more steps.
    let resumed = resume_continuation(dir.path(), None).unwrap();
    assert_eq!(resumed.path.len(), full.path.len());
    for (a, b) in resumed.path.iter().zip(&full.path) {
        assert_eq!(a.t, b.t);
    }
    for (a, b) in resumed.final_state.metric.nodes().iter().zip(full.final_state.metric.nodes()) {
        assert!(linalg::fro(&(a - b)) < 1e-9);
    }
}

#[test]
fn projectively_flat_path_stops_near_trace_boundary() {
    let chart = TorusChart::standard(1, 8).unwrap();
    let bg = CurvatureTensor::projectively_flat(&Form11::diagonal(&[1.0]), 2);
    let metric = MetricField::constant(chart, &HermitianMatrix::identity(2), bg).unwrap();
    let params = calibrated_params(&metric, 0.0, 0.5, 1.0, 1.0, DensityMode::N, Friction::Constant).unwrap();
    let state = solve_at_t(&metric, &params, &SolverOptions::default()).unwrap();
    let opts = ContinuationOptions {
        dt_init: 0.1,
        ..ContinuationOptions::default()
    };
    let report = continue_in_t(&metric, state, &params, 0.0, -1.0, &opts, None).unwrap();
    assert_ne!(report.stop_reason, StopReason::ReachedTarget);
    assert!(report.t_inf > -0.5 && report.t_inf < -0.5 + 1e-3, "t_inf {}", report.t_inf);
    for p in &report.path {
        assert!(p.margin > 0.0);
    }
}

#[test]
fn uniqueness_probe_reconverges() {
    let metric = split_metric(16);
    let mut params = split_params(&metric, 0.0);
    params.t = -0.01;
    let state = solve_at_t(&metric, &params, &SolverOptions::default()).unwrap();
    let report = uniqueness_probe(&state, &params, &SolverOptions::default(), 3, 1e-2, 4).unwrap();
    assert!(report.all_converged);
    assert!(report.max_deviation < 1e-7, "{}", report.max_deviation);
}

#[test]
fn friction_escalation_accepts_coercive_parameters() {
    let metric = split_metric(8);
    let params = split_params(&metric, 0.0);
    let (p, doublings) = escalate_friction(&metric, &params, 3, 1).unwrap();
    assert!(doublings <= MAX_FRICTION_DOUBLINGS);
    assert_eq!(p.epsilon, params.epsilon * f64::from(1u32 << doublings));
}
