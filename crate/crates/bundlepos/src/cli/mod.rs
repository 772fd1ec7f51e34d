//! Scenario-driven tasks behind the `bundlepos` command: each task builds
//! the scenario's fields, runs one analysis and returns a JSON report plus
//! plot-ready columnar files.

pub mod scenario;

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::continuation::{
    self, calibrated_params, continue_in_t, escalate_friction, parse_density_mode, resume_continuation,
    solve_at_t, sup_distortion, uniqueness_probe, CheckpointSpec, ContinuationOptions, ContinuationReport,
    SolverOptions,
};
use crate::error::Error;
use crate::field::{self, CurvatureField, MetricField};
use crate::functionals::{prop25_check, DensityMode};
use crate::tensor::Mode;
use crate::thresholds::{ordering_report, Check};
use crate::ym::{ellipticity_certificate, Friction};
pub use scenario::{load_scenario, parse_scenario, ConfigError, LoadedScenario, Scenario, Task};

/// Tolerance of the equality and upper-bound checks on volume ratios.
pub const RATIO_TOL: f64 = 1e-8;
/// Largest relative deviation accepted by the uniqueness probe.
pub const UNIQUENESS_TOL: f64 = 1e-7;
/// Random fields tried by the coercivity probe.
const COERCIVITY_PROBES: usize = 4;
pub const CHECKPOINT_DIR: &str = "checkpoint";

/// Command-line overrides of scenario settings.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub tol: Option<f64>,
    pub resume: bool,
}

/// Failure classes with their process exit codes.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Numerical(Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Numerical(e) => write!(f, "numerical error: {e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.0)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidInput(m) => CliError::Config(m),
            other => CliError::Numerical(other),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Numerical(Error::Io(e.to_string()))
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Machine-readable report of one task.
#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub schema_version: u32,
    pub tool_version: String,
    pub task: String,
    pub scenario_hash: String,
    pub seed: u64,
    pub tolerances: BTreeMap<String, f64>,
    pub passed: bool,
    pub first_failure: Option<String>,
    pub checks: Vec<Check>,
    pub result: Value,
}

impl Report {
    fn new(s: &LoadedScenario, task: &str, seed: u64, tolerances: BTreeMap<String, f64>, checks: Vec<Check>, result: Value) -> Self {
        let first_failure = checks.iter().find(|c| !c.passed).map(|c| c.name.clone());
        Report {
            schema_version: scenario::SCHEMA_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").into(),
            task: task.into(),
            scenario_hash: s.hash.clone(),
            seed,
            tolerances,
            passed: first_failure.is_none(),
            first_failure,
            checks,
            result,
        }
    }

    /// Pretty JSON with a trailing newline.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize") + "\n"
    }

    pub fn exit_code(&self) -> i32 {
        if self.passed {
            0
        } else {
            1
        }
    }
}

/// Runs the scenario's task, writing `report.json` and data files to `out`.
pub fn run(s: &LoadedScenario, out: &Path, opts: &RunOptions) -> CliResult<Report> {
    std::fs::create_dir_all(out)?;
    let seed = opts.seed.unwrap_or(s.scenario.seed);
    let s = &LoadedScenario {
        scenario: Scenario {
            seed,
            ..s.scenario.clone()
        },
        ..s.clone()
    };
    let report = match &s.scenario.task {
        Task::Analyze { modes, csv } => analyze(s, modes, *csv, out)?,
        Task::Thresholds { tol, expect } => thresholds(s, opts.tol.or(*tol), *expect)?,
        Task::Ellipticity {
            mode,
            t,
            beta,
            beta_factor,
        } => ellipticity(s, mode, *t, *beta, *beta_factor)?,
        Task::Continuation(c) => continuation_task(s, c, opts, out)?,
        Task::InfDemo {
            k_max,
            modes,
            max_final_ratio,
        } => inf_demo(s, *k_max, modes, *max_final_ratio, out)?,
    };
    std::fs::write(out.join("report.json"), report.to_json())?;
    Ok(report)
}

fn modes_of(labels: &[String]) -> CliResult<Vec<DensityMode>> {
    labels.iter().map(|l| parse_density_mode(l).map_err(CliError::from)).collect()
}

fn tolerances(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

#[derive(Serialize)]
struct DensitySummary {
    mode: String,
    min: f64,
    max: f64,
    mean: f64,
    integral: f64,
    chern_bound: f64,
    ratio: f64,
}

#[derive(Serialize)]
struct Prop25Summary {
    mode: String,
    positive_nodes: usize,
    worst_relative_gap: Option<f64>,
    worst_node: Option<usize>,
}

fn chern_bound(c: &CurvatureField) -> f64 {
    let n = c.n();
    let nf: f64 = (1..=n).map(|k| k as f64).product();
    field::chern_volume(c) / (nf * (c.r() as f64).powi(n as i32))
}

fn prop25_summary(c: &CurvatureField, mode: Mode) -> Prop25Summary {
    let gaps: Vec<Option<f64>> = c
        .tensors
        .par_iter()
        .map(|t| prop25_check(t, mode).ok().map(|p| p.gap / p.rhs))
        .collect();
    let mut worst: Option<(f64, usize)> = None;
    let mut positive_nodes = 0;
    for (i, g) in gaps.iter().enumerate() {
        if let Some(g) = g {
            positive_nodes += 1;
            if worst.is_none_or(|(w, _)| *g < w) {
                worst = Some((*g, i));
            }
        }
    }
    Prop25Summary {
        mode: mode.label().into(),
        positive_nodes,
        worst_relative_gap: worst.map(|w| w.0),
        worst_node: worst.map(|w| w.1),
    }
}

fn analyze(s: &LoadedScenario, labels: &[String], csv: bool, out: &Path) -> CliResult<Report> {
    let metric = s.metric()?;
    let c = field::curvature_field(&metric)?;
    let bound = chern_bound(&c);
    let n = c.n();
    let mut summaries = Vec::new();
    let mut checks = Vec::new();
    let flat = matches!(s.scenario.metric, scenario::MetricSpec::ProjectivelyFlat { .. });
    for mode in modes_of(labels)? {
        let d = field::density_field(&c, mode)?;
        let label = field::density_label(mode);
        let integral = field::integrate_density(&d) / (2.0 * PI).powi(n as i32);
        let ratio = integral / bound;
        checks.push(Check::new(
            format!("mavol_{label} <= chern bound"),
            ratio <= 1.0 + RATIO_TOL,
            format!("ratio = {ratio:.12e}"),
        ));
        if flat {
            checks.push(Check::new(
                format!("mavol_{label} = chern bound (projectively flat)"),
                (ratio - 1.0).abs() <= RATIO_TOL,
                format!("ratio = {ratio:.12e}"),
            ));
        }
        if csv {
            let file = format!("density_{}.csv", file_label(&label));
            field::write_density_csv(&out.join(file), &d, &format!("phi_{label}"))?;
        }
        summaries.push(DensitySummary {
            mode: label,
            min: d.min(),
            max: d.max(),
            mean: d.mean(),
            integral,
            chern_bound: bound,
            ratio,
        });
    }
    let prop25: Vec<Prop25Summary> = Mode::ALL.iter().map(|m| prop25_summary(&c, *m)).collect();
    for p in &prop25 {
        if let Some(g) = p.worst_relative_gap {
            checks.push(Check::new(
                format!("prop25 gap >= -1e-10 rhs ({})", p.mode),
                g >= -1e-10,
                format!("worst relative gap = {g:.6e} at node {:?}", p.worst_node),
            ));
        }
    }
    let result = json!({
        "chern_bound": bound,
        "aliasing_warning": c.aliasing_warning,
        "densities": summaries,
        "prop25": prop25,
    });
    let tol = tolerances(&[("ratio", RATIO_TOL), ("prop25_relative", 1e-10)]);
    Ok(Report::new(s, "analyze", s.scenario.seed, tol, checks, result))
}

fn file_label(label: &str) -> String {
    label
        .chars()
        .map(|ch| match ch {
            '*' => 's',
            ',' | '=' => '_',
            other => other,
        })
        .collect()
}

fn thresholds(s: &LoadedScenario, tol: Option<f64>, expect: Option<f64>) -> CliResult<Report> {
    let metric = s.metric()?;
    let c = field::curvature_field(&metric)?;
    let report = ordering_report(&c, tol)?;
    let mut checks: Vec<Check> = report.checks.clone();
    for t in &report.thresholds {
        checks.extend(t.checks.iter().map(|ch| Check::new(format!("{}: {}", t.mode, ch.name), ch.passed, ch.detail.clone())));
        if let Some(want) = expect {
            checks.push(Check::new(
                format!("{}: t_star matches expected value", t.mode),
                (t.t_star - want).abs() <= t.tol,
                format!("t_star = {:.12e}, expected {want:.12e}", t.t_star),
            ));
        }
    }
    let mut tol_map = BTreeMap::new();
    for t in &report.thresholds {
        tol_map.insert(format!("bisection_{}", t.mode), t.tol);
    }
    let result = serde_json::to_value(&report).expect("reports serialize");
    Ok(Report::new(s, "thresholds", s.scenario.seed, tol_map, checks, result))
}

fn ellipticity(s: &LoadedScenario, mode: &str, t: f64, beta: Option<f64>, factor: f64) -> CliResult<Report> {
    let mode = parse_density_mode(mode)?;
    let metric = s.metric()?;
    let c = field::curvature_field(&metric)?;
    let beta = match beta {
        Some(b) => b,
        None => factor * sup_distortion(&c.tensors, t, mode)?,
    };
    let cert = ellipticity_certificate(&c, t, beta, mode, s.scenario.seed)?;
    let checks = vec![
        Check::new(
            "beta > sup distortion",
            cert.sufficient,
            format!("beta = {beta:.6e}, sup distortion = {:.6e}", cert.sup_distortion),
        ),
        Check::new(
            "min symbol singular value > 0",
            cert.min_sigma > 0.0,
            format!("min sigma = {:.6e}", cert.min_sigma),
        ),
    ];
    let result = serde_json::to_value(&cert).expect("reports serialize");
    Ok(Report::new(s, "ellipticity", s.scenario.seed, BTreeMap::new(), checks, result))
}

#[derive(Serialize)]
struct UniquenessSummary {
    restarts: usize,
    amplitude: f64,
    max_deviation: f64,
    all_converged: bool,
}

fn continuation_task(
    s: &LoadedScenario,
    task: &scenario::ContinuationTask,
    opts: &RunOptions,
    out: &Path,
) -> CliResult<Report> {
    let seed = s.scenario.seed;
    let mode = parse_density_mode(&task.mode)?;
    let metric = s.metric()?;
    let newton_tol = opts.tol.or(task.newton_tol).unwrap_or(continuation::DEFAULT_NEWTON_TOL);
    let solver = SolverOptions {
        newton_tol,
        ..SolverOptions::default()
    };
    let cont = ContinuationOptions {
        solver: solver.clone(),
        dt_init: task.dt,
        max_steps: task.max_steps,
        ..ContinuationOptions::default()
    };
    let checkpoint = (task.checkpoint_every > 0).then(|| CheckpointSpec {
        dir: out.join(CHECKPOINT_DIR),
        every: task.checkpoint_every,
    });
    let friction = task.friction_mu.map_or(Friction::Constant, Friction::PowerRatio);

    let (report, doublings): (ContinuationReport, Option<u32>) = if opts.resume {
        (resume_continuation(&out.join(CHECKPOINT_DIR), checkpoint)?, None)
    } else {
        let c = field::curvature_field(&metric)?;
        let beta = match task.beta {
            Some(b) => b,
            None => task.beta_factor * sup_distortion(&c.tensors, task.t0, mode)?,
        };
        let (params, doublings) = match (task.epsilon, task.lambda) {
            (Some(e), Some(l)) => (calibrated_params(&metric, task.t0, beta, e, l, mode, friction)?, None),
            (e, l) => {
                let p = calibrated_params(&metric, task.t0, beta, e.unwrap_or(1.0), l.unwrap_or(1.0), mode, friction)?;
                let (p, d) = escalate_friction(&metric, &p, COERCIVITY_PROBES, seed)?;
                (p, Some(d))
            }
        };
        let start = solve_at_t(&metric, &params, &solver)?;
        (continue_in_t(&metric, start, &params, task.t0, task.t_target, &cont, checkpoint)?, doublings)
    };

    let mut checks = Vec::new();
    let bad_residual = report.path.iter().find(|p| p.residual_scalar.max(p.residual_endo) >= newton_tol);
    checks.push(Check::new(
        "accepted states solve the system",
        bad_residual.is_none(),
        match bad_residual {
            Some(p) => format!("residual {:.3e} at t = {}", p.residual_scalar.max(p.residual_endo), p.t),
            None => format!("{} states below {newton_tol:e}", report.path.len()),
        },
    ));
    let bad_margin = report.path.iter().find(|p| !(p.margin > 0.0));
    checks.push(Check::new(
        "positivity margin > 0 on the path",
        bad_margin.is_none(),
        match bad_margin {
            Some(p) => format!("margin {:.3e} at t = {}", p.margin, p.t),
            None => "all margins positive".into(),
        },
    ));
    let uniqueness = if task.uniqueness_restarts > 0 {
        let mut params = report.params.rebuild(&metric)?;
        params.t = report.final_state.t;
        let u = uniqueness_probe(&report.final_state, &params, &solver, task.uniqueness_restarts, 1e-2, seed)?;
        checks.push(Check::new(
            "perturbed restarts reconverge",
            u.all_converged && u.max_deviation <= UNIQUENESS_TOL,
            format!("max deviation {:.3e}", u.max_deviation),
        ));
        Some(UniquenessSummary {
            restarts: u.restarts,
            amplitude: u.amplitude,
            max_deviation: u.max_deviation,
            all_converged: u.all_converged,
        })
    } else {
        None
    };

    write_path_csv(&out.join("path.csv"), &report)?;
    field::write_metric(&out.join("final_state.bpos"), &report.final_state.metric)?;
    let result = json!({
        "params": report.params,
        "friction_doublings": doublings,
        "t_inf": report.t_inf,
        "stop_reason": report.stop_reason,
        "last_error": report.last_error,
        "final_dt": report.dt,
        "path": report.path,
        "uniqueness": uniqueness,
    });
    let tol = tolerances(&[("newton", newton_tol), ("uniqueness", UNIQUENESS_TOL), ("dt_min", cont.dt_min)]);
    Ok(Report::new(s, "continuation", seed, tol, checks, result))
}

fn write_path_csv(path: &PathBuf, report: &ContinuationReport) -> CliResult<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "# t residual_scalar residual_endo margin newton_iterations gmres_iterations")?;
    for p in &report.path {
        writeln!(
            w,
            "{:.15e} {:.6e} {:.6e} {:.15e} {} {}",
            p.t, p.residual_scalar, p.residual_endo, p.margin, p.newton_iterations, p.gmres_iterations
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Split metrics with bump densities of concentration `k` for `k = 1..=k_max`.
fn inf_demo(s: &LoadedScenario, k_max: usize, labels: &[String], max_ratio: f64, out: &Path) -> CliResult<Report> {
    let scenario::MetricSpec::SplitPotentials {
        betas: Some(betas),
        centers,
        ..
    } = &s.scenario.metric
    else {
        return Err(CliError::Config("inf_demo needs split_potentials with betas".into()));
    };
    let chart = s.chart()?;
    let modes = modes_of(labels)?;
    let mut table: Vec<Vec<f64>> = vec![Vec::new(); modes.len()];
    let mut bound = 0.0;
    for k in 1..=k_max {
        let metric: MetricField = scenario::split_metric(&chart, betas, k as f64, centers.as_deref())?;
        let c = field::curvature_field(&metric)?;
        bound = chern_bound(&c);
        for (col, mode) in table.iter_mut().zip(&modes) {
            let d = field::density_field(&c, *mode)?;
            col.push(field::integrate_density(&d) / (2.0 * PI));
        }
    }
    let mut checks = Vec::new();
    let mut series = Vec::new();
    for (col, mode) in table.iter().zip(&modes) {
        let label = field::density_label(*mode);
        let drop = col.windows(2).position(|w| !(w[1] < w[0]));
        checks.push(Check::new(
            format!("integral of phi_{label} strictly decreasing in k"),
            drop.is_none(),
            match drop {
                Some(i) => format!("k = {} -> {}: {:.6e} -> {:.6e}", i + 1, i + 2, col[i], col[i + 1]),
                None => "monotone".into(),
            },
        ));
        let ratio = col[col.len() - 1] / col[0];
        checks.push(Check::new(
            format!("phi_{label} at k_max below {max_ratio} x baseline"),
            ratio < max_ratio,
            format!("ratio = {ratio:.6e}"),
        ));
        series.push(json!({"mode": label, "integrals": col, "final_over_baseline": ratio}));
    }
    let mut w = std::io::BufWriter::new(std::fs::File::create(out.join("inf_demo.csv"))?);
    let header: Vec<String> = modes.iter().map(|m| format!("phi_{}", field::density_label(*m))).collect();
    writeln!(w, "# k {}", header.join(" "))?;
    for k in 0..k_max {
        let row: Vec<String> = table.iter().map(|col| format!("{:.15e}", col[k])).collect();
        writeln!(w, "{} {}", k + 1, row.join(" "))?;
    }
    w.flush()?;
    let result = json!({"k": (1..=k_max).collect::<Vec<_>>(), "chern_bound": bound, "series": series});
    let tol = tolerances(&[("max_final_ratio", max_ratio)]);
    Ok(Report::new(s, "inf_demo", s.scenario.seed, tol, checks, result))
}
