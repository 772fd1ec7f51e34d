//! Scenario files: a torus chart, a bundle background, a metric family and
//! one task.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::field::{self, MetricField, TorusChart};
use crate::linalg::{CMat, C64};
use crate::tensor::{CurvatureTensor, Form11, HermitianMatrix};
use crate::ym::operator;

pub const SCHEMA_VERSION: u32 = 1;
pub const MAX_N: usize = 2;
pub const MAX_R: usize = 3;
pub const MAX_M: usize = 128;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    #[serde(default)]
    pub seed: u64,
    pub manifold: Manifold,
    pub bundle: Bundle,
    pub metric: MetricSpec,
    pub task: Task,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Manifold {
    pub n: usize,
    pub m: usize,
    /// Real periods `(x_1, y_1, …)`; all `2π` when absent.
    #[serde(default)]
    pub periods: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Bundle {
    pub r: usize,
    /// Constant curvature added in the orthonormal frames; identity blocks
    /// when absent.
    #[serde(default)]
    pub background: Option<Background>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Background {
    /// `c_{jk} = δ_{jk} diag(values)`.
    Diagonal { values: Vec<f64> },
    /// `α ⊗ Id` with `α = diag(alpha)`.
    ProjectivelyFlat { alpha: Vec<f64> },
    /// Raw coefficients `c_{jkλμ}` in row-major `(j, k, λ, μ)` order.
    Coefficients { re: Vec<f64>, im: Vec<f64> },
}

/// One term `a cos(Σ_a k_a 2π x_a / p_a + phase)` of a potential.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct FourierTerm {
    pub amplitude: f64,
    pub wave: Vec<i64>,
    #[serde(default)]
    pub phase: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MetricSpec {
    /// The same metric `diag(diagonal)` at every node.
    Constant {
        #[serde(default)]
        diagonal: Option<Vec<f64>>,
    },
    /// Either `diag(e^{−φ_j})` from explicit potentials, or the normalized
    /// split metric whose line bundles have curvature densities `β_j f_j`
    /// with bump profiles `f_j` of the given concentrations (`n = 1`).
    SplitPotentials {
        #[serde(default)]
        potentials: Option<Vec<Vec<FourierTerm>>>,
        #[serde(default)]
        betas: Option<Vec<f64>>,
        #[serde(default)]
        concentration: Option<f64>,
        #[serde(default)]
        centers: Option<Vec<f64>>,
    },
    /// `e^{−φ} Id` over a projectively flat background.
    ProjectivelyFlat {
        #[serde(default)]
        potential: Vec<FourierTerm>,
    },
    /// `L exp(ε U) L*` for a smooth random hermitian field `U` of unit sup norm.
    Perturbed {
        base: Box<MetricSpec>,
        epsilon: f64,
        #[serde(default = "default_modes")]
        modes: usize,
    },
    /// A metric container written by this tool, relative to the scenario file.
    GridFile { path: PathBuf },
}

fn default_modes() -> usize {
    4
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Task {
    Analyze {
        #[serde(default = "default_modes_list")]
        modes: Vec<String>,
        #[serde(default = "default_true")]
        csv: bool,
    },
    Thresholds {
        #[serde(default)]
        tol: Option<f64>,
        /// Expected per-metric threshold of every mode, checked to `tol`.
        #[serde(default)]
        expect: Option<f64>,
    },
    Ellipticity {
        #[serde(default = "default_mode")]
        mode: String,
        #[serde(default)]
        t: f64,
        #[serde(default)]
        beta: Option<f64>,
        #[serde(default = "default_beta_factor")]
        beta_factor: f64,
    },
    Continuation(ContinuationTask),
    InfDemo {
        #[serde(default = "default_k_max")]
        k_max: usize,
        #[serde(default = "default_demo_modes")]
        modes: Vec<String>,
        #[serde(default = "default_decay")]
        max_final_ratio: f64,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ContinuationTask {
    #[serde(default = "default_mode")]
    pub mode: String,
    #[serde(default)]
    pub t0: f64,
    pub t_target: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    /// Defaults to `beta_factor` times the largest distortion at `t0`.
    #[serde(default)]
    pub beta: Option<f64>,
    #[serde(default = "default_beta_factor")]
    pub beta_factor: f64,
    /// `ε` and `λ` are escalated from `(1, 1)` by the coercivity probe when absent.
    #[serde(default)]
    pub epsilon: Option<f64>,
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default)]
    pub friction_mu: Option<f64>,
    #[serde(default)]
    pub newton_tol: Option<f64>,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
    /// Checkpoint every this many accepted steps; `0` disables checkpoints.
    #[serde(default)]
    pub checkpoint_every: usize,
    #[serde(default)]
    pub uniqueness_restarts: usize,
}

fn default_modes_list() -> Vec<String> {
    vec!["N".into(), "N*".into(), "G".into()]
}

fn default_demo_modes() -> Vec<String> {
    vec!["N".into(), "G".into()]
}

fn default_true() -> bool {
    true
}

fn default_mode() -> String {
    "N".into()
}

fn default_beta_factor() -> f64 {
    1.1
}

fn default_k_max() -> usize {
    8
}

fn default_decay() -> f64 {
    0.3
}

fn default_dt() -> f64 {
    0.01
}

fn default_max_steps() -> usize {
    1000
}

/// A configuration problem, reported with the offending field.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn config(msg: impl Into<String>) -> ConfigError {
    ConfigError(msg.into())
}

/// A parsed scenario with the directory it was read from and its hash.
#[derive(Debug, Clone)]
pub struct LoadedScenario {
    pub scenario: Scenario,
    pub base_dir: PathBuf,
    pub hash: String,
}

/// Parses scenario JSON, reporting the line and column of the first
/// syntax or type error, then checks desk-scale limits and cross-field constraints.
pub fn parse_scenario(text: &str, base_dir: &Path) -> std::result::Result<LoadedScenario, ConfigError> {
    let scenario: Scenario = serde_json::from_str(text).map_err(|e| {
        config(format!("scenario: {e}"))
    })?;
    validate(&scenario)?;
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| config(e.to_string()))?;
    Ok(LoadedScenario {
        scenario,
        base_dir: base_dir.to_path_buf(),
        hash: scenario_hash(&value),
    })
}

pub fn load_scenario(path: &Path) -> std::result::Result<LoadedScenario, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| config(format!("cannot read {}: {e}", path.display())))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_scenario(&text, &base)
}

/// SHA-256 of the canonical (key-sorted, compact) JSON form.
pub fn scenario_hash(value: &serde_json::Value) -> String {
    let canonical = serde_json::to_string(value).expect("json values serialize");
    Sha256::digest(canonical.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn validate(s: &Scenario) -> std::result::Result<(), ConfigError> {
    if s.schema_version != SCHEMA_VERSION {
        return Err(config(format!(
            "scenario field `schema_version`: expected {SCHEMA_VERSION}, got {}",
            s.schema_version
        )));
    }
    let Manifold { n, m, periods } = &s.manifold;
    if *n == 0 || *n > MAX_N {
        return Err(config(format!("scenario field `manifold.n`: must be in 1..={MAX_N}, got {n}")));
    }
    if *m < 8 || *m > MAX_M || !m.is_power_of_two() {
        return Err(config(format!(
            "scenario field `manifold.m`: must be a power of two in 8..={MAX_M}, got {m}"
        )));
    }
    if let Some(p) = periods {
        if p.len() != 2 * n || p.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
            return Err(config(format!("scenario field `manifold.periods`: need {} positive values", 2 * n)));
        }
    }
    let r = s.bundle.r;
    if r == 0 || r > MAX_R {
        return Err(config(format!("scenario field `bundle.r`: must be in 1..={MAX_R}, got {r}")));
    }
    if let Some(bg) = &s.bundle.background {
        match bg {
            Background::Diagonal { values } if values.len() != r => {
                return Err(config(format!("scenario field `bundle.background.values`: need {r} values")));
            }
            Background::ProjectivelyFlat { alpha } if alpha.len() != *n => {
                return Err(config(format!("scenario field `bundle.background.alpha`: need {n} values")));
            }
            Background::Coefficients { re, im } if re.len() != n * n * r * r || im.len() != re.len() => {
                return Err(config(format!(
                    "scenario field `bundle.background`: need {} real and imaginary coefficients",
                    n * n * r * r
                )));
            }
            _ => {}
        }
    }
    validate_metric(&s.metric, *n, r, "metric", s.bundle.background.is_some())?;
    match &s.task {
        Task::Analyze { modes, .. } | Task::InfDemo { modes, .. } => {
            for (i, mode) in modes.iter().enumerate() {
                crate::continuation::parse_density_mode(mode)
                    .map_err(|_| config(format!("scenario field `task.modes[{i}]`: unknown mode {mode}")))?;
            }
        }
        Task::Ellipticity { mode, beta_factor, .. } => {
            crate::continuation::parse_density_mode(mode)
                .map_err(|_| config(format!("scenario field `task.mode`: unknown mode {mode}")))?;
            if !(*beta_factor > 0.0) {
                return Err(config("scenario field `task.beta_factor`: must be positive"));
            }
        }
        Task::Continuation(c) => {
            crate::continuation::parse_density_mode(&c.mode)
                .map_err(|_| config(format!("scenario field `task.mode`: unknown mode {}", c.mode)))?;
            if !(c.dt > 0.0) {
                return Err(config("scenario field `task.dt`: must be positive"));
            }
        }
        Task::Thresholds { tol, .. } => {
            if tol.is_some_and(|t| !(t > 0.0)) {
                return Err(config("scenario field `task.tol`: must be positive"));
            }
        }
    }
    if let Task::InfDemo { k_max, .. } = &s.task {
        if *k_max < 2 {
            return Err(config("scenario field `task.k_max`: need at least 2"));
        }
        match &s.metric {
            MetricSpec::SplitPotentials { betas: Some(_), .. } => {}
            _ => {
                return Err(config(
                    "scenario field `metric`: inf_demo needs split_potentials with `betas`",
                ))
            }
        }
    }
    Ok(())
}

fn validate_metric(
    spec: &MetricSpec,
    n: usize,
    r: usize,
    at: &str,
    has_background: bool,
) -> std::result::Result<(), ConfigError> {
    let check_terms = |terms: &[FourierTerm], at: &str| {
        for (i, t) in terms.iter().enumerate() {
            if t.wave.len() != 2 * n {
                return Err(config(format!("scenario field `{at}[{i}].wave`: need {} integers", 2 * n)));
            }
        }
        Ok(())
    };
    match spec {
        MetricSpec::Constant { diagonal: Some(d) } => {
            if d.len() != r || d.iter().any(|x| !(*x > 0.0)) {
                return Err(config(format!("scenario field `{at}.diagonal`: need {r} positive values")));
            }
        }
        MetricSpec::Constant { diagonal: None } => {}
        MetricSpec::SplitPotentials {
            potentials,
            betas,
            concentration,
            centers,
        } => match (potentials, betas) {
            (Some(p), None) => {
                if p.len() != r {
                    return Err(config(format!("scenario field `{at}.potentials`: need {r} potentials")));
                }
                for (j, terms) in p.iter().enumerate() {
                    check_terms(terms, &format!("{at}.potentials[{j}]"))?;
                }
            }
            (None, Some(b)) => {
                if n != 1 {
                    return Err(config(format!("scenario field `{at}.betas`: normalized split metrics need n = 1")));
                }
                if b.len() != r || b.iter().any(|x| !(*x > 0.0)) {
                    return Err(config(format!("scenario field `{at}.betas`: need {r} positive values")));
                }
                if has_background {
                    return Err(config(format!(
                        "scenario field `bundle.background`: the split metric `{at}` fixes the background to diag(betas)"
                    )));
                }
                if concentration.is_some_and(|k| !(k >= 0.0)) {
                    return Err(config(format!("scenario field `{at}.concentration`: must be nonnegative")));
                }
                if centers.as_ref().is_some_and(|c| c.len() != r) {
                    return Err(config(format!("scenario field `{at}.centers`: need {r} values")));
                }
            }
            _ => {
                return Err(config(format!(
                    "scenario field `{at}`: give exactly one of `potentials` and `betas`"
                )))
            }
        },
        MetricSpec::ProjectivelyFlat { potential } => check_terms(potential, &format!("{at}.potential"))?,
        MetricSpec::Perturbed { base, epsilon, modes } => {
            if !epsilon.is_finite() || *modes == 0 {
                return Err(config(format!("scenario field `{at}`: need finite epsilon and modes >= 1")));
            }
            validate_metric(base, n, r, &format!("{at}.base"), has_background)?;
        }
        MetricSpec::GridFile { .. } => {}
    }
    Ok(())
}

impl LoadedScenario {
    pub fn chart(&self) -> Result<TorusChart> {
        let m = &self.scenario.manifold;
        match &m.periods {
            Some(p) => TorusChart::new(m.n, m.m, p.clone()),
            None => TorusChart::standard(m.n, m.m),
        }
    }

    pub fn background(&self) -> Result<CurvatureTensor> {
        let (n, r) = (self.scenario.manifold.n, self.scenario.bundle.r);
        match &self.scenario.bundle.background {
            None => Ok(identity_background(n, r)),
            Some(Background::Diagonal { values }) => {
                let d = CMat::from_diagonal(&nalgebra::DVector::from_iterator(
                    r,
                    values.iter().map(|v| C64::new(*v, 0.0)),
                ));
                let blocks: Vec<CMat> = (0..n * n)
                    .map(|jk| if jk / n == jk % n { d.clone() } else { CMat::zeros(r, r) })
                    .collect();
                CurvatureTensor::from_endo_blocks(n, r, &blocks)
            }
            Some(Background::ProjectivelyFlat { alpha }) => {
                Ok(CurvatureTensor::projectively_flat(&Form11::diagonal(alpha), r))
            }
            Some(Background::Coefficients { re, im }) => CurvatureTensor::new(
                n,
                r,
                re.iter().zip(im).map(|(a, b)| C64::new(*a, *b)).collect(),
            ),
        }
    }

    pub fn metric(&self) -> Result<MetricField> {
        self.build_metric(&self.scenario.metric)
    }

    fn build_metric(&self, spec: &MetricSpec) -> Result<MetricField> {
        let chart = self.chart()?;
        let r = self.scenario.bundle.r;
        match spec {
            MetricSpec::Constant { diagonal } => {
                let h = match diagonal {
                    Some(d) => HermitianMatrix::from_real_diagonal(d),
                    None => HermitianMatrix::identity(r),
                };
                MetricField::constant(chart, &h, self.background()?)
            }
            MetricSpec::SplitPotentials {
                potentials: Some(p), ..
            } => {
                let sampled: Vec<Vec<f64>> = p.iter().map(|terms| sample_potential(&chart, terms)).collect();
                MetricField::split_potentials(chart, &sampled, self.background()?)
            }
            MetricSpec::SplitPotentials {
                betas: Some(b),
                concentration,
                centers,
                ..
            } => split_metric(&chart, b, concentration.unwrap_or(0.0), centers.as_deref()),
            MetricSpec::SplitPotentials { .. } => Err(Error::InvalidInput("split metric needs potentials or betas".into())),
            MetricSpec::ProjectivelyFlat { potential } => {
                let bg = self.background()?;
                if bg.trace_free().frobenius_norm() > 1e-12 * bg.frobenius_norm().max(1.0) {
                    return Err(Error::InvalidInput(
                        "projectively flat metric needs a projectively flat background".into(),
                    ));
                }
                let phi = sample_potential(&chart, potential);
                MetricField::conformal(chart, &HermitianMatrix::identity(r), &phi, bg)
            }
            MetricSpec::Perturbed { base, epsilon, modes } => {
                let base = self.build_metric(base)?;
                let geom = operator::Geometry::new(&base)?;
                let u: Vec<CMat> = operator::random_smooth_field(&base.chart, r, *modes, 1.0, self.scenario.seed)
                    .into_iter()
                    .map(|x| x * C64::new(*epsilon, 0.0))
                    .collect();
                base.with_nodes(operator::retract(&geom, &u))
            }
            MetricSpec::GridFile { path } => {
                let metric = field::read_metric(&self.base_dir.join(path))?;
                if metric.chart != chart || metric.r() != r {
                    return Err(Error::InvalidInput(format!(
                        "{} does not match the scenario manifold and bundle",
                        path.display()
                    )));
                }
                Ok(metric)
            }
        }
    }
}

fn identity_background(n: usize, r: usize) -> CurvatureTensor {
    CurvatureTensor::projectively_flat(&Form11::diagonal(&vec![1.0; n]), r)
}

/// Normalized split metric with bump densities of concentration `k` centred
/// at `centers` (evenly spaced by default).
pub fn split_metric(chart: &TorusChart, betas: &[f64], k: f64, centers: Option<&[f64]>) -> Result<MetricField> {
    let r = betas.len();
    let densities: Vec<Vec<f64>> = (0..r)
        .map(|j| {
            let c = centers.map_or(chart.periods[0] * j as f64 / r as f64, |c| c[j]);
            field::bump_density(chart, k, c)
        })
        .collect();
    field::yau_split_metric(chart, betas, &densities)
}

fn sample_potential(chart: &TorusChart, terms: &[FourierTerm]) -> Vec<f64> {
    (0..chart.num_nodes())
        .map(|i| {
            let x = chart.coords(i);
            terms
                .iter()
                .map(|t| {
                    let arg: f64 = t
                        .wave
                        .iter()
                        .zip(&x)
                        .zip(&chart.periods)
                        .map(|((k, xa), p)| 2.0 * PI * *k as f64 * xa / p)
                        .sum();
                    t.amplitude * (arg + t.phase).cos()
                })
                .sum()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> std::result::Result<LoadedScenario, ConfigError> {
        parse_scenario(text, Path::new("."))
    }

    const SPLIT: &str = r#"{
        "schema_version": 1,
        "manifold": {"n": 1, "m": 16},
        "bundle": {"r": 2},
        "metric": {"kind": "split_potentials", "betas": [0.25, 0.75]},
        "task": {"kind": "analyze"}
    }"#;

    #[test]
    fn parses_split_scenario() {
        let s = parse(SPLIT).unwrap();
        let metric = s.metric().unwrap();
        assert_eq!(metric.r(), 2);
        assert_eq!(s.hash.len(), 64);
    }

    #[test]
    fn hash_ignores_whitespace_and_key_order() {
        let a = parse(SPLIT).unwrap();
        let compact = r#"{"task":{"kind":"analyze"},"schema_version":1,"manifold":{"m":16,"n":1},"bundle":{"r":2},"metric":{"betas":[0.25,0.75],"kind":"split_potentials"}}"#;
        assert_eq!(parse(compact).unwrap().hash, a.hash);
    }

    #[test]
    fn unknown_field_names_path() {
        let bad = SPLIT.replace("\"m\": 16", "\"m\": 16, \"q\": 1");
        let err = parse(&bad).unwrap_err();
        assert!(err.0.contains("unknown field `q`"), "{err}");
        assert!(err.0.contains("line 3"), "{err}");
    }

    #[test]
    fn desk_limits_are_enforced() {
        let bad = SPLIT.replace("\"m\": 16", "\"m\": 256");
        assert!(parse(&bad).unwrap_err().0.contains("manifold.m"));
        let bad = SPLIT.replace("\"r\": 2", "\"r\": 4");
        assert!(parse(&bad).unwrap_err().0.contains("bundle.r"));
    }

    #[test]
    fn potentials_sample_cosines() {
        let chart = TorusChart::standard(1, 8).unwrap();
        let terms = vec![FourierTerm {
            amplitude: 0.5,
            wave: vec![1, 0],
            phase: 0.0,
        }];
        let phi = sample_potential(&chart, &terms);
        for (i, v) in phi.iter().enumerate() {
            let x = chart.coords(i)[0];
            assert!((v - 0.5 * x.cos()).abs() < 1e-15);
        }
    }
}
