//! Python bindings: scenario runs and the pointwise functionals.

use std::path::Path;

use bundlepos::cli::{self, CliError, RunOptions};
use bundlepos::continuation::parse_density_mode;
use bundlepos::functionals::{self, DensityMode};
use bundlepos::linalg::C64;
use bundlepos::sphere::SphereQuadrature;
use bundlepos::{thresholds, ym, CurvatureTensor, Error, Mode};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn numerical(e: Error) -> PyErr {
    match e {
        Error::InvalidInput(m) => PyValueError::new_err(m),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

/// Tensor from row-major `(j, k, λ, μ)` real and imaginary parts.
pub fn tensor_from_parts(re: &[f64], im: &[f64], n: usize, r: usize) -> Result<CurvatureTensor, Error> {
    let len = n * n * r * r;
    if re.len() != len || (!im.is_empty() && im.len() != len) {
        return Err(Error::InvalidInput(format!("expected {len} coefficients for n = {n}, r = {r}")));
    }
    let c = (0..len)
        .map(|i| C64::new(re[i], im.get(i).copied().unwrap_or(0.0)))
        .collect();
    CurvatureTensor::new(n, r, c)
}

fn positivity_mode(label: &str) -> PyResult<Mode> {
    Mode::parse(label).ok_or_else(|| PyValueError::new_err(format!("unknown mode {label:?}; use N, N* or G")))
}

/// Runs a scenario file, writes its outputs under `out` and returns the
/// report as JSON text.
#[pyfunction]
#[pyo3(signature = (scenario, out, seed=None, tol=None, resume=false))]
fn run_scenario(
    py: Python<'_>,
    scenario: &str,
    out: &str,
    seed: Option<u64>,
    tol: Option<f64>,
    resume: bool,
) -> PyResult<String> {
    let loaded = cli::load_scenario(Path::new(scenario)).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let opts = RunOptions { seed, tol, resume };
    let report = py
        .detach(|| cli::run(&loaded, Path::new(out), &opts))
        .map_err(|e| match e {
            CliError::Config(m) => PyValueError::new_err(m),
            CliError::Numerical(e) => PyRuntimeError::new_err(e.to_string()),
        })?;
    Ok(report.to_json())
}

/// SHA-256 of the canonical form of a scenario file.
#[pyfunction]
fn scenario_hash(scenario: &str) -> PyResult<String> {
    cli::load_scenario(Path::new(scenario))
        .map(|s| s.hash)
        .map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Density `Φ` of the tensor for `N`, `N*`, `G` or `G,s=<s>`.
#[pyfunction]
#[pyo3(signature = (re, n, r, mode, im=Vec::new()))]
fn phi_density(re: Vec<f64>, n: usize, r: usize, mode: &str, im: Vec<f64>) -> PyResult<f64> {
    let theta = tensor_from_parts(&re, &im, n, r).map_err(numerical)?;
    let value = match parse_density_mode(mode).map_err(numerical)? {
        DensityMode::Gs(s) => functionals::phi_gs_density(&theta, s, &SphereQuadrature::default_for(r)),
        DensityMode::N => functionals::phi_density(&theta, Mode::Nakano),
        DensityMode::NStar => functionals::phi_density(&theta, Mode::DualNakano),
        DensityMode::G => functionals::phi_density(&theta, Mode::Griffiths),
    };
    value.map(|d| d.value).map_err(numerical)
}

/// `det(tr_E Θ) / rⁿ`, the upper bound of every density.
#[pyfunction]
#[pyo3(signature = (re, n, r, im=Vec::new()))]
fn trace_bound(re: Vec<f64>, n: usize, r: usize, im: Vec<f64>) -> PyResult<f64> {
    let theta = tensor_from_parts(&re, &im, n, r).map_err(numerical)?;
    Ok(theta.bundle_trace().det() / (r as f64).powi(n as i32))
}

/// Smallest `t` for which `Θ + t tr_E(Θ) ⊗ Id` is positive in the given mode.
#[pyfunction]
#[pyo3(signature = (re, n, r, mode, im=Vec::new(), tol=1e-12))]
fn threshold(re: Vec<f64>, n: usize, r: usize, mode: &str, im: Vec<f64>, tol: f64) -> PyResult<f64> {
    let theta = tensor_from_parts(&re, &im, n, r).map_err(numerical)?;
    thresholds::pointwise_threshold(&theta, positivity_mode(mode)?, tol).map_err(numerical)
}

/// Distortion constant of the density at twist `t`.
#[pyfunction]
#[pyo3(signature = (re, n, r, mode, t=0.0, im=Vec::new()))]
fn distortion(re: Vec<f64>, n: usize, r: usize, mode: &str, t: f64, im: Vec<f64>) -> PyResult<f64> {
    let theta = tensor_from_parts(&re, &im, n, r).map_err(numerical)?;
    let mode = parse_density_mode(mode).map_err(numerical)?;
    ym::distortion(&theta, t, mode).map_err(numerical)
}

#[pymodule]
#[pyo3(name = "bundlepos")]
fn bundlepos_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_function(wrap_pyfunction!(run_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(scenario_hash, m)?)?;
    m.add_function(wrap_pyfunction!(phi_density, m)?)?;
    m.add_function(wrap_pyfunction!(trace_bound, m)?)?;
    m.add_function(wrap_pyfunction!(threshold, m)?)?;
    m.add_function(wrap_pyfunction!(distortion, m)?)?;
    Ok(())
}
