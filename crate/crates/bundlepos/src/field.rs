//! Metric fields on flat complex tori, their curvature fields, densities and
//! volume integrals.
//!
//! A metric field stores `h` at every grid node in a fixed global frame
//! together with a constant background curvature `B`, given in `h`-orthonormal
//! frames. The curvature at a node is
//!
//! ```text
//! c = orth_h( −∂̄_k (h⁻¹ ∂_j h) ) + B
//! ```
//!
//! with spectral derivatives and two-thirds dealiasing of the connection
//! `h⁻¹ ∂h`. Integrals use the Lebesgue measure `Π dx_j dy_j` of the chart, so
//! the chart volume is the product of the periods.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::functionals::{self, DensityMode};
use crate::linalg::{self, CMat, C64, ZERO};
use crate::sphere::SphereQuadrature;
use crate::spectral::Spectral;
use crate::tensor::{CurvatureTensor, HermitianMatrix, Mode};

/// Energy fraction above which a field counts as under-resolved.
pub const SMOOTHNESS_LIMIT: f64 = 1e-6;

/// A flat torus `ℂⁿ / Λ` with a rectangular lattice and an `m`-point grid per
/// real axis. Axes are ordered `(x_1, y_1, …, x_n, y_n)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TorusChart {
    pub n: usize,
    pub m: usize,
    pub periods: Vec<f64>,
}

impl TorusChart {
    pub fn new(n: usize, m: usize, periods: Vec<f64>) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidInput("complex dimension must be at least 1".into()));
        }
        if m < 8 || !m.is_power_of_two() {
            return Err(Error::InvalidInput(format!(
                "grid size must be a power of two >= 8, got {m}"
            )));
        }
        if periods.len() != 2 * n {
            return Err(Error::InvalidInput(format!(
                "expected {} periods, got {}",
                2 * n,
                periods.len()
            )));
        }
        if periods.iter().any(|p| !(*p > 0.0 && p.is_finite())) {
            return Err(Error::InvalidInput("periods must be positive".into()));
        }
        Ok(TorusChart { n, m, periods })
    }

    /// Chart with all periods `2π`.
    pub fn standard(n: usize, m: usize) -> Result<Self> {
        Self::new(n, m, vec![2.0 * PI; 2 * n])
    }

    pub fn dims(&self) -> usize {
        2 * self.n
    }

    pub fn num_nodes(&self) -> usize {
        self.m.pow(self.dims() as u32)
    }

    /// Lebesgue volume of the fundamental domain.
    pub fn volume(&self) -> f64 {
        self.periods.iter().product()
    }

    /// Real coordinates `(x_1, y_1, …)` of a node.
    pub fn coords(&self, node: usize) -> Vec<f64> {
        let d = self.dims();
        let mut out = vec![0.0; d];
        let mut rem = node;
        for a in (0..d).rev() {
            let i = rem % self.m;
            rem /= self.m;
            out[a] = self.periods[a] * i as f64 / self.m as f64;
        }
        out
    }

    pub fn spectral(&self) -> Spectral {
        Spectral::new(self.m, &self.periods)
    }
}

/// A positive hermitian metric at every node plus a constant background
/// curvature.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricField {
    pub chart: TorusChart,
    r: usize,
    h: Vec<CMat>,
    background: CurvatureTensor,
}

impl MetricField {
    /// Validates positivity at every node; hermitian parts are stored.
    pub fn new(chart: TorusChart, h: Vec<CMat>, background: CurvatureTensor) -> Result<Self> {
        if h.len() != chart.num_nodes() {
            return Err(Error::InvalidInput(format!(
                "expected {} metric nodes, got {}",
                chart.num_nodes(),
                h.len()
            )));
        }
        let r = background.r();
        if background.n() != chart.n {
            return Err(Error::InvalidInput("background dimension does not match chart".into()));
        }
        if h.iter().any(|x| x.nrows() != r || x.ncols() != r) {
            return Err(Error::InvalidInput("metric rank does not match background".into()));
        }
        let h: Vec<CMat> = h.iter().map(linalg::hermitian_part).collect();
        let worst = h
            .par_iter()
            .map(linalg::min_eigenvalue)
            .reduce(|| f64::INFINITY, f64::min);
        if !(worst > 0.0) {
            return Err(Error::NonPositiveMetric { min_eigenvalue: worst });
        }
        Ok(MetricField { chart, r, h, background })
    }

    /// The same matrix at every node.
    pub fn constant(chart: TorusChart, h: &HermitianMatrix, background: CurvatureTensor) -> Result<Self> {
        let nodes = vec![h.matrix().clone(); chart.num_nodes()];
        Self::new(chart, nodes, background)
    }

    /// `h(z) = f(x_1, y_1, …)`.
    pub fn from_fn(
        chart: TorusChart,
        background: CurvatureTensor,
        f: impl Fn(&[f64]) -> CMat + Sync,
    ) -> Result<Self> {
        let h = (0..chart.num_nodes())
            .into_par_iter()
            .map(|i| f(&chart.coords(i)))
            .collect();
        Self::new(chart, h, background)
    }

    /// Diagonal metric `diag(e^{−φ_1}, …, e^{−φ_r})` from potentials sampled on
    /// the grid.
    pub fn split_potentials(
        chart: TorusChart,
        potentials: &[Vec<f64>],
        background: CurvatureTensor,
    ) -> Result<Self> {
        let r = potentials.len();
        let nodes = chart.num_nodes();
        if potentials.iter().any(|p| p.len() != nodes) {
            return Err(Error::InvalidInput("potential has wrong grid size".into()));
        }
        let h = (0..nodes)
            .map(|i| {
                CMat::from_diagonal(&nalgebra::DVector::from_iterator(
                    r,
                    potentials.iter().map(|p| C64::new((-p[i]).exp(), 0.0)),
                ))
            })
            .collect();
        Self::new(chart, h, background)
    }

    /// `e^{−φ} h_0` for a scalar potential field.
    pub fn conformal(
        chart: TorusChart,
        h0: &HermitianMatrix,
        potential: &[f64],
        background: CurvatureTensor,
    ) -> Result<Self> {
        if potential.len() != chart.num_nodes() {
            return Err(Error::InvalidInput("potential has wrong grid size".into()));
        }
        let h = potential
            .iter()
            .map(|p| h0.matrix() * C64::new((-p).exp(), 0.0))
            .collect();
        Self::new(chart, h, background)
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn n(&self) -> usize {
        self.chart.n
    }

    pub fn nodes(&self) -> &[CMat] {
        &self.h
    }

    pub fn background(&self) -> &CurvatureTensor {
        &self.background
    }

    /// Same chart and background with new node values.
    pub fn with_nodes(&self, h: Vec<CMat>) -> Result<Self> {
        Self::new(self.chart.clone(), h, self.background.clone())
    }

    /// Fraction of the spectral energy of all entries of `h` that sits in the
    /// top third of the resolved band.
    pub fn smoothness_fraction(&self) -> f64 {
        let sp = self.chart.spectral();
        let specs = matrix_spectra(&sp, &self.h, self.r);
        let mut total = 0.0;
        let mut top = 0.0;
        for spec in &specs {
            for (i, v) in spec.iter().enumerate() {
                let e = v.norm_sqr();
                total += e;
                if !sp.keep_dealiased(sp.wave_ints(i)) {
                    top += e;
                }
            }
        }
        if total == 0.0 {
            0.0
        } else {
            top / total
        }
    }
}

/// Curvature tensors in `h`-orthonormal frames at every node.
#[derive(Debug, Clone)]
pub struct CurvatureField {
    pub chart: TorusChart,
    pub tensors: Vec<CurvatureTensor>,
    /// Set when the metric failed the smoothness diagnostic.
    pub aliasing_warning: bool,
    /// Largest relative hermitian defect removed by symmetrization.
    pub symmetry_defect: f64,
}

impl CurvatureField {
    pub fn n(&self) -> usize {
        self.chart.n
    }

    pub fn r(&self) -> usize {
        self.tensors[0].r()
    }

    /// The same tensor at every node.
    pub fn constant(chart: TorusChart, theta: CurvatureTensor) -> Self {
        let tensors = vec![theta; chart.num_nodes()];
        CurvatureField {
            chart,
            tensors,
            aliasing_warning: false,
            symmetry_defect: 0.0,
        }
    }
}

/// Real values at every node.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityField {
    pub chart: TorusChart,
    pub values: Vec<f64>,
}

impl DensityField {
    pub fn new(chart: TorusChart, values: Vec<f64>) -> Result<Self> {
        if values.len() != chart.num_nodes() {
            return Err(Error::InvalidInput("density has wrong grid size".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("density must be finite".into()));
        }
        Ok(DensityField { chart, values })
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

/// Forward transforms of every entry of a matrix field (entry `(a,b)` at
/// index `a·r + b`).
pub(crate) fn matrix_spectra(sp: &Spectral, f: &[CMat], r: usize) -> Vec<Vec<C64>> {
    (0..r * r)
        .into_par_iter()
        .map(|e| {
            let (a, b) = (e / r, e % r);
            let mut line: Vec<C64> = f.iter().map(|x| x[(a, b)]).collect();
            sp.forward(&mut line);
            line
        })
        .collect()
}

/// Matrix field whose entry spectra are `sym · spectra`, optionally
/// dealiased, transformed back to the grid.
pub(crate) fn synthesize(
    sp: &Spectral,
    spectra: &[Vec<C64>],
    r: usize,
    sym: impl Fn(&[i64]) -> C64 + Sync,
    dealias: bool,
) -> Vec<CMat> {
    let entries: Vec<Vec<C64>> = spectra
        .par_iter()
        .map(|spec| {
            let mut out: Vec<C64> = spec
                .iter()
                .enumerate()
                .map(|(i, v)| {
                    let ks = sp.wave_ints(i);
                    if dealias && !sp.keep_dealiased(ks) {
                        ZERO
                    } else {
                        v * sym(ks)
                    }
                })
                .collect();
            sp.inverse(&mut out);
            out
        })
        .collect();
    let nodes = sp.len();
    (0..nodes)
        .map(|i| CMat::from_fn(r, r, |a, b| entries[a * r + b][i]))
        .collect()
}

/// Applies a symbol to a matrix field on the grid.
#[cfg(test)]
pub(crate) fn apply_matrix_symbol(
    sp: &Spectral,
    f: &[CMat],
    r: usize,
    sym: impl Fn(&[i64]) -> C64 + Sync,
    dealias: bool,
) -> Vec<CMat> {
    synthesize(sp, &matrix_spectra(sp, f, r), r, sym, dealias)
}

/// Connection matrices `Γ_j = h⁻¹ ∂_j h` (dealiased), indexed `[j][node]`.
pub(crate) fn connection(sp: &Spectral, n: usize, r: usize, h: &[CMat], h_inv: &[CMat]) -> Vec<Vec<CMat>> {
    let hs = matrix_spectra(sp, h, r);
    (0..n)
        .map(|j| {
            let dh = synthesize(sp, &hs, r, |k| sp.dz_symbol(j, k), false);
            let prod: Vec<CMat> = h_inv.par_iter().zip(dh.par_iter()).map(|(a, b)| a * b).collect();
            let ps = matrix_spectra(sp, &prod, r);
            synthesize(sp, &ps, r, |_| C64::new(1.0, 0.0), true)
        })
        .collect()
}

/// `a_{jk} = −∂̄_k Γ_j` in the global frame, indexed `[node][j·n + k]`.
pub(crate) fn curvature_of_connection(sp: &Spectral, n: usize, r: usize, gamma: &[Vec<CMat>]) -> Vec<Vec<CMat>> {
    let nodes = sp.len();
    let mut out: Vec<Vec<CMat>> = vec![Vec::with_capacity(n * n); nodes];
    for g in gamma {
        let gs = matrix_spectra(sp, g, r);
        for k in 0..n {
            let d = synthesize(sp, &gs, r, |ks| -sp.dzbar_symbol(k, ks), false);
            for (slot, v) in out.iter_mut().zip(d) {
                slot.push(v);
            }
        }
    }
    out
}

/// Lower Cholesky factors and inverses of `h` at every node.
pub(crate) fn factor_nodes(h: &[CMat]) -> Result<(Vec<CMat>, Vec<CMat>)> {
    let pairs: Result<Vec<(CMat, CMat)>> = h
        .par_iter()
        .map(|x| {
            let l = linalg::cholesky_lower(x)?;
            let li = linalg::lower_inverse(&l);
            Ok((l, li))
        })
        .collect();
    Ok(pairs?.into_iter().unzip())
}

/// Orthonormal-frame tensor `L* a L^{-*} + B`, symmetrized.
pub(crate) fn frame_tensor(
    n: usize,
    r: usize,
    a: &[CMat],
    l: &CMat,
    l_inv: &CMat,
    background: &CurvatureTensor,
) -> (CurvatureTensor, f64) {
    let la = l.adjoint();
    let lia = l_inv.adjoint();
    let blocks: Vec<CMat> = a.iter().map(|x| &la * x * &lia).collect();
    let (t, dev) = CurvatureTensor::from_endo_blocks_symmetrized(n, r, &blocks);
    (t.add(background), dev)
}

/// Curvature field `Θ = B + i∂̄(h⁻¹∂h)` of a metric field.
pub fn curvature_field(metric: &MetricField) -> Result<CurvatureField> {
    let (n, r) = (metric.n(), metric.r());
    let sp = metric.chart.spectral();
    let frac = metric.smoothness_fraction();
    let aliasing_warning = frac > SMOOTHNESS_LIMIT;
    if aliasing_warning {
        log::warn!("metric field is under-resolved: top-third spectral energy fraction {frac:e}");
    }
    let (ls, lis) = factor_nodes(&metric.h)?;
    let h_inv: Vec<CMat> = lis.par_iter().map(|li| li.adjoint() * li).collect();
    let gamma = connection(&sp, n, r, &metric.h, &h_inv);
    let a = curvature_of_connection(&sp, n, r, &gamma);
    let out: Vec<(CurvatureTensor, f64)> = a
        .par_iter()
        .zip(ls.par_iter().zip(lis.par_iter()))
        .map(|(ai, (l, li))| frame_tensor(n, r, ai, l, li, &metric.background))
        .collect();
    let symmetry_defect = out.iter().map(|x| x.1).fold(0.0, f64::max);
    Ok(CurvatureField {
        chart: metric.chart.clone(),
        tensors: out.into_iter().map(|x| x.0).collect(),
        aliasing_warning,
        symmetry_defect,
    })
}

/// Periodic trapezoidal rule: mean value times the chart volume.
pub fn integrate_density(d: &DensityField) -> f64 {
    d.mean() * d.chart.volume()
}

/// Density field of `Φ_P`; fails with the list of non-positive nodes.
pub fn density_field(c: &CurvatureField, mode: DensityMode) -> Result<DensityField> {
    let quad = match mode {
        DensityMode::Gs(_) => Some(SphereQuadrature::default_for(c.r())),
        _ => None,
    };
    let vals: Vec<Result<f64>> = c
        .tensors
        .par_iter()
        .map(|t| match mode {
            DensityMode::N => functionals::phi_density(t, Mode::Nakano).map(|v| v.value),
            DensityMode::NStar => functionals::phi_density(t, Mode::DualNakano).map(|v| v.value),
            DensityMode::G => functionals::phi_density(t, Mode::Griffiths).map(|v| v.value),
            DensityMode::Gs(s) => {
                functionals::phi_gs_density(t, s, quad.as_ref().expect("set for Gs")).map(|v| v.value)
            }
        })
        .collect();
    let base_mode = match mode {
        DensityMode::N => Mode::Nakano,
        DensityMode::NStar => Mode::DualNakano,
        _ => Mode::Griffiths,
    };
    let mut values = Vec::with_capacity(vals.len());
    let mut failing = Vec::new();
    for (i, v) in vals.into_iter().enumerate() {
        match v {
            Ok(x) => values.push(x),
            Err(Error::NotPositive { .. }) => {
                failing.push(i);
                values.push(0.0);
            }
            Err(e) => return Err(e),
        }
    }
    if !failing.is_empty() {
        return Err(Error::NotPositiveSomewhere {
            mode: base_mode,
            nodes: failing,
        });
    }
    DensityField::new(c.chart.clone(), values)
}

/// `∫ (Θ_det / 2π)ⁿ = n! ∫ det(tr_E Θ / 2π)`.
pub fn chern_volume(c: &CurvatureField) -> f64 {
    let n = c.n();
    let scale = (2.0 * PI).powi(n as i32);
    let dets: Vec<(f64, bool)> = c
        .tensors
        .par_iter()
        .map(|t| {
            let tr = t.bundle_trace();
            (tr.det() / scale, tr.is_positive())
        })
        .collect();
    let bad = dets.iter().filter(|d| !d.1).count();
    if bad > 0 {
        log::warn!("bundle trace is not positive at {bad} node(s)");
    }
    let dets: Vec<f64> = dets.into_iter().map(|d| d.0).collect();
    let mean = dets.iter().sum::<f64>() / dets.len() as f64;
    factorial(n) * mean * c.chart.volume()
}

pub(crate) fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Monge-Ampère volume integral of one metric against the Chern bound.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MavolReport {
    pub mode: String,
    pub integral: f64,
    pub chern_bound: f64,
    pub ratio: f64,
}

pub fn density_label(mode: DensityMode) -> String {
    match mode {
        DensityMode::N => "N".into(),
        DensityMode::NStar => "N*".into(),
        DensityMode::G => "G".into(),
        DensityMode::Gs(s) => format!("G,s={s}"),
    }
}

/// `(2π)^{-n} ∫ Φ_P` next to `c_1(E)ⁿ / (n! rⁿ)`.
pub fn mavol_from_curvature(c: &CurvatureField, mode: DensityMode) -> Result<MavolReport> {
    let n = c.n();
    let d = density_field(c, mode)?;
    let integral = integrate_density(&d) / (2.0 * PI).powi(n as i32);
    let chern_bound = chern_volume(c) / (factorial(n) * (c.r() as f64).powi(n as i32));
    Ok(MavolReport {
        mode: density_label(mode),
        integral,
        chern_bound,
        ratio: integral / chern_bound,
    })
}

pub fn mavol_estimate(metric: &MetricField, mode: DensityMode) -> Result<MavolReport> {
    mavol_from_curvature(&curvature_field(metric)?, mode)
}

/// Periodic solution of `Σ_j ∂_j ∂̄_j φ = f − mean(f)` with zero mean.
pub fn poisson_potential(chart: &TorusChart, f: &[f64]) -> Vec<f64> {
    let sp = chart.spectral();
    let n = chart.n;
    let mut spec: Vec<C64> = f.iter().map(|&x| C64::new(x, 0.0)).collect();
    sp.forward(&mut spec);
    for (i, v) in spec.iter_mut().enumerate() {
        let ks = sp.wave_ints(i);
        let lap: C64 = (0..n).map(|j| sp.dz_symbol(j, ks) * sp.dzbar_symbol(j, ks)).sum();
        *v = if lap.norm() > 0.0 { *v / lap } else { ZERO };
    }
    sp.inverse(&mut spec);
    spec.iter().map(|z| z.re).collect()
}

/// Split metric on `L_1 ⊕ … ⊕ L_r` over a one-dimensional torus whose
/// curvatures are `β_j g_j` for densities `g_j` of mean one, with background
/// `diag(β_j)`.
pub fn yau_split_metric(chart: &TorusChart, betas: &[f64], densities: &[Vec<f64>]) -> Result<MetricField> {
    if chart.n != 1 {
        return Err(Error::InvalidInput("split normalization needs n = 1".into()));
    }
    if betas.len() != densities.len() || betas.is_empty() {
        return Err(Error::InvalidInput("need one density per line bundle".into()));
    }
    let r = betas.len();
    let potentials: Vec<Vec<f64>> = betas
        .iter()
        .zip(densities)
        .map(|(b, g)| {
            let rhs: Vec<f64> = g.iter().map(|x| b * x).collect();
            poisson_potential(chart, &rhs)
        })
        .collect();
    let mut bg = CMat::zeros(r, r);
    for (i, b) in betas.iter().enumerate() {
        bg[(i, i)] = C64::new(*b, 0.0);
    }
    let background = CurvatureTensor::from_endo_blocks(1, r, &[bg])?;
    MetricField::split_potentials(chart.clone(), &potentials, background)
}

/// Bump density `∝ exp(k cos(x − x_0))` with mean one on a one-dimensional
/// torus (`k = 0` gives the constant).
pub fn bump_density(chart: &TorusChart, k: f64, center: f64) -> Vec<f64> {
    let raw: Vec<f64> = (0..chart.num_nodes())
        .map(|i| {
            let x = chart.coords(i)[0];
            let phase = 2.0 * PI * (x - center) / chart.periods[0];
            (k * (phase.cos() - 1.0)).exp()
        })
        .collect();
    let mean = raw.iter().sum::<f64>() / raw.len() as f64;
    raw.iter().map(|v| v / mean).collect()
}

const MAGIC: &[u8; 8] = b"BPOSFLD\0";
const VERSION: u32 = 1;

/// Payload kinds of the binary container.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SnapshotKind {
    Metric = 0,
    Curvature = 1,
    Density = 2,
}

struct Header {
    kind: SnapshotKind,
    n: usize,
    r: usize,
    m: usize,
    periods: Vec<f64>,
}

fn write_header(w: &mut impl Write, h: &Header) -> Result<()> {
    w.write_all(MAGIC)?;
    for v in [VERSION, h.kind as u32, h.n as u32, h.r as u32, h.m as u32] {
        w.write_all(&v.to_le_bytes())?;
    }
    for p in &h.periods {
        w.write_all(&p.to_le_bytes())?;
    }
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn read_header(rd: &mut impl Read) -> Result<Header> {
    let mut magic = [0u8; 8];
    rd.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::InvalidInput("not a field snapshot".into()));
    }
    let version = read_u32(rd)?;
    if version != VERSION {
        return Err(Error::InvalidInput(format!("unsupported snapshot version {version}")));
    }
    let kind = match read_u32(rd)? {
        0 => SnapshotKind::Metric,
        1 => SnapshotKind::Curvature,
        2 => SnapshotKind::Density,
        k => return Err(Error::InvalidInput(format!("unknown snapshot kind {k}"))),
    };
    let n = read_u32(rd)? as usize;
    let r = read_u32(rd)? as usize;
    let m = read_u32(rd)? as usize;
    if n == 0 || n > 8 || m > 1 << 12 {
        return Err(Error::InvalidInput("implausible snapshot header".into()));
    }
    let periods = (0..2 * n).map(|_| read_f64(rd)).collect::<Result<Vec<_>>>()?;
    Ok(Header { kind, n, r, m, periods })
}

fn write_complex(w: &mut impl Write, z: C64) -> Result<()> {
    w.write_all(&z.re.to_le_bytes())?;
    w.write_all(&z.im.to_le_bytes())?;
    Ok(())
}

fn read_complex(r: &mut impl Read) -> Result<C64> {
    Ok(C64::new(read_f64(r)?, read_f64(r)?))
}

fn expect_kind(h: &Header, kind: SnapshotKind) -> Result<()> {
    if h.kind != kind {
        return Err(Error::InvalidInput(format!(
            "snapshot holds {:?}, expected {:?}",
            h.kind, kind
        )));
    }
    Ok(())
}

/// Writes a metric snapshot: header, background coefficients, then `h`
/// row-major per node.
pub fn write_metric(path: &Path, metric: &MetricField) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_header(
        &mut w,
        &Header {
            kind: SnapshotKind::Metric,
            n: metric.n(),
            r: metric.r(),
            m: metric.chart.m,
            periods: metric.chart.periods.clone(),
        },
    )?;
    for z in metric.background.coefficients() {
        write_complex(&mut w, *z)?;
    }
    for x in &metric.h {
        for a in 0..metric.r {
            for b in 0..metric.r {
                write_complex(&mut w, x[(a, b)])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_metric(path: &Path) -> Result<MetricField> {
    let mut rd = std::io::BufReader::new(std::fs::File::open(path)?);
    let h = read_header(&mut rd)?;
    expect_kind(&h, SnapshotKind::Metric)?;
    let chart = TorusChart::new(h.n, h.m, h.periods)?;
    let coeffs = (0..h.n * h.n * h.r * h.r)
        .map(|_| read_complex(&mut rd))
        .collect::<Result<Vec<_>>>()?;
    let background = CurvatureTensor::new(h.n, h.r, coeffs)?;
    let mut nodes = Vec::with_capacity(chart.num_nodes());
    for _ in 0..chart.num_nodes() {
        let mut x = CMat::zeros(h.r, h.r);
        for a in 0..h.r {
            for b in 0..h.r {
                x[(a, b)] = read_complex(&mut rd)?;
            }
        }
        nodes.push(x);
    }
    MetricField::new(chart, nodes, background)
}

/// Writes a curvature snapshot: coefficients `c[j,k,λ,μ]` per node.
pub fn write_curvature(path: &Path, c: &CurvatureField) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_header(
        &mut w,
        &Header {
            kind: SnapshotKind::Curvature,
            n: c.n(),
            r: c.r(),
            m: c.chart.m,
            periods: c.chart.periods.clone(),
        },
    )?;
    for t in &c.tensors {
        for z in t.coefficients() {
            write_complex(&mut w, *z)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_curvature(path: &Path) -> Result<CurvatureField> {
    let mut rd = std::io::BufReader::new(std::fs::File::open(path)?);
    let h = read_header(&mut rd)?;
    expect_kind(&h, SnapshotKind::Curvature)?;
    let chart = TorusChart::new(h.n, h.m, h.periods)?;
    let per = h.n * h.n * h.r * h.r;
    let mut tensors = Vec::with_capacity(chart.num_nodes());
    for _ in 0..chart.num_nodes() {
        let c = (0..per).map(|_| read_complex(&mut rd)).collect::<Result<Vec<_>>>()?;
        tensors.push(CurvatureTensor::new(h.n, h.r, c)?);
    }
    Ok(CurvatureField {
        chart,
        tensors,
        aliasing_warning: false,
        symmetry_defect: 0.0,
    })
}

/// Writes a density snapshot with zero imaginary parts.
pub fn write_density(path: &Path, d: &DensityField) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_header(
        &mut w,
        &Header {
            kind: SnapshotKind::Density,
            n: d.chart.n,
            r: 1,
            m: d.chart.m,
            periods: d.chart.periods.clone(),
        },
    )?;
    for v in &d.values {
        write_complex(&mut w, C64::new(*v, 0.0))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_density(path: &Path) -> Result<DensityField> {
    let mut rd = std::io::BufReader::new(std::fs::File::open(path)?);
    let h = read_header(&mut rd)?;
    expect_kind(&h, SnapshotKind::Density)?;
    let chart = TorusChart::new(h.n, h.m, h.periods)?;
    let values = (0..chart.num_nodes())
        .map(|_| read_complex(&mut rd).map(|z| z.re))
        .collect::<Result<Vec<_>>>()?;
    DensityField::new(chart, values)
}

/// Whitespace-separated columns `x_1 y_1 … value` with a `#` header, one line
/// per node, blank lines between rows of the first axis (gnuplot `splot`
/// layout).
pub fn write_density_csv(path: &Path, d: &DensityField, label: &str) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    let mut header = String::from("#");
    for j in 0..d.chart.n {
        header.push_str(&format!(" x{} y{}", j + 1, j + 1));
    }
    writeln!(w, "{header} {label}")?;
    let row = d.chart.num_nodes() / d.chart.m;
    for (i, v) in d.values.iter().enumerate() {
        if i > 0 && i % row == 0 {
            writeln!(w)?;
        }
        let coords: Vec<String> = d.chart.coords(i).iter().map(|x| format!("{x:.12e}")).collect();
        writeln!(w, "{} {:.15e}", coords.join(" "), v)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Form11;

    fn scalar_bg(n: usize, b: f64) -> CurvatureTensor {
        CurvatureTensor::projectively_flat(&Form11::diagonal(&vec![b; n]), 1)
    }

    fn diag_bg(b: &[f64]) -> CurvatureTensor {
        let r = b.len();
        let mut m = CMat::zeros(r, r);
        for (i, x) in b.iter().enumerate() {
            m[(i, i)] = C64::new(*x, 0.0);
        }
        CurvatureTensor::from_endo_blocks(1, r, &[m]).unwrap()
    }

    #[test]
    fn chart_validation() {
        assert!(TorusChart::standard(1, 12).is_err());
        assert!(TorusChart::standard(1, 4).is_err());
        assert!(TorusChart::new(1, 8, vec![1.0, -1.0]).is_err());
        let c = TorusChart::standard(2, 8).unwrap();
        assert_eq!(c.num_nodes(), 4096);
        assert!((c.volume() - (2.0 * PI).powi(4)).abs() < 1e-9);
        let x = c.coords(8 * 8 * 8 + 3);
        assert!((x[0] - 2.0 * PI / 8.0).abs() < 1e-15 && (x[3] - 3.0 * 2.0 * PI / 8.0).abs() < 1e-15);
    }

    #[test]
    fn constant_metric_gives_background() {
        let chart = TorusChart::standard(2, 8).unwrap();
        let mut rng = crate::random::rng(3);
        let h = HermitianMatrix::new(crate::random::hpd(2, &mut rng)).unwrap();
        let b = crate::random::tensor(2, 2, &mut rng);
        let f = curvature_field(&MetricField::constant(chart, &h, b.clone()).unwrap()).unwrap();
        assert!(!f.aliasing_warning);
        for t in &f.tensors {
            for (x, y) in t.coefficients().iter().zip(b.coefficients()) {
                assert!((x - y).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn cosine_potential_matches_closed_form() {
        // h = e^{−φ}, φ = ε cos x: c = ∂∂̄φ = −ε cos(x)/4.
        let eps = 0.3;
        let b = 0.7;
        let chart = TorusChart::standard(1, 32).unwrap();
        let pot: Vec<f64> = (0..chart.num_nodes()).map(|i| eps * chart.coords(i)[0].cos()).collect();
        let m = MetricField::split_potentials(chart.clone(), &[pot], scalar_bg(1, b)).unwrap();
        let f = curvature_field(&m).unwrap();
        for (i, t) in f.tensors.iter().enumerate() {
            let want = b - eps * chart.coords(i)[0].cos() / 4.0;
            assert!((t.get(0, 0, 0, 0).re - want).abs() < 1e-12);
        }
    }

    #[test]
    fn split_metric_is_block_diagonal() {
        let chart = TorusChart::standard(1, 32).unwrap();
        let p1: Vec<f64> = (0..chart.num_nodes())
            .map(|i| {
                let x = chart.coords(i);
                0.2 * (x[0] + x[1]).sin()
            })
            .collect();
        let p2: Vec<f64> = (0..chart.num_nodes()).map(|i| 0.1 * chart.coords(i)[1].cos()).collect();
        let split = MetricField::split_potentials(chart.clone(), &[p1.clone(), p2.clone()], diag_bg(&[1.0, 2.0]))
            .unwrap();
        let fs = curvature_field(&split).unwrap();
        let f1 = curvature_field(&MetricField::split_potentials(chart.clone(), &[p1], scalar_bg(1, 1.0)).unwrap())
            .unwrap();
        let f2 = curvature_field(&MetricField::split_potentials(chart, &[p2], scalar_bg(1, 2.0)).unwrap()).unwrap();
        for i in 0..fs.tensors.len() {
            let t = &fs.tensors[i];
            assert!((t.get(0, 0, 0, 0) - f1.tensors[i].get(0, 0, 0, 0)).norm() < 1e-13);
            assert!((t.get(0, 0, 1, 1) - f2.tensors[i].get(0, 0, 0, 0)).norm() < 1e-13);
            assert!(t.get(0, 0, 0, 1).norm() < 1e-13);
        }
    }

    #[test]
    fn constant_rescaling_leaves_curvature_unchanged() {
        let chart = TorusChart::standard(1, 16).unwrap();
        let mut rng = crate::random::rng(11);
        let h0 = crate::random::hpd(2, &mut rng);
        let m1 = MetricField::from_fn(chart.clone(), diag_bg(&[1.0, 1.0]), |x| {
            let mut h = h0.clone();
            h[(0, 1)] += C64::new(0.2 * x[0].sin(), 0.1 * x[1].cos());
            h[(1, 0)] = h[(0, 1)].conj();
            h
        })
        .unwrap();
        let scaled: Vec<CMat> = m1.nodes().iter().map(|h| h * C64::new(2.5f64.exp(), 0.0)).collect();
        let m2 = m1.with_nodes(scaled).unwrap();
        let (a, b) = (curvature_field(&m1).unwrap(), curvature_field(&m2).unwrap());
        for (x, y) in a.tensors.iter().zip(&b.tensors) {
            assert!(x.add(&y.scale(-1.0)).frobenius_norm() < 1e-12);
        }
    }

    #[test]
    fn nonpositive_metric_rejected() {
        let chart = TorusChart::standard(1, 8).unwrap();
        let h = vec![CMat::from_diagonal(&nalgebra::DVector::from_vec(vec![C64::new(1.0, 0.0), C64::new(-1.0, 0.0)])); 64];
        assert!(matches!(
            MetricField::new(chart, h, diag_bg(&[1.0, 1.0])),
            Err(Error::NonPositiveMetric { .. })
        ));
    }

    #[test]
    fn rough_metric_sets_aliasing_warning() {
        let chart = TorusChart::standard(1, 16).unwrap();
        let pot: Vec<f64> = (0..chart.num_nodes()).map(|i| 0.5 * (7.0 * chart.coords(i)[0]).cos()).collect();
        let m = MetricField::split_potentials(chart, &[pot], scalar_bg(1, 1.0)).unwrap();
        assert!(curvature_field(&m).unwrap().aliasing_warning);
    }

    #[test]
    fn integrals_of_simple_densities() {
        let chart = TorusChart::standard(1, 16).unwrap();
        let one = DensityField::new(chart.clone(), vec![1.0; 256]).unwrap();
        assert!((integrate_density(&one) - (2.0 * PI).powi(2)).abs() < 1e-12);
        let cosine: Vec<f64> = (0..256).map(|i| chart.coords(i)[0].cos() + 2.0).collect();
        let d = DensityField::new(chart, cosine).unwrap();
        assert!((integrate_density(&d) - 2.0 * (2.0 * PI).powi(2)).abs() < 1e-11);
    }

    #[test]
    fn band_limited_integral_matches_refinement() {
        let mut rng = crate::random::rng(5);
        use rand::Rng;
        let modes: Vec<(f64, f64, f64, f64)> = (0..6)
            .map(|_| {
                (
                    rng.random_range(0..4) as f64,
                    rng.random_range(0..4) as f64,
                    rng.random_range(-1.0..1.0),
                    rng.random_range(0.0..6.0),
                )
            })
            .collect();
        let f = |x: &[f64]| 3.0 + modes.iter().map(|(a, b, c, p)| c * (a * x[0] + b * x[1] + p).cos()).sum::<f64>();
        let coarse = TorusChart::standard(1, 16).unwrap();
        let fine = TorusChart::standard(1, 128).unwrap();
        let dc = DensityField::new(coarse.clone(), (0..coarse.num_nodes()).map(|i| f(&coarse.coords(i))).collect())
            .unwrap();
        let df = DensityField::new(fine.clone(), (0..fine.num_nodes()).map(|i| f(&fine.coords(i))).collect()).unwrap();
        let (a, b) = (integrate_density(&dc), integrate_density(&df));
        assert!((a - b).abs() < 1e-10 * b.abs());
    }

    #[test]
    fn chern_volume_constant_and_invariant() {
        let chart = TorusChart::standard(1, 64).unwrap();
        let b = 0.8;
        let flat = MetricField::constant(chart.clone(), &HermitianMatrix::identity(1), scalar_bg(1, b)).unwrap();
        let c0 = chern_volume(&curvature_field(&flat).unwrap());
        assert!((c0 - 2.0 * PI * b).abs() < 1e-12);
        let pot: Vec<f64> = (0..chart.num_nodes())
            .map(|i| {
                let x = chart.coords(i);
                0.3 * x[0].cos() + 0.2 * (x[0] - 2.0 * x[1]).sin()
            })
            .collect();
        let bent = MetricField::split_potentials(chart.clone(), &[pot], scalar_bg(1, b)).unwrap();
        let c1 = chern_volume(&curvature_field(&bent).unwrap());
        assert!((c1 - c0).abs() < 1e-8);
        let split = MetricField::constant(chart, &HermitianMatrix::identity(2), diag_bg(&[0.5, 1.5])).unwrap();
        let c2 = chern_volume(&curvature_field(&split).unwrap());
        assert!((c2 - 2.0 * PI * 2.0).abs() < 1e-12);
    }

    #[test]
    fn projectively_flat_field_attains_bound() {
        let chart = TorusChart::standard(1, 32).unwrap();
        let pot: Vec<f64> = (0..chart.num_nodes()).map(|i| 0.2 * chart.coords(i)[1].sin()).collect();
        let bg = CurvatureTensor::projectively_flat(&Form11::diagonal(&[1.0]), 2);
        let h0 = HermitianMatrix::new(crate::random::hpd(2, &mut crate::random::rng(2))).unwrap();
        let m = MetricField::conformal(chart, &h0, &pot, bg).unwrap();
        for mode in [DensityMode::N, DensityMode::NStar, DensityMode::G, DensityMode::Gs(4.0)] {
            let rep = mavol_estimate(&m, mode).unwrap();
            assert!((rep.ratio - 1.0).abs() < 1e-8, "{mode:?} {}", rep.ratio);
        }
    }

    #[test]
    fn projectively_flat_ratio_in_two_dimensions() {
        let chart = TorusChart::standard(2, 8).unwrap();
        let bg = CurvatureTensor::projectively_flat(&Form11::diagonal(&[1.0, 2.0]), 2);
        let m = MetricField::from_fn(chart, bg, |x| {
            CMat::identity(2, 2) * C64::new((0.1 * x[0].cos() + 0.05 * x[3].sin()).exp(), 0.0)
        })
        .unwrap();
        let rep = mavol_estimate(&m, DensityMode::N).unwrap();
        assert!((rep.ratio - 1.0).abs() < 1e-8);
    }

    #[test]
    fn poisson_inverts_laplacian() {
        let chart = TorusChart::standard(1, 32).unwrap();
        let f: Vec<f64> = (0..chart.num_nodes())
            .map(|i| {
                let x = chart.coords(i);
                x[0].cos() + 0.5 * (2.0 * x[1]).sin() + 1.0
            })
            .collect();
        let phi = poisson_potential(&chart, &f);
        for (i, p) in phi.iter().enumerate() {
            let x = chart.coords(i);
            let want = -4.0 * x[0].cos() - 0.5 * (2.0 * x[1]).sin();
            assert!((p - want).abs() < 1e-12);
        }
    }

    #[test]
    fn split_closed_forms() {
        let chart = TorusChart::standard(1, 64).unwrap();
        let g = bump_density(&chart, 1.0, 0.0);
        let m = yau_split_metric(&chart, &[0.25, 0.75], &[g.clone(), g]).unwrap();
        let area = chart.volume();
        let n = mavol_estimate(&m, DensityMode::N).unwrap();
        assert!((n.integral - (0.25f64 * 0.75).sqrt() * area / (2.0 * PI)).abs() < 1e-10);
        let gm = mavol_estimate(&m, DensityMode::G).unwrap();
        assert!((gm.integral - 0.25 * area / (2.0 * PI)).abs() < 1e-8);
        assert!(n.ratio <= 1.0 + 1e-8 && gm.ratio <= n.ratio);
    }

    #[test]
    fn not_positive_lists_nodes() {
        let chart = TorusChart::standard(1, 8).unwrap();
        let m = MetricField::constant(chart, &HermitianMatrix::identity(2), diag_bg(&[1.0, -1.0])).unwrap();
        match mavol_estimate(&m, DensityMode::N) {
            Err(Error::NotPositiveSomewhere { nodes, .. }) => assert_eq!(nodes.len(), 64),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn snapshot_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let chart = TorusChart::new(1, 8, vec![1.0, 2.0]).unwrap();
        let mut rng = crate::random::rng(8);
        let h = HermitianMatrix::new(crate::random::hpd(2, &mut rng)).unwrap();
        let b = crate::random::tensor(1, 2, &mut rng);
        let m = MetricField::constant(chart, &h, b).unwrap();
        let p = dir.path().join("m.bin");
        write_metric(&p, &m).unwrap();
        assert_eq!(read_metric(&p).unwrap(), m);
        let c = curvature_field(&m).unwrap();
        let pc = dir.path().join("c.bin");
        write_curvature(&pc, &c).unwrap();
        assert_eq!(read_curvature(&pc).unwrap().tensors, c.tensors);
        assert!(read_density(&pc).is_err());
        let d = DensityField::new(m.chart.clone(), (0..64).map(|i| i as f64).collect()).unwrap();
        let pd = dir.path().join("d.bin");
        write_density(&pd, &d).unwrap();
        assert_eq!(read_density(&pd).unwrap(), d);
        let csv = dir.path().join("d.csv");
        write_density_csv(&csv, &d, "phi").unwrap();
        let text = std::fs::read_to_string(csv).unwrap();
        assert!(text.starts_with("# x1 y1 phi"));
        assert_eq!(text.lines().filter(|l| !l.is_empty() && !l.starts_with('#')).count(), 64);
    }
}
