//! Fourier spectral calculus on periodic grids with `2n` real axes.
//!
//! Axes are ordered `(x_1, y_1, …, x_n, y_n)` with `z_j = x_j + i y_j`; grid
//! storage is row-major with the last axis fastest.

use std::sync::Arc;

use rustfft::{Fft, FftPlanner};

use crate::linalg::C64;

/// Reusable FFT plans and wave numbers for one grid shape.
pub struct Spectral {
    pub dims: usize,
    pub m: usize,
    pub periods: Vec<f64>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    waves: Vec<i64>,
}

impl std::fmt::Debug for Spectral {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Spectral")
            .field("dims", &self.dims)
            .field("m", &self.m)
            .field("periods", &self.periods)
            .finish()
    }
}

impl Spectral {
    pub fn new(m: usize, periods: &[f64]) -> Self {
        let mut planner = FftPlanner::new();
        let dims = periods.len();
        let total = m.pow(dims as u32);
        let mut waves = vec![0i64; total * dims];
        for idx in 0..total {
            let mut rem = idx;
            for a in (0..dims).rev() {
                let k = (rem % m) as i64;
                rem /= m;
                waves[idx * dims + a] = if k > (m as i64) / 2 { k - m as i64 } else { k };
            }
        }
        Spectral {
            dims,
            m,
            periods: periods.to_vec(),
            fwd: planner.plan_fft_forward(m),
            inv: planner.plan_fft_inverse(m),
            waves,
        }
    }

    pub fn len(&self) -> usize {
        self.m.pow(self.dims as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn transform(&self, data: &mut [C64], plan: &Arc<dyn Fft<f64>>) {
        let m = self.m;
        let total = self.len();
        let mut line = vec![C64::new(0.0, 0.0); m];
        let mut scratch = vec![C64::new(0.0, 0.0); plan.get_inplace_scratch_len()];
        for axis in 0..self.dims {
            let stride = m.pow((self.dims - 1 - axis) as u32);
            let block = stride * m;
            for base in (0..total).step_by(block) {
                for off in 0..stride {
                    let start = base + off;
                    for (i, slot) in line.iter_mut().enumerate() {
                        *slot = data[start + i * stride];
                    }
                    plan.process_with_scratch(&mut line, &mut scratch);
                    for (i, v) in line.iter().enumerate() {
                        data[start + i * stride] = *v;
                    }
                }
            }
        }
    }

    /// Unnormalized forward transform in place.
    pub fn forward(&self, data: &mut [C64]) {
        self.transform(data, &self.fwd);
    }

    /// Inverse transform in place, normalized so that it inverts [`Self::forward`].
    pub fn inverse(&self, data: &mut [C64]) {
        self.transform(data, &self.inv);
        let s = 1.0 / self.len() as f64;
        for v in data.iter_mut() {
            *v *= s;
        }
    }

    /// Signed integer wave numbers of a spectral index.
    pub fn wave_ints(&self, idx: usize) -> &[i64] {
        &self.waves[idx * self.dims..(idx + 1) * self.dims]
    }

    /// Angular wave number along `axis` for first derivatives; the Nyquist
    /// mode is dropped.
    fn kappa(&self, axis: usize, k: i64) -> f64 {
        if 2 * k.unsigned_abs() as usize == self.m {
            0.0
        } else {
            2.0 * std::f64::consts::PI * k as f64 / self.periods[axis]
        }
    }

    /// Symbol of `∂/∂z_j`.
    pub fn dz_symbol(&self, j: usize, ks: &[i64]) -> C64 {
        let kx = self.kappa(2 * j, ks[2 * j]);
        let ky = self.kappa(2 * j + 1, ks[2 * j + 1]);
        C64::new(0.5 * ky, 0.5 * kx)
    }

    /// Symbol of `∂/∂z̄_j`.
    pub fn dzbar_symbol(&self, j: usize, ks: &[i64]) -> C64 {
        let kx = self.kappa(2 * j, ks[2 * j]);
        let ky = self.kappa(2 * j + 1, ks[2 * j + 1]);
        C64::new(-0.5 * ky, 0.5 * kx)
    }

    /// Whether a mode survives the two-thirds dealiasing rule.
    pub fn keep_dealiased(&self, ks: &[i64]) -> bool {
        let cut = (self.m / 3) as u64;
        ks.iter().all(|k| k.unsigned_abs() <= cut)
    }

    /// Multiplies a spectrum by a symbol.
    pub fn apply_symbol(&self, spec: &[C64], sym: impl Fn(&[i64]) -> C64) -> Vec<C64> {
        spec.iter()
            .enumerate()
            .map(|(i, v)| v * sym(self.wave_ints(i)))
            .collect()
    }

    /// Zeroes modes removed by the two-thirds rule.
    pub fn dealias(&self, spec: &mut [C64]) {
        for (i, v) in spec.iter_mut().enumerate() {
            if !self.keep_dealiased(self.wave_ints(i)) {
                *v = C64::new(0.0, 0.0);
            }
        }
    }

    /// Fraction of spectral energy carried by modes in the top third of the
    /// resolved band along any axis.
    pub fn top_third_energy_fraction(&self, spec: &[C64]) -> f64 {
        let mut total = 0.0;
        let mut top = 0.0;
        for (i, v) in spec.iter().enumerate() {
            let e = v.norm_sqr();
            total += e;
            if !self.keep_dealiased(self.wave_ints(i)) {
                top += e;
            }
        }
        if total == 0.0 {
            0.0
        } else {
            top / total
        }
    }

    /// Derivative of a real-space field by a symbol: `IFFT(sym · FFT(f))`.
    pub fn differentiate(&self, f: &[C64], sym: impl Fn(&[i64]) -> C64) -> Vec<C64> {
        let mut spec = f.to_vec();
        self.forward(&mut spec);
        let mut out = self.apply_symbol(&spec, sym);
        self.inverse(&mut out);
        out
    }
}
