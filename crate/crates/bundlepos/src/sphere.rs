//! Point sets on the unit sphere of `C^r`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::linalg::{CVec, C64};

/// Default quadrature seed recorded in reports.
pub const DEFAULT_QUAD_SEED: u64 = 0x5eed_0001;
/// Default number of quadrature nodes.
pub const DEFAULT_QUAD_POINTS: usize = 4096;

fn normalize(mut v: CVec) -> CVec {
    let n = v.norm();
    v /= C64::new(n, 0.0);
    v
}

/// Unit vectors drawn as normalized complex Gaussians from a seeded stream.
/// The distribution is the unitary-invariant probability measure.
pub fn gaussian_directions(r: usize, count: usize, seed: u64) -> Vec<CVec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let v = CVec::from_iterator(
                r,
                (0..r).map(|_| {
                    let a: f64 = StandardNormal.sample(&mut rng);
                    let b: f64 = StandardNormal.sample(&mut rng);
                    C64::new(a, b)
                }),
            );
            normalize(v)
        })
        .collect()
}

/// Generalized golden ratio of dimension `d`: the root of `x^(d+1) = x + 1`.
fn phi_d(d: usize) -> f64 {
    let mut x: f64 = 2.0;
    for _ in 0..64 {
        x = (1.0 + x).powf(1.0 / (d as f64 + 1.0));
    }
    x
}

/// Deterministic quasi-uniform net on the unit sphere of `C^r`.
///
/// The coordinate vectors come first; the remaining points push a
/// low-discrepancy additive recurrence in `[0,1)^{2r}` through Box-Muller.
pub fn quasi_uniform_net(r: usize, count: usize) -> Vec<CVec> {
    let mut out = Vec::with_capacity(count.max(r));
    for l in 0..r {
        let mut v = CVec::zeros(r);
        v[l] = C64::new(1.0, 0.0);
        out.push(v);
    }
    let d = 2 * r;
    let g = phi_d(d);
    let alpha: Vec<f64> = (1..=d).map(|k| (1.0 / g.powi(k as i32)).fract()).collect();
    let mut i = 1usize;
    while out.len() < count {
        let u: Vec<f64> = alpha
            .iter()
            .map(|a| (0.5 + a * i as f64).fract())
            .collect();
        let v = CVec::from_iterator(
            r,
            (0..r).map(|l| {
                let u1 = u[2 * l].max(1e-300);
                let rad = (-2.0 * u1.ln()).sqrt();
                let ang = 2.0 * std::f64::consts::PI * u[2 * l + 1];
                C64::from_polar(rad, ang)
            }),
        );
        i += 1;
        if v.norm() > 1e-12 {
            out.push(normalize(v));
        }
    }
    out
}

/// Fibonacci lattice on `CP^1`, lifted to unit vectors of `C^2`.
/// Uniform in `u = |v_1|^2` and in the relative phase, which is the
/// pushforward of the invariant measure.
pub fn fibonacci_cp1(count: usize) -> Vec<CVec> {
    let golden = (1.0 + 5f64.sqrt()) / 2.0;
    (0..count)
        .map(|i| {
            let u = (i as f64 + 0.5) / count as f64;
            let ang = 2.0 * std::f64::consts::PI * ((i as f64 / golden).fract());
            CVec::from_vec(vec![
                C64::new(u.sqrt(), 0.0),
                C64::from_polar((1.0 - u).sqrt(), ang),
            ])
        })
        .collect()
}

/// Quadrature rule for the unitary-invariant probability measure.
#[derive(Debug, Clone)]
pub struct SphereQuadrature {
    pub r: usize,
    pub seed: u64,
    pub nodes: Vec<CVec>,
}

impl SphereQuadrature {
    pub fn new(r: usize, count: usize, seed: u64) -> Self {
        SphereQuadrature {
            r,
            seed,
            nodes: gaussian_directions(r, count, seed),
        }
    }

    pub fn default_for(r: usize) -> Self {
        Self::new(r, DEFAULT_QUAD_POINTS, DEFAULT_QUAD_SEED)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn points_are_unit() {
        for v in quasi_uniform_net(3, 200).iter().chain(gaussian_directions(2, 50, 7).iter()) {
            assert!((v.norm() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn gaussian_directions_are_reproducible() {
        let a = gaussian_directions(2, 10, 42);
        let b = gaussian_directions(2, 10, 42);
        assert_eq!(a, b);
    }

    #[test]
    fn first_coordinate_weight_is_uniform_for_rank_two() {
        let pts = gaussian_directions(2, 40_000, 3);
        let mean: f64 = pts.iter().map(|v| v[0].norm_sqr()).sum::<f64>() / pts.len() as f64;
        let second: f64 = pts.iter().map(|v| v[0].norm_sqr().powi(2)).sum::<f64>() / pts.len() as f64;
        assert!((mean - 0.5).abs() < 0.01);
        assert!((second - 1.0 / 3.0).abs() < 0.01);
    }

    #[test]
    fn net_starts_with_basis() {
        let net = quasi_uniform_net(3, 10);
        assert_eq!(net.len(), 10);
        assert_eq!(net[1][1], C64::new(1.0, 0.0));
    }
}
