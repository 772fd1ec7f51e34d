//! Restarted GMRES with right preconditioning for real linear systems given
//! as matrix-free operators.

/// Result of a GMRES solve.
#[derive(Debug, Clone)]
pub struct GmresOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// Final residual norm relative to `|b|`.
    pub relative_residual: f64,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Solves `A x = b` with `A` applied by `apply` and right preconditioner
/// `precond ≈ A⁻¹`, starting from `x = 0`.
pub fn gmres(
    apply: impl Fn(&[f64]) -> Vec<f64>,
    precond: impl Fn(&[f64]) -> Vec<f64>,
    b: &[f64],
    rel_tol: f64,
    restart: usize,
    max_iter: usize,
) -> GmresOutcome {
    let dim = b.len();
    let b_norm = norm(b);
    let mut x = vec![0.0; dim];
    if b_norm == 0.0 {
        return GmresOutcome {
            x,
            iterations: 0,
            relative_residual: 0.0,
            converged: true,
        };
    }
    let mut iterations = 0;
    let mut rel;
    while iterations < max_iter {
        let ax = apply(&x);
        let r: Vec<f64> = b.iter().zip(&ax).map(|(p, q)| p - q).collect();
        let beta = norm(&r);
        rel = beta / b_norm;
        if rel <= rel_tol {
            break;
        }
        let mut v: Vec<Vec<f64>> = vec![r.iter().map(|z| z / beta).collect()];
        let mut z_basis: Vec<Vec<f64>> = Vec::new();
        let mut hess: Vec<Vec<f64>> = Vec::new();
        let mut cs: Vec<f64> = Vec::new();
        let mut sn: Vec<f64> = Vec::new();
        let mut g = vec![beta];
        let mut k = 0;
        while k < restart && iterations < max_iter {
            let z = precond(&v[k]);
            let mut w = apply(&z);
            z_basis.push(z);
            let mut col = vec![0.0; k + 2];
            for (i, vi) in v.iter().enumerate() {
                let hik = dot(&w, vi);
                col[i] = hik;
                w.iter_mut().zip(vi).for_each(|(a, b)| *a -= hik * b);
            }
            let wn = norm(&w);
            col[k + 1] = wn;
            for i in 0..k {
                let t = cs[i] * col[i] + sn[i] * col[i + 1];
                col[i + 1] = -sn[i] * col[i] + cs[i] * col[i + 1];
                col[i] = t;
            }
            let rho = col[k].hypot(col[k + 1]);
            let (c, s) = if rho == 0.0 { (1.0, 0.0) } else { (col[k] / rho, col[k + 1] / rho) };
            cs.push(c);
            sn.push(s);
            col[k] = rho;
            col[k + 1] = 0.0;
            g.push(-s * g[k]);
            g[k] *= c;
            hess.push(col);
            iterations += 1;
            k += 1;
            rel = g[k].abs() / b_norm;
            if rel <= rel_tol || wn == 0.0 {
                break;
            }
            v.push(w.iter().map(|z| z / wn).collect());
        }
        let mut y = vec![0.0; k];
        for i in (0..k).rev() {
            let mut s = g[i];
            for j in (i + 1)..k {
                s -= hess[j][i] * y[j];
            }
            y[i] = s / hess[i][i];
        }
        for (yi, zi) in y.iter().zip(&z_basis) {
            x.iter_mut().zip(zi).for_each(|(a, b)| *a += yi * b);
        }
        if rel <= rel_tol {
            break;
        }
    }
    let ax = apply(&x);
    let true_rel = norm(&b.iter().zip(&ax).map(|(p, q)| p - q).collect::<Vec<_>>()) / b_norm;
    GmresOutcome {
        x,
        iterations,
        relative_residual: true_rel,
        converged: true_rel <= 10.0 * rel_tol,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use rand::Rng;

    #[test]
    fn solves_nonsymmetric_system() {
        let mut rng = crate::random::rng(3);
        let n = 40;
        let a = DMatrix::from_fn(n, n, |i, j| if i == j { 4.0 } else { rng.random_range(-0.3..0.3) });
        let b: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let out = gmres(
            |x| (&a * DVector::from_column_slice(x)).as_slice().to_vec(),
            |x| x.to_vec(),
            &b,
            1e-12,
            10,
            500,
        );
        assert!(out.converged);
        let want = a.clone().lu().solve(&DVector::from_column_slice(&b)).unwrap();
        for (p, q) in out.x.iter().zip(want.iter()) {
            assert!((p - q).abs() < 1e-10);
        }
    }

    #[test]
    fn exact_preconditioner_converges_in_one_step() {
        let a = DMatrix::from_fn(5, 5, |i, j| 1.0 / (i + j + 1) as f64 + if i == j { 1.0 } else { 0.0 });
        let inv = a.clone().try_inverse().unwrap();
        let b = vec![1.0, -2.0, 0.5, 3.0, 0.0];
        let out = gmres(
            |x| (&a * DVector::from_column_slice(x)).as_slice().to_vec(),
            |x| (&inv * DVector::from_column_slice(x)).as_slice().to_vec(),
            &b,
            1e-12,
            5,
            5,
        );
        assert_eq!(out.iterations, 1);
        assert!(out.relative_residual < 1e-12);
    }
}
