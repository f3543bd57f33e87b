#![allow(dead_code)]

use std::path::PathBuf;

use ctxbai::env::RngStream;
use ctxbai::ContextMatrix;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../instances")
        .join(name)
}

/// Uniform draw from the simplex.
pub fn dirichlet(rng: &mut RngStream, len: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..len).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|x| x / total).collect()
}

/// Random column-stochastic `k x n` matrix; with `sparse`, some entries are zero.
pub fn random_matrix(rng: &mut RngStream, k: usize, n: usize, sparse: bool) -> ContextMatrix {
    let cols: Vec<Vec<f64>> = (0..n)
        .map(|_| loop {
            let mut c = dirichlet(rng, k);
            if sparse {
                for v in c.iter_mut() {
                    if rng.random::<f64>() < 0.25 {
                        *v = 0.0;
                    }
                }
            }
            let s: f64 = c.iter().sum();
            if s > 0.0 {
                break c.iter().map(|v| v / s).collect();
            }
        })
        .collect();
    let rows: Vec<Vec<f64>> = (0..k).map(|j| cols.iter().map(|c| c[j]).collect()).collect();
    if sparse {
        ContextMatrix::with_zeros(&rows).unwrap()
    } else {
        ContextMatrix::from_rows(&rows).unwrap()
    }
}

pub fn sup_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
}

fn dense(a: &ContextMatrix) -> DMatrix<f64> {
    DMatrix::from_fn(a.k(), a.n(), |j, i| a.get(j, i))
}

/// Lawson-Hanson non-negative least squares: `min ||M x - b||_2` over `x >= 0`.
pub fn nnls(m: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = m.ncols();
    let mut x = DVector::zeros(n);
    let mut passive = vec![false; n];
    for _ in 0..(3 * n + 10) {
        let grad = m.transpose() * (b - m * &x);
        let candidate = (0..n)
            .filter(|&i| !passive[i] && grad[i] > 1e-13)
            .max_by(|&i, &j| grad[i].total_cmp(&grad[j]));
        let Some(enter) = candidate else {
            break;
        };
        passive[enter] = true;
        loop {
            let idx: Vec<usize> = (0..n).filter(|&i| passive[i]).collect();
            let sub = m.select_columns(&idx);
            let z_sub = sub.svd(true, true).solve(b, 1e-14).unwrap();
            let mut z = DVector::zeros(n);
            for (p, &i) in idx.iter().enumerate() {
                z[i] = z_sub[p];
            }
            if idx.iter().all(|&i| z[i] > 0.0) {
                x = z;
                break;
            }
            let alpha = idx
                .iter()
                .filter(|&&i| z[i] <= 0.0)
                .map(|&i| x[i] / (x[i] - z[i]))
                .fold(f64::INFINITY, f64::min);
            x = &x + (&z - &x) * alpha;
            for &i in &idx {
                if x[i] <= 1e-15 {
                    x[i] = 0.0;
                    passive[i] = false;
                }
            }
        }
    }
    x
}

/// Distance from `p` to the cone spanned by the columns of `a`. Columns sum
/// to one, so for a point of the simplex this is zero exactly on the hull.
pub fn hull_residual(p: &[f64], a: &ContextMatrix) -> f64 {
    let m = dense(a);
    let b = DVector::from_column_slice(p);
    let x = nnls(&m, &b);
    let r = &m * &x - &b;
    r.amax()
}

/// Farthest point of the ray `origin + s (through - origin)`, `s >= 1`, that
/// stays in the hull, located by bisection over the NNLS membership test.
pub fn bisection_exit(origin: &[f64], through: &[f64], a: &ContextMatrix) -> Vec<f64> {
    const INSIDE: f64 = 1e-10;
    let d: Vec<f64> = through.iter().zip(origin).map(|(t, o)| t - o).collect();
    let at = |s: f64| -> Vec<f64> {
        origin.iter().zip(&d).map(|(o, d)| (o + s * d).max(0.0)).collect()
    };
    let s_simplex = origin
        .iter()
        .zip(&d)
        .filter(|(_, d)| **d < 0.0)
        .map(|(o, d)| -o / d)
        .fold(f64::INFINITY, f64::min);
    if hull_residual(&at(s_simplex), a) <= INSIDE {
        return at(s_simplex);
    }
    let span = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let (mut lo, mut hi) = (1.0, s_simplex);
    while (hi - lo) * span > 1e-11 {
        let mid = 0.5 * (lo + hi);
        if hull_residual(&at(mid), a) <= INSIDE {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    at(lo)
}
