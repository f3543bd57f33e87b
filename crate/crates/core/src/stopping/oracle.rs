//! Numerical GLR evaluation used to validate the closed forms.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::{unique_argmax, ContextMatrix, EmpiricalState, MeanSpec, Setting};

const STARTS: usize = 50;
const MAX_ITER: usize = 20_000;

/// Minimizes `sum_l w_l (x_l - c_l)^2 / 2` over `{x : a . x >= 0}` with
/// restarted accelerated projected gradient.
fn min_over_halfspace(w: &[f64], c: &[f64], a: &[f64], x0: &[f64]) -> f64 {
    let a2: f64 = a.iter().map(|v| v * v).sum();
    let project = |y: &mut [f64]| {
        let dot: f64 = a.iter().zip(y.iter()).map(|(a, y)| a * y).sum();
        if dot < 0.0 {
            for (yi, ai) in y.iter_mut().zip(a) {
                *yi -= dot / a2 * ai;
            }
        }
    };
    let value =
        |x: &[f64]| -> f64 { 0.5 * x.iter().zip(c).zip(w).map(|((x, c), w)| w * (x - c) * (x - c)).sum::<f64>() };
    let step = 1.0 / w.iter().fold(0.0f64, |m, v| m.max(*v));
    let mut x = x0.to_vec();
    project(&mut x);
    let mut y = x.clone();
    let mut next = vec![0.0; x.len()];
    let mut t = 1.0f64;
    let mut fx = value(&x);
    for _ in 0..MAX_ITER {
        for l in 0..x.len() {
            next[l] = y[l] - step * w[l] * (y[l] - c[l]);
        }
        project(&mut next);
        let fnext = value(&next);
        if fnext > fx {
            // restart momentum
            t = 1.0;
            y.copy_from_slice(&x);
            continue;
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let beta = (t - 1.0) / t_next;
        let moved = x.iter().zip(&next).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        for l in 0..x.len() {
            y[l] = next[l] + beta * (next[l] - x[l]);
        }
        x.copy_from_slice(&next);
        t = t_next;
        let done = fx - fnext <= 1e-18 * fx.max(1e-300) && moved < 1e-14;
        fx = fnext;
        if done {
            break;
        }
    }
    fx
}

/// Infimum of the GLR objective over the alternative set, computed
/// numerically from 50 random starts per challenger. Limited to `n, k <= 3`.
pub fn glr_brute_oracle(
    state: &EmpiricalState,
    a: &ContextMatrix,
    setting: Setting,
    seed: u64,
) -> Result<f64> {
    let (k, n) = (a.k(), a.n());
    if n > 3 || k > 3 {
        return Err(Error::Usage(format!("oracle limited to n, k <= 3 (got n={n}, k={k})")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // weights, centre and per-challenger constraint vectors over the free parameters
    let (weights, centre, rewards): (Vec<f64>, Vec<f64>, Vec<f64>) =
        match state.empirical_means(setting)? {
            MeanSpec::NonSeparator { means, .. } => {
                let w = (0..k * n)
                    .map(|c| state.joint_count(c / n, c % n) as f64)
                    .collect();
                let r = (0..n)
                    .map(|i| (0..k).map(|j| a.get(j, i) * means[j * n + i]).sum())
                    .collect();
                (w, means, r)
            }
            MeanSpec::Separator(mu) => {
                let w = state.context_counts().iter().map(|&c| c as f64).collect();
                let r = (0..n)
                    .map(|i| (0..k).map(|j| a.get(j, i) * mu[j]).sum())
                    .collect();
                (w, mu, r)
            }
        };
    let Some(best) = unique_argmax(&rewards) else {
        return Ok(0.0);
    };
    let dim = centre.len();
    let mut best_value = f64::INFINITY;
    for i in (0..n).filter(|&i| i != best) {
        // reward_i(x) - reward_best(x) >= 0
        let mut cons = vec![0.0; dim];
        for j in 0..k {
            match setting {
                Setting::NonSeparator => {
                    cons[j * n + i] += a.get(j, i);
                    cons[j * n + best] -= a.get(j, best);
                }
                Setting::Separator => cons[j] = a.get(j, i) - a.get(j, best),
            }
        }
        if cons.iter().all(|v| *v == 0.0) {
            continue;
        }
        for _ in 0..STARTS {
            let x0: Vec<f64> = centre
                .iter()
                .map(|c| {
                    let z: f64 = rng.sample(StandardNormal);
                    c + (1.0 + c.abs()) * z
                })
                .collect();
            best_value = best_value.min(min_over_halfspace(&weights, &centre, &cons, &x0));
        }
    }
    Ok(best_value)
}
