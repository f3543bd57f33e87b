//! GLR statistics and stopping thresholds.

mod zeta;
pub mod oracle;

use std::collections::HashMap;
use std::sync::{OnceLock, RwLock};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{unique_argmax, ContextMatrix, EmpiricalState, MeanSpec, Setting};

pub use oracle::glr_brute_oracle;
pub use zeta::riemann_zeta;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GlrReport {
    pub lambda: f64,
    /// Arm attaining the minimum; `None` when there is no unique empirical best.
    pub challenger: Option<usize>,
    pub empirical_best: Option<usize>,
}

impl GlrReport {
    fn non_unique() -> Self {
        Self {
            lambda: 0.0,
            challenger: None,
            empirical_best: None,
        }
    }
}

/// `g(l) = 2l - 2l ln(4l) + ln zeta(2l) - ln(1 - l) / 2` on `(1/2, 1)`.
pub fn g_fn(lambda: f64) -> Result<f64> {
    if !(lambda > 0.5 && lambda < 1.0) {
        return Err(Error::Usage(format!("g is defined on (1/2, 1), got {lambda}")));
    }
    Ok(2.0 * lambda - 2.0 * lambda * (4.0 * lambda).ln() + riemann_zeta(2.0 * lambda)?.ln()
        - 0.5 * (1.0 - lambda).ln())
}

const CG_LO: f64 = 0.5 + 1e-6;
const CG_HI: f64 = 1.0 - 1e-9;
const CG_SCAN: usize = 256;

fn cg_objective(lambda: f64, x: f64) -> f64 {
    // the scan stays strictly inside the domain
    (g_fn(lambda).unwrap_or(f64::INFINITY) + x) / lambda
}

fn c_g_uncached(x: f64) -> f64 {
    let step = (CG_HI - CG_LO) / (CG_SCAN - 1) as f64;
    let at = |i: usize| CG_LO + step * i as f64;
    let (mut best_i, mut best_v) = (0, f64::INFINITY);
    for i in 0..CG_SCAN {
        let v = cg_objective(at(i), x);
        if v < best_v {
            best_i = i;
            best_v = v;
        }
    }
    let mut a = at(best_i.saturating_sub(1));
    let mut b = at((best_i + 1).min(CG_SCAN - 1));
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (cg_objective(c, x), cg_objective(d, x));
    while b - a > 1e-10 {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = cg_objective(c, x);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = cg_objective(d, x);
        }
    }
    best_v.min(fc).min(fd)
}

fn cg_cache() -> &'static RwLock<HashMap<u64, f64>> {
    static CACHE: OnceLock<RwLock<HashMap<u64, f64>>> = OnceLock::new();
    CACHE.get_or_init(|| RwLock::new(HashMap::new()))
}

/// `C^g(x) = min_{l in (1/2, 1]} (g(l) + x) / l`, memoized per argument.
pub fn c_g(x: f64) -> f64 {
    let key = x.to_bits();
    if let Some(v) = cg_cache().read().ok().and_then(|m| m.get(&key).copied()) {
        return v;
    }
    let v = c_g_uncached(x);
    if let Ok(mut m) = cg_cache().write() {
        m.insert(key, v);
    }
    v
}

/// Non-separator threshold for `n` arms and `k` contexts at round `t`.
pub fn threshold_nonsep(t: u64, delta: f64, n: usize, k: usize) -> f64 {
    let kf = k as f64;
    let inner = (4.0 + (t as f64 / (2.0 * kf)).ln()).max(std::f64::consts::E);
    4.0 * kf * inner.ln() + 2.0 * kf * c_g(((n - 1) as f64 / delta).ln() / (2.0 * kf))
}

/// Separator threshold driven by the per-context counts.
pub fn threshold_sep(state: &EmpiricalState, delta: f64) -> Result<f64> {
    if !state.contexts_initialized() {
        return Err(Error::NotInitialized("some context was never observed".into()));
    }
    let k = state.k() as f64;
    let logs: f64 = state
        .context_counts()
        .iter()
        .map(|&c| (4.0 + (c as f64).ln()).ln())
        .sum();
    Ok(2.0 * logs + k * c_g((1.0 / delta).ln() / k))
}

/// Threshold of the context-free baseline.
pub fn threshold_classic(t: u64, delta: f64, n: usize) -> f64 {
    let inner = (4.0 + (t as f64 / 2.0).ln()).max(std::f64::consts::E);
    4.0 * inner.ln() + 2.0 * c_g(((n - 1) as f64 / delta).ln() / 2.0)
}

/// Sub-Gaussian variance proxy of a unit Gaussian whose mean is drawn from
/// `[lo, hi]`.
pub fn classic_sigma2(lo: f64, hi: f64) -> f64 {
    1.0 + (hi - lo) * (hi - lo) / 4.0
}

// Minimum over challengers of gap^2 / (2 cost_i); infinite costs are skipped.
fn glr_min(rewards: &[f64], mut cost: impl FnMut(usize, usize) -> f64) -> GlrReport {
    let Some(best) = unique_argmax(rewards) else {
        return GlrReport::non_unique();
    };
    let mut report = GlrReport {
        lambda: f64::INFINITY,
        challenger: None,
        empirical_best: Some(best),
    };
    for i in 0..rewards.len() {
        if i == best {
            continue;
        }
        let denom = 2.0 * cost(best, i);
        if denom <= 0.0 {
            continue;
        }
        let gap = rewards[best] - rewards[i];
        let v = gap * gap / denom;
        if v < report.lambda {
            report.lambda = v;
            report.challenger = Some(i);
        }
    }
    report
}

/// Closed-form GLR statistic in the non-separator setting.
pub fn glr_nonsep(state: &EmpiricalState, a: &ContextMatrix) -> Result<GlrReport> {
    let MeanSpec::NonSeparator { means, .. } = state.empirical_means(Setting::NonSeparator)?
    else {
        unreachable!("non-separator means requested");
    };
    let (k, n) = (a.k(), a.n());
    let rewards: Vec<f64> = (0..n)
        .map(|i| (0..k).map(|j| a.get(j, i) * means[j * n + i]).sum())
        .collect();
    Ok(glr_min(&rewards, |b, i| {
        (0..k)
            .map(|j| {
                let (ab, ai) = (a.get(j, b), a.get(j, i));
                ab * ab / state.joint_count(j, b) as f64 + ai * ai / state.joint_count(j, i) as f64
            })
            .sum()
    }))
}

/// Closed-form GLR statistic in the separator setting.
pub fn glr_sep(state: &EmpiricalState, a: &ContextMatrix) -> Result<GlrReport> {
    let MeanSpec::Separator(mu) = state.empirical_means(Setting::Separator)? else {
        unreachable!("separator means requested");
    };
    let (k, n) = (a.k(), a.n());
    let rewards: Vec<f64> = (0..n)
        .map(|i| (0..k).map(|j| a.get(j, i) * mu[j]).sum())
        .collect();
    let counts = state.context_counts();
    Ok(glr_min(&rewards, |b, i| {
        (0..k)
            .map(|j| {
                let d = a.get(j, b) - a.get(j, i);
                d * d / counts[j] as f64
            })
            .sum()
    }))
}

/// GLR statistic of the context-free Gaussian baseline with variance `sigma2`.
pub fn glr_classic(arm_counts: &[u64], arm_means: &[f64], sigma2: f64) -> Result<GlrReport> {
    if arm_counts.len() != arm_means.len() {
        return Err(Error::Usage("counts and means differ in length".into()));
    }
    if let Some(i) = arm_counts.iter().position(|&c| c == 0) {
        return Err(Error::NotInitialized(format!("arm {i} was never pulled")));
    }
    Ok(glr_min(arm_means, |b, i| {
        sigma2 * (1.0 / arm_counts[b] as f64 + 1.0 / arm_counts[i] as f64)
    }))
}
