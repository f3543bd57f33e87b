//! Optimal allocations and characteristic times.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::simplex::{LinearProgram, LpOutcome, Relation};
use crate::model::{
    expected_rewards, unique_argmax, ContextDistribution, ContextMatrix, Instance, Setting,
    WeightVector,
};

/// Lower clamp applied to context weights before evaluating the separator objective.
pub const WZ_FLOOR: f64 = 1e-12;

/// Optimal allocation returned with a characteristic time.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", content = "values", rename_all = "snake_case")]
pub enum Allocation {
    Arms(WeightVector),
    Contexts(ContextDistribution),
}

impl Allocation {
    pub fn as_slice(&self) -> &[f64] {
        match self {
            Allocation::Arms(w) => w.as_slice(),
            Allocation::Contexts(w) => w.as_slice(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CharacteristicTime {
    pub t_star: f64,
    pub objective: f64,
    pub weights: Allocation,
}

impl CharacteristicTime {
    fn from_objective(objective: f64, weights: Allocation) -> Result<Self> {
        if !(objective > 0.0 && objective.is_finite()) {
            return Err(Error::Usage(format!("objective {objective} is not positive")));
        }
        Ok(Self {
            t_star: 1.0 / objective,
            objective,
            weights,
        })
    }
}

/// KL divergence between Bernoulli(delta) and Bernoulli(1 - delta).
pub fn d_bernoulli(delta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Usage(format!("delta must lie in (0, 1), got {delta}")));
    }
    Ok((1.0 - 2.0 * delta) * ((1.0 - delta) / delta).ln())
}

// ---------------------------------------------------------------------------
// Non-separator

fn best_of_gaps(gaps: &[f64]) -> usize {
    gaps.iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0)
}

/// `min_{i != i*} (gap_i^2 / 2) * w_{i*} w_i / (w_{i*} + w_i)`, with `i*` the
/// arm of smallest gap. Zero weights give zero.
pub fn nonsep_objective(w: &[f64], gaps: &[f64]) -> f64 {
    let best = best_of_gaps(gaps);
    let wb = w[best];
    if wb <= 0.0 {
        return 0.0;
    }
    let mut value = f64::INFINITY;
    for (i, (&wi, &g)) in w.iter().zip(gaps).enumerate() {
        if i == best {
            continue;
        }
        let term = if wi <= 0.0 {
            0.0
        } else {
            0.5 * g * g * wb * wi / (wb + wi)
        };
        value = value.min(term);
    }
    value
}

/// Root of `sum_{i != i*} 1 / (w gap_i^2 - 1)^2 = 1` and the bracket it was
/// searched in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NonsepRoot {
    pub root: f64,
    pub lo: f64,
    pub hi: f64,
    pub residual: f64,
}

fn check_gaps(gaps: &[f64]) -> Result<usize> {
    if gaps.len() < 2 {
        return Err(Error::Usage(format!("need at least 2 arms, got {}", gaps.len())));
    }
    if gaps.iter().any(|g| !g.is_finite() || *g < 0.0) {
        return Err(Error::Usage("gaps must be finite and non-negative".into()));
    }
    let best = best_of_gaps(gaps);
    if gaps
        .iter()
        .enumerate()
        .any(|(i, &g)| i != best && g <= 0.0)
    {
        return Err(Error::NoUniqueBestArm);
    }
    Ok(best)
}

fn root_residual(w: f64, gaps: &[f64], best: usize) -> f64 {
    gaps.iter()
        .enumerate()
        .filter(|(i, _)| *i != best)
        .map(|(_, g)| {
            let x = w * g * g - 1.0;
            1.0 / (x * x)
        })
        .sum::<f64>()
        - 1.0
}

pub fn nonsep_root(gaps: &[f64]) -> Result<NonsepRoot> {
    let best = check_gaps(gaps)?;
    let dmin = gaps
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != best)
        .map(|(_, g)| *g)
        .fold(f64::INFINITY, f64::min);
    let d2 = dmin * dmin;
    let lo0 = 2.0 / d2;
    let hi0 = (1.0 + ((gaps.len() - 1) as f64).sqrt()) / d2;
    let (mut lo, mut hi) = (lo0, hi0);
    // h is strictly decreasing on the bracket, h(lo) >= 0 >= h(hi)
    while hi - lo > 1e-14 * hi {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if root_residual(mid, gaps, best) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let root = if root_residual(lo, gaps, best).abs() <= root_residual(hi, gaps, best).abs() {
        lo
    } else {
        hi
    };
    Ok(NonsepRoot {
        root,
        lo: lo0,
        hi: hi0,
        residual: root_residual(root, gaps, best),
    })
}

/// Optimal arm proportions for the non-separator problem with the given gaps
/// (the best arm carries gap 0).
pub fn solve_nonsep_weights(gaps: &[f64]) -> Result<WeightVector> {
    let r = nonsep_root(gaps)?;
    let best = best_of_gaps(gaps);
    let w = r.root;
    let mut u: Vec<f64> = gaps
        .iter()
        .enumerate()
        .map(|(i, g)| if i == best { w } else { w / (w * g * g - 1.0) })
        .collect();
    let s: f64 = u.iter().sum();
    for x in &mut u {
        *x /= s;
    }
    Ok(WeightVector::new_unchecked(u))
}

// ---------------------------------------------------------------------------
// Separator

#[derive(Debug, Clone, Copy)]
pub struct SepOptions {
    /// Stop once the certified gap is at most this (absolute).
    pub tol: f64,
    /// Stop once the certified gap is at most this fraction of the objective.
    pub rel_tol: f64,
    pub max_iter: usize,
}

impl Default for SepOptions {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            rel_tol: 1e-7,
            max_iter: 50_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SepSolution {
    pub wz: ContextDistribution,
    /// Arm mixture with `A * lambda = wz`.
    pub lambda: Vec<f64>,
    pub objective: f64,
    /// Certified upper bound on the optimal objective.
    pub upper_bound: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// The separator allocation problem for a context matrix and a reward vector.
#[derive(Debug, Clone)]
pub struct SepProblem<'a> {
    a: &'a ContextMatrix,
    best: usize,
    // (gap^2 / 2, squared column differences) per informative suboptimal arm
    pieces: Vec<(f64, Vec<f64>)>,
}

impl<'a> SepProblem<'a> {
    pub fn new(a: &'a ContextMatrix, rewards: &[f64]) -> Result<Self> {
        if rewards.len() != a.n() {
            return Err(Error::Usage("reward vector length differs from arm count".into()));
        }
        let best = unique_argmax(rewards).ok_or(Error::NoUniqueBestArm)?;
        let k = a.k();
        let mut pieces = Vec::new();
        for i in 0..a.n() {
            if i == best {
                continue;
            }
            let d: Vec<f64> = (0..k)
                .map(|j| {
                    let x = a.get(j, best) - a.get(j, i);
                    x * x
                })
                .collect();
            if d.iter().all(|x| *x == 0.0) {
                continue;
            }
            let g = rewards[best] - rewards[i];
            pieces.push((0.5 * g * g, d));
        }
        if pieces.is_empty() {
            return Err(Error::NoUniqueBestArm);
        }
        Ok(Self { a, best, pieces })
    }

    pub fn best_arm(&self) -> usize {
        self.best
    }

    /// Objective at a context distribution.
    pub fn objective(&self, wz: &[f64]) -> f64 {
        self.pieces
            .iter()
            .map(|(h, d)| {
                let s: f64 = d.iter().zip(wz).map(|(d, w)| d / w.max(WZ_FLOOR)).sum();
                h / s
            })
            .fold(f64::INFINITY, f64::min)
    }

    fn objective_lambda(&self, lambda: &[f64], wz: &mut [f64]) -> f64 {
        self.mix_into(lambda, wz);
        self.objective(wz)
    }

    fn mix_into(&self, lambda: &[f64], wz: &mut [f64]) {
        for (j, out) in wz.iter_mut().enumerate() {
            *out = (0..self.a.n()).map(|i| self.a.get(j, i) * lambda[i]).sum();
        }
    }

    // Piece values and gradients with respect to lambda.
    fn linearize(&self, wz: &[f64], vals: &mut Vec<f64>, grads: &mut Vec<Vec<f64>>) {
        let (k, n) = (self.a.k(), self.a.n());
        vals.clear();
        grads.resize(self.pieces.len(), Vec::new());
        for ((h, d), g) in self.pieces.iter().zip(grads.iter_mut()) {
            let s: f64 = d.iter().zip(wz).map(|(d, w)| d / w.max(WZ_FLOOR)).sum();
            let f = h / s;
            vals.push(f);
            g.clear();
            g.resize(n, 0.0);
            for j in 0..k {
                let w = wz[j].max(WZ_FLOOR);
                let gw = f * d[j] / (w * w) / s;
                if gw != 0.0 {
                    for (i, gi) in g.iter_mut().enumerate() {
                        *gi += gw * self.a.get(j, i);
                    }
                }
            }
        }
    }

    // max t s.t. t <= f_i + g_i . (lambda' - lambda), lambda' in the simplex,
    // optionally |lambda' - lambda|_inf <= radius.
    fn direction_lp(
        &self,
        lambda: &[f64],
        vals: &[f64],
        grads: &[Vec<f64>],
        radius: Option<f64>,
    ) -> Option<(f64, Vec<f64>)> {
        let n = self.a.n();
        let mut lp = LinearProgram::new(n + 1);
        let mut c = vec![0.0; n + 1];
        c[n] = 1.0;
        lp.set_objective(c);
        for (f, g) in vals.iter().zip(grads) {
            let mut row: Vec<f64> = g.iter().map(|x| -x).collect();
            row.push(1.0);
            let rhs = f - g.iter().zip(lambda).map(|(g, l)| g * l).sum::<f64>();
            lp.add_row(row, Relation::Le, rhs);
        }
        let mut row = vec![1.0; n + 1];
        row[n] = 0.0;
        lp.add_row(row, Relation::Eq, 1.0);
        if let Some(r) = radius {
            for (i, &l) in lambda.iter().enumerate() {
                let mut row = vec![0.0; n + 1];
                row[i] = 1.0;
                if l + r < 1.0 {
                    lp.add_row(row.clone(), Relation::Le, l + r);
                }
                if l - r > 0.0 {
                    lp.add_row(row, Relation::Ge, l - r);
                }
            }
        }
        match lp.solve() {
            LpOutcome::Optimal { mut x, value } => {
                x.truncate(n);
                let s: f64 = x.iter().sum();
                for v in &mut x {
                    *v /= s;
                }
                Some((value, x))
            }
            _ => None,
        }
    }

    /// Maximizes the objective over the hull, starting from `warm` (an arm
    /// mixture) when given.
    pub fn solve(&self, warm: Option<&[f64]>, opts: SepOptions) -> SepSolution {
        let (k, n) = (self.a.k(), self.a.n());
        let mut lambda: Vec<f64> = match warm {
            Some(w) if w.len() == n && w.iter().all(|x| *x >= 0.0) => {
                let s: f64 = w.iter().sum();
                w.iter().map(|x| x / s).collect()
            }
            _ => vec![1.0 / n as f64; n],
        };
        let mut wz = vec![0.0; k];
        let mut trial_wz = vec![0.0; k];
        let mut trial = vec![0.0; n];
        let mut vals = Vec::new();
        let mut grads = Vec::new();
        let mut value = self.objective_lambda(&lambda, &mut wz);
        let mut upper = f64::INFINITY;
        let mut radius: f64 = if warm.is_some() { 0.05 } else { 0.5 };
        let mut converged = false;
        let mut iterations = 0;
        while iterations < opts.max_iter {
            iterations += 1;
            self.linearize(&wz, &mut vals, &mut grads);
            let Some((u, full)) = self.direction_lp(&lambda, &vals, &grads, None) else {
                break;
            };
            upper = upper.min(u.max(value));
            let gap = upper - value;
            if gap <= opts.tol || gap <= opts.rel_tol * value {
                converged = true;
                break;
            }
            let target = if radius >= 1.0 {
                full
            } else {
                match self.direction_lp(&lambda, &vals, &grads, Some(radius)) {
                    Some((_, x)) => x,
                    None => full,
                }
            };
            let dir: Vec<f64> = target.iter().zip(&lambda).map(|(t, l)| t - l).collect();
            let dnorm = dir.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            if dnorm <= 1e-15 {
                radius = (radius * 4.0).min(1.0);
                continue;
            }
            let mut eval = |gamma: f64| {
                for ((t, l), d) in trial.iter_mut().zip(&lambda).zip(&dir) {
                    *t = (l + gamma * d).max(0.0);
                }
                self.objective_lambda(&trial, &mut trial_wz)
            };
            let (gamma, best) = golden_max(&mut eval, 1e-10);
            if best > value {
                for (l, d) in lambda.iter_mut().zip(&dir) {
                    *l = (*l + gamma * d).max(0.0);
                }
                let s: f64 = lambda.iter().sum();
                for l in &mut lambda {
                    *l /= s;
                }
                value = self.objective_lambda(&lambda, &mut wz);
                radius = (2.0 * gamma * dnorm).clamp(1e-12, 1.0);
            } else {
                radius *= 0.25;
                if radius < 1e-13 {
                    break;
                }
            }
        }
        SepSolution {
            wz: ContextDistribution::new_unchecked(wz),
            lambda,
            objective: value,
            upper_bound: upper.max(value),
            iterations,
            converged,
        }
    }
}

// Golden-section search for the maximum of a unimodal function on [0, 1];
// the endpoints are checked too.
fn golden_max(f: &mut impl FnMut(f64) -> f64, tol: f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let (mut a, mut b) = (0.0, 1.0);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    let mut best = if fc >= fd { (c, fc) } else { (d, fd) };
    let f1 = f(1.0);
    if f1 >= best.1 {
        best = (1.0, f1);
    }
    best
}

fn require_separator(inst: &Instance) -> Result<()> {
    if inst.setting() != Setting::Separator {
        return Err(Error::Usage("separator instance required".into()));
    }
    Ok(())
}

/// Separator objective of `wz` on `inst`.
pub fn sep_objective(wz: &[f64], inst: &Instance) -> Result<f64> {
    require_separator(inst)?;
    if wz.len() != inst.k() {
        return Err(Error::Usage("context weight length differs from k".into()));
    }
    Ok(SepProblem::new(inst.a(), &inst.expected_rewards())?.objective(wz))
}

/// Optimal context distribution for a separator instance, with the certified
/// gap driven below `tol`.
pub fn solve_sep_weights(inst: &Instance, tol: f64) -> Result<SepSolution> {
    require_separator(inst)?;
    let p = SepProblem::new(inst.a(), &inst.expected_rewards())?;
    Ok(p.solve(
        None,
        SepOptions {
            tol,
            rel_tol: 0.0,
            ..SepOptions::default()
        },
    ))
}

pub fn characteristic_time(inst: &Instance) -> Result<CharacteristicTime> {
    match inst.setting() {
        Setting::NonSeparator => {
            let gaps = inst.gaps();
            let w = solve_nonsep_weights(&gaps)?;
            let obj = nonsep_objective(w.as_slice(), &gaps);
            CharacteristicTime::from_objective(obj, Allocation::Arms(w))
        }
        Setting::Separator => {
            require_separator(inst)?;
            let p = SepProblem::new(inst.a(), &inst.expected_rewards())?;
            let sol = p.solve(None, SepOptions::default());
            CharacteristicTime::from_objective(sol.objective, Allocation::Contexts(sol.wz))
        }
    }
}

// Calls `visit` on every composition of `m` into `parts` non-negative parts.
fn for_each_composition(m: usize, parts: usize, visit: &mut impl FnMut(&[usize])) {
    fn rec(rest: usize, slot: usize, cur: &mut Vec<usize>, visit: &mut impl FnMut(&[usize])) {
        if slot + 1 == cur.len() {
            cur[slot] = rest;
            visit(cur);
            return;
        }
        for v in 0..=rest {
            cur[slot] = v;
            rec(rest - v, slot + 1, cur, visit);
        }
    }
    let mut cur = vec![0; parts];
    rec(m, 0, &mut cur, visit);
}

// Enumerates the split of `rest` grid units over the remaining challengers and
// keeps the split maximizing the smallest term. Terms grow with their count,
// so a branch is skipped once no split of `rest` can beat the incumbent.
fn grid_min_terms(
    table: &[Vec<f64>],
    rest: usize,
    slot: usize,
    acc: f64,
    counts: &mut [usize],
    best_val: &mut f64,
    best_counts: &mut [usize],
) {
    let bound = table[slot..].iter().fold(acc, |b, row| b.min(row[rest]));
    if bound <= *best_val {
        return;
    }
    if slot + 1 == table.len() {
        let v = acc.min(table[slot][rest]);
        if v > *best_val {
            *best_val = v;
            counts[slot] = rest;
            best_counts.copy_from_slice(counts);
        }
        return;
    }
    for c in 0..=rest {
        counts[slot] = c;
        grid_min_terms(table, rest - c, slot + 1, acc.min(table[slot][c]), counts, best_val, best_counts);
    }
}

/// Exhaustive grid search over arm weights (non-separator) or arm mixtures
/// (separator) with spacing `resolution`. Limited to `n, k <= 4`.
pub fn grid_oracle(inst: &Instance, resolution: f64) -> Result<CharacteristicTime> {
    let (n, k) = (inst.n(), inst.k());
    if n > 4 || k > 4 {
        return Err(Error::Usage(format!("grid oracle limited to n, k <= 4 (got n={n}, k={k})")));
    }
    if !(resolution > 0.0 && resolution <= 1.0) {
        return Err(Error::Usage(format!("resolution must lie in (0, 1], got {resolution}")));
    }
    let m = (1.0 / resolution).round().max(1.0) as usize;
    let scale = 1.0 / m as f64;
    let mut best_val = f64::NEG_INFINITY;
    let mut best_pt = vec![0.0; n];
    let mut pt = vec![0.0; n];
    match inst.setting() {
        Setting::NonSeparator => {
            let gaps = inst.gaps();
            let best = best_of_gaps(&gaps);
            let others: Vec<usize> = (0..n).filter(|&i| i != best).collect();
            let mut counts = vec![0usize; others.len()];
            let mut best_counts = (0, counts.clone());
            for cb in 1..=m {
                let wb = cb as f64 * scale;
                // value of each challenger term as a function of its grid count
                let table: Vec<Vec<f64>> = others
                    .iter()
                    .map(|&i| {
                        (0..=m - cb)
                            .map(|c| {
                                let wi = c as f64 * scale;
                                0.5 * gaps[i] * gaps[i] * wb * wi / (wb + wi)
                            })
                            .collect()
                    })
                    .collect();
                let before = best_val;
                grid_min_terms(&table, m - cb, 0, f64::INFINITY, &mut counts, &mut best_val, &mut best_counts.1);
                if best_val > before {
                    best_counts.0 = cb;
                }
            }
            best_pt[best] = best_counts.0 as f64 * scale;
            for (&i, &c) in others.iter().zip(&best_counts.1) {
                best_pt[i] = c as f64 * scale;
            }
            CharacteristicTime::from_objective(
                best_val,
                Allocation::Arms(WeightVector::new_unchecked(best_pt)),
            )
        }
        Setting::Separator => {
            let p = SepProblem::new(inst.a(), &expected_rewards(inst.a(), inst.mu()))?;
            let mut wz = vec![0.0; k];
            let mut best_wz = vec![0.0; k];
            for_each_composition(m, n, &mut |c| {
                for (p, &ci) in pt.iter_mut().zip(c) {
                    *p = ci as f64 * scale;
                }
                let v = p.objective_lambda(&pt, &mut wz);
                if v > best_val {
                    best_val = v;
                    best_wz.copy_from_slice(&wz);
                }
            });
            CharacteristicTime::from_objective(
                best_val,
                Allocation::Contexts(ContextDistribution::new_unchecked(best_wz)),
            )
        }
    }
}
