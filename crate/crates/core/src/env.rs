//! Simulated environments and random instance generation.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ContextMatrix, Instance, MeanSpec, Setting};

/// Seeded random stream. Equal `(seed, stream)` pairs replay the same draws;
/// different stream ids give independent sequences.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { seed, stream, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Index drawn from a discrete distribution given by `probs`.
    pub fn categorical(&mut self, probs: &[f64]) -> usize {
        let u: f64 = self.rng.random();
        let mut acc = 0.0;
        for (i, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        // rounding left a sliver of mass past the last bucket
        probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// Plays `arm` once: draws a context from column `arm` of `A`, then a
/// unit-variance Gaussian reward around that cell's mean.
pub fn sample_step(inst: &Instance, arm: usize, rng: &mut RngStream) -> Result<(usize, f64)> {
    if arm >= inst.n() {
        return Err(Error::ArmOutOfRange { arm, n: inst.n() });
    }
    Ok(draw(inst.a(), inst.mu(), arm, rng))
}

#[inline]
pub(crate) fn draw(a: &ContextMatrix, mu: &MeanSpec, arm: usize, rng: &mut RngStream) -> (usize, f64) {
    let u: f64 = rng.random();
    let k = a.k();
    let mut context = k - 1;
    let mut acc = 0.0;
    for j in 0..k {
        acc += a.get(j, arm);
        if u < acc {
            context = j;
            break;
        }
    }
    let reward = mu.cell(context, arm) + rng.standard_normal();
    (context, reward)
}

/// Constraints for random instances in the style of the benchmark suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConstraints {
    pub n: usize,
    pub k: usize,
    pub mu_range: (f64, f64),
    pub a_min_floor: f64,
    /// `gap_bands[i]` bounds the gap of arm `i`; entry 0 (the best arm) is ignored.
    pub gap_bands: Vec<(f64, f64)>,
    pub max_attempts: usize,
}

impl GenConstraints {
    /// Defaults: means in `[0, 10]`, `a_min >= 1/(4k)`, and
    /// `Delta_i in [1/(2n), (i+1)/(2n)]` for 1-based arm label `i > 1`.
    pub fn new(n: usize, k: usize) -> Self {
        let two_n = 2.0 * n as f64;
        let gap_bands = (0..n)
            .map(|i| if i == 0 { (0.0, 0.0) } else { (1.0 / two_n, (i + 2) as f64 / two_n) })
            .collect();
        Self {
            n,
            k,
            mu_range: (0.0, 10.0),
            a_min_floor: 1.0 / (4.0 * k as f64),
            gap_bands,
            max_attempts: 100_000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.mu_range;
        if self.n < 2 || self.k < 1 {
            return Err(Error::Usage(format!("need n >= 2 and k >= 1, got n={} k={}", self.n, self.k)));
        }
        if !(lo < hi) {
            return Err(Error::Usage(format!("empty mean range [{lo}, {hi}]")));
        }
        if !(self.a_min_floor >= 0.0 && self.a_min_floor <= 1.0 / self.k as f64) {
            return Err(Error::Usage(format!(
                "a_min floor {} exceeds 1/k",
                self.a_min_floor
            )));
        }
        if self.gap_bands.len() != self.n {
            return Err(Error::Usage("need one gap band per arm".into()));
        }
        for (i, &(glo, ghi)) in self.gap_bands.iter().enumerate().skip(1) {
            if !(glo > 0.0 && glo <= ghi && ghi < hi - lo) {
                return Err(Error::Usage(format!(
                    "gap band [{glo}, {ghi}] for arm {} is not inside (0, {})",
                    i + 1,
                    hi - lo
                )));
            }
        }
        Ok(())
    }
}

/// Draws a random instance whose first arm is best and whose gaps fall in the
/// configured bands.
///
/// Columns of `A` are symmetric Dirichlet(1) draws, rejected below the
/// `a_min` floor. Non-separator means: arm 1 is uniform on the mean range; every
/// other column is uniform and then shifted so its gap hits a uniform target in
/// its band. Separator means: the mean vector is uniform, arms are relabelled
/// by decreasing reward, and an affine map `mu -> alpha*mu + beta` (which moves
/// every expected reward the same way) places the gaps in their bands.
pub fn gen_random_instance(
    c: &GenConstraints,
    kind: Setting,
    rng: &mut RngStream,
) -> Result<Instance> {
    c.validate()?;
    let mut attempts = 0usize;
    while attempts < c.max_attempts {
        let Some(a_cols) = draw_columns(c, rng, &mut attempts) else {
            break;
        };
        let made = match kind {
            Setting::NonSeparator => nonsep_means(c, &a_cols, rng, &mut attempts),
            Setting::Separator => sep_means(c, a_cols, rng, &mut attempts),
        };
        if let Some((cols, mu)) = made {
            let data = (0..c.k)
                .flat_map(|j| cols.iter().map(move |col| col[j]))
                .collect();
            let a = ContextMatrix::from_row_major(c.k, c.n, data)?;
            let inst = Instance::new(a, mu)?;
            debug_assert_eq!(inst.best_arm(), 0);
            return Ok(inst);
        }
    }
    Err(Error::GenerationFailed { attempts })
}

fn draw_columns(c: &GenConstraints, rng: &mut RngStream, attempts: &mut usize) -> Option<Vec<Vec<f64>>> {
    let mut cols = Vec::with_capacity(c.n);
    while cols.len() < c.n {
        if *attempts >= c.max_attempts {
            return None;
        }
        *attempts += 1;
        let raw: Vec<f64> = (0..c.k).map(|_| Exp1.sample(rng)).collect();
        let total: f64 = raw.iter().sum();
        let col: Vec<f64> = raw.iter().map(|x| x / total).collect();
        if col.iter().all(|&x| x >= c.a_min_floor && x > 0.0) {
            cols.push(col);
        }
    }
    Some(cols)
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

// Per-column retries before the whole draw is restarted.
const COLUMN_TRIES: usize = 200;

fn nonsep_means(
    c: &GenConstraints,
    cols: &[Vec<f64>],
    rng: &mut RngStream,
    attempts: &mut usize,
) -> Option<(Vec<Vec<f64>>, MeanSpec)> {
    let (lo, hi) = c.mu_range;
    let mut mu_cols: Vec<Vec<f64>> = Vec::with_capacity(c.n);
    mu_cols.push((0..c.k).map(|_| rng.random_range(lo..hi)).collect());
    let best_reward = dot(&cols[0], &mu_cols[0]);
    for i in 1..c.n {
        let (glo, ghi) = c.gap_bands[i];
        let mut placed = None;
        for _ in 0..COLUMN_TRIES {
            if *attempts >= c.max_attempts {
                return None;
            }
            *attempts += 1;
            let gap = if ghi > glo { rng.random_range(glo..=ghi) } else { glo };
            let col: Vec<f64> = (0..c.k).map(|_| rng.random_range(lo..hi)).collect();
            let shift = best_reward - gap - dot(&cols[i], &col);
            let moved: Vec<f64> = col.iter().map(|m| m + shift).collect();
            if moved.iter().all(|&m| m >= lo && m <= hi) {
                placed = Some(moved);
                break;
            }
        }
        mu_cols.push(placed?);
    }
    let means = (0..c.k)
        .flat_map(|j| mu_cols.iter().map(move |col| col[j]))
        .collect();
    Some((
        cols.to_vec(),
        MeanSpec::NonSeparator {
            k: c.k,
            n: c.n,
            means,
        },
    ))
}

fn sep_means(
    c: &GenConstraints,
    mut cols: Vec<Vec<f64>>,
    rng: &mut RngStream,
    attempts: &mut usize,
) -> Option<(Vec<Vec<f64>>, MeanSpec)> {
    let (lo, hi) = c.mu_range;
    *attempts += 1;
    let mu: Vec<f64> = (0..c.k).map(|_| rng.random_range(lo..hi)).collect();
    let mut rewards: Vec<(f64, Vec<f64>)> =
        cols.drain(..).map(|col| (dot(&col, &mu), col)).collect();
    rewards.sort_by(|x, y| y.0.total_cmp(&x.0));
    let top = rewards[0].0;
    let raw_gaps: Vec<f64> = rewards.iter().map(|(r, _)| top - r).collect();
    if raw_gaps[1..].iter().any(|&g| g <= 0.0) {
        return None;
    }
    let (mut alpha_lo, mut alpha_hi) = (0.0f64, f64::INFINITY);
    for i in 1..c.n {
        let (glo, ghi) = c.gap_bands[i];
        alpha_lo = alpha_lo.max(glo / raw_gaps[i]);
        alpha_hi = alpha_hi.min(ghi / raw_gaps[i]);
    }
    let (mu_min, mu_max) = mu
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &m| (a.min(m), b.max(m)));
    if mu_max > mu_min {
        alpha_hi = alpha_hi.min((hi - lo) / (mu_max - mu_min));
    }
    if !(alpha_lo <= alpha_hi) {
        return None;
    }
    let alpha = if alpha_hi > alpha_lo { rng.random_range(alpha_lo..=alpha_hi) } else { alpha_lo };
    let (beta_lo, beta_hi) = (lo - alpha * mu_min, hi - alpha * mu_max);
    let beta = if beta_hi > beta_lo { rng.random_range(beta_lo..=beta_hi) } else { beta_lo };
    let scaled: Vec<f64> = mu.iter().map(|m| (alpha * m + beta).clamp(lo, hi)).collect();
    let cols = rewards.into_iter().map(|(_, col)| col).collect();
    Some((cols, MeanSpec::Separator(scaled)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn three_context() -> Instance {
        let a = ContextMatrix::from_rows(&[
            vec![0.9, 0.9, 0.1],
            vec![0.09, 0.01, 0.45],
            vec![0.01, 0.09, 0.45],
        ])
        .unwrap();
        Instance::new(a, MeanSpec::Separator(vec![1.0, 0.1, 0.3])).unwrap()
    }

    #[test]
    fn same_seed_same_stream_replays() {
        let mut a = RngStream::new(7, 3);
        let mut b = RngStream::new(7, 3);
        let mut c = RngStream::new(7, 4);
        let xa: Vec<u64> = (0..16).map(|_| a.next_u64()).collect();
        let xb: Vec<u64> = (0..16).map(|_| b.next_u64()).collect();
        let xc: Vec<u64> = (0..16).map(|_| c.next_u64()).collect();
        assert_eq!(xa, xb);
        assert_ne!(xa, xc);
    }

    #[test]
    fn near_degenerate_column_always_gives_first_context() {
        let a = ContextMatrix::from_rows(&[vec![1.0 - 2e-15, 0.5], vec![1e-15, 0.25], vec![1e-15, 0.25]])
            .unwrap();
        let mu = MeanSpec::Separator(vec![0.0, 1.0, 2.0]);
        let inst = Instance::new(a, mu).unwrap();
        let mut rng = RngStream::new(1, 0);
        for _ in 0..10_000 {
            assert_eq!(sample_step(&inst, 0, &mut rng).unwrap().0, 0);
        }
    }

    #[test]
    fn context_frequencies_follow_column() {
        let inst = three_context();
        let mut rng = RngStream::new(11, 0);
        let mut counts = [0usize; 3];
        let draws = 100_000;
        for _ in 0..draws {
            counts[sample_step(&inst, 0, &mut rng).unwrap().0] += 1;
        }
        for (c, p) in counts.iter().zip([0.9, 0.09, 0.01]) {
            assert!((*c as f64 / draws as f64 - p).abs() < 0.01);
        }
    }

    #[test]
    fn reward_mean_within_clt_bound() {
        let a = ContextMatrix::from_rows(&[vec![1.0, 1.0]]).unwrap();
        let mu = MeanSpec::non_separator_from_rows(&[vec![1.0, 0.0]]).unwrap();
        let inst = Instance::new(a, mu).unwrap();
        let mut rng = RngStream::new(5, 9);
        let draws = 100_000;
        let s: f64 = (0..draws).map(|_| sample_step(&inst, 0, &mut rng).unwrap().1).sum();
        // 5 sigma of the sample mean is 5/sqrt(1e5) ~ 0.0158
        assert!((s / draws as f64 - 1.0).abs() < 0.02);
    }

    #[test]
    fn bad_arm_rejected() {
        let mut rng = RngStream::new(0, 0);
        assert!(sample_step(&three_context(), 5, &mut rng).is_err());
    }

    #[test]
    fn default_bands() {
        let c = GenConstraints::new(5, 3);
        assert_eq!(c.gap_bands[1], (0.1, 0.3));
        assert!((c.a_min_floor - 1.0 / 12.0).abs() < 1e-15);
    }

    fn check_generated(inst: &Instance, c: &GenConstraints) {
        assert_eq!(inst.best_arm(), 0);
        let g = inst.gaps();
        for i in 1..c.n {
            let (lo, hi) = c.gap_bands[i];
            assert!(g[i] >= lo - 1e-9 && g[i] <= hi + 1e-9, "gap {i} = {} not in [{lo}, {hi}]", g[i]);
        }
        assert!(inst.a().a_min() >= c.a_min_floor);
        let (lo, hi) = inst.mean_range();
        assert!(lo >= c.mu_range.0 && hi <= c.mu_range.1);
    }

    #[test]
    fn generated_instances_meet_constraints() {
        for (n, k) in [(5, 3), (3, 3), (10, 5), (2, 1), (15, 7)] {
            let c = GenConstraints::new(n, k);
            for seed in 0..5 {
                for kind in [Setting::NonSeparator, Setting::Separator] {
                    if kind == Setting::Separator && k == 1 {
                        continue;
                    }
                    let mut rng = RngStream::new(seed, 0);
                    let inst = gen_random_instance(&c, kind, &mut rng).unwrap();
                    assert_eq!(inst.setting(), kind);
                    check_generated(&inst, &c);
                }
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let c = GenConstraints::new(5, 3);
        let x = gen_random_instance(&c, Setting::NonSeparator, &mut RngStream::new(3, 1)).unwrap();
        let y = gen_random_instance(&c, Setting::NonSeparator, &mut RngStream::new(3, 1)).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn infeasible_budget_reports_failure() {
        let mut c = GenConstraints::new(3, 3);
        c.max_attempts = 3;
        c.a_min_floor = 1.0 / 3.0;
        let err = gen_random_instance(&c, Setting::NonSeparator, &mut RngStream::new(0, 0));
        assert!(matches!(err, Err(Error::GenerationFailed { .. })));
    }
}
