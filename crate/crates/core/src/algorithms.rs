//! Track-and-stop agents: NSTS, STS and the context-free TS baseline.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{sample_step, RngStream};
use crate::error::{Error, Result};
use crate::geometry::{ray_exit, ArmMixture};
use crate::model::{
    unique_argmax, ContextDistribution, EmpiricalState, Instance, MeanSpec, Setting,
};
use crate::optim::{characteristic_time, solve_nonsep_weights, SepOptions, SepProblem};
use crate::stopping::{
    classic_sigma2, glr_classic, glr_nonsep, glr_sep, threshold_classic, threshold_nonsep,
    threshold_sep,
};

pub const DEFAULT_MAX_ROUNDS: u64 = 50_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algo {
    Nsts,
    Sts,
    Ts,
}

impl Algo {
    pub fn name(self) -> &'static str {
        match self {
            Algo::Nsts => "nsts",
            Algo::Sts => "sts",
            Algo::Ts => "ts",
        }
    }
}

impl fmt::Display for Algo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nsts" => Ok(Algo::Nsts),
            "sts" => Ok(Algo::Sts),
            "ts" => Ok(Algo::Ts),
            other => Err(Error::Usage(format!("unknown algorithm '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub delta: f64,
    pub max_rounds: u64,
    /// Recompute the optimal weights every this many rounds.
    pub recompute_every: u64,
    /// Snapshot interval; `None` disables trajectories.
    pub trajectory_stride: Option<u64>,
    /// Reward range used for the TS variance proxy; defaults to the
    /// instance's own range of means.
    pub mu_range: Option<(f64, f64)>,
    /// Keep sampling until `max_rounds` without testing the stopping rule.
    pub ignore_stopping: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            delta: 0.1,
            max_rounds: DEFAULT_MAX_ROUNDS,
            recompute_every: 1,
            trajectory_stride: None,
            mu_range: None,
            ignore_stopping: false,
        }
    }
}

impl RunConfig {
    pub fn new(delta: f64) -> Self {
        Self {
            delta,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Usage(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        if self.max_rounds < 1 {
            return Err(Error::Usage("max_rounds must be at least 1".into()));
        }
        if self.recompute_every < 1 {
            return Err(Error::Usage("recompute_every must be at least 1".into()));
        }
        if self.trajectory_stride == Some(0) {
            return Err(Error::Usage("trajectory stride must be positive".into()));
        }
        if let Some((lo, hi)) = self.mu_range {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::Usage(format!("invalid mu_range [{lo}, {hi}]")));
            }
        }
        Ok(())
    }
}

/// Snapshot stride at round `t`: the base stride, doubled each time `t`
/// passes `10^6 * 2^m`.
pub fn stride_at(base: u64, t: u64) -> u64 {
    let mut stride = base;
    let mut mark = 1_000_000u64;
    while t > mark {
        stride = stride.saturating_mul(2);
        mark = mark.saturating_mul(2);
    }
    stride
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Snapshot {
    pub round: u64,
    pub arm_freq: Vec<f64>,
    pub context_freq: Vec<f64>,
    pub lambda: f64,
    pub threshold: f64,
    /// Euclidean distance of the tracked frequencies to the true-instance
    /// target (context frequencies for separator instances, arm frequencies
    /// otherwise).
    pub dist_l2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunResult {
    pub algo: Algo,
    pub tau: u64,
    /// 0-based recommended arm; `None` if a truncated run ended without a
    /// unique empirical best.
    pub recommendation: Option<usize>,
    pub correct: bool,
    pub truncated: bool,
    pub final_lambda: f64,
    pub final_threshold: f64,
    /// Rounds at which the empirical best arm was not unique.
    pub non_unique_rounds: u64,
    pub seed: u64,
    pub stream: u64,
    pub trajectory: Vec<Snapshot>,
}

/// JSON form of a run with 1-based arm indices.
#[derive(Debug, Clone, Serialize)]
pub struct RunReport<'a> {
    pub algo: Algo,
    pub tau: u64,
    pub recommendation: Option<usize>,
    pub correct: bool,
    pub truncated: bool,
    pub final_lambda: f64,
    pub final_threshold: f64,
    pub non_unique_rounds: u64,
    pub seed: u64,
    pub stream: u64,
    pub trajectory: &'a [Snapshot],
}

impl RunResult {
    pub fn report(&self) -> RunReport<'_> {
        RunReport {
            algo: self.algo,
            tau: self.tau,
            recommendation: self.recommendation.map(|i| i + 1),
            correct: self.correct,
            truncated: self.truncated,
            final_lambda: self.final_lambda,
            final_threshold: self.final_threshold,
            non_unique_rounds: self.non_unique_rounds,
            seed: self.seed,
            stream: self.stream,
            trajectory: &self.trajectory,
        }
    }
}

/// D-tracking: force arms below `sqrt(t) - n/2` pulls, otherwise pull the arm
/// furthest behind `t * w_star`. Ties go to the lowest index.
pub fn d_track_next(state: &EmpiricalState, w_star: &[f64]) -> usize {
    let counts = state.arm_counts();
    let n = counts.len();
    let t = state.t() as f64;
    let floor = (t.sqrt() - n as f64 / 2.0).max(0.0);
    let mut forced: Option<usize> = None;
    for (i, &c) in counts.iter().enumerate() {
        if c as f64 <= floor && forced.is_none_or(|f| c < counts[f]) {
            forced = Some(i);
        }
    }
    if let Some(i) = forced {
        return i;
    }
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, (&c, &w)) in counts.iter().zip(w_star).enumerate() {
        let v = t * w - c as f64;
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}

/// G-tracking: shoot a ray from the observed context frequencies through the
/// target and play the arm mixture certifying the exit point.
pub fn g_track_next(
    state: &EmpiricalState,
    target: &ArmMixture,
    a: &crate::model::ContextMatrix,
    rng: &mut RngStream,
) -> usize {
    let freq = state.context_frequencies();
    let pi = match ray_exit(&freq, target.target.as_slice(), a) {
        Ok(exit) => exit.mixture.pi,
        // degenerate ray or numerical failure: any point of the segment will do
        Err(_) => target.pi.clone(),
    };
    rng.categorical(&pi)
}

fn l2(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

// Frequencies of the tracked quantity and their true target.
struct Tracker {
    stride: u64,
    target: Vec<f64>,
    contexts: bool,
}

impl Tracker {
    fn new(inst: &Instance, cfg: &RunConfig) -> Result<Option<Self>> {
        let Some(stride) = cfg.trajectory_stride else {
            return Ok(None);
        };
        let ct = characteristic_time(inst)?;
        Ok(Some(Self {
            stride,
            target: ct.weights.as_slice().to_vec(),
            contexts: inst.setting() == Setting::Separator,
        }))
    }

    fn due(&self, t: u64) -> bool {
        t > 0 && t % stride_at(self.stride, t) == 0
    }

    fn snapshot(&self, state: &EmpiricalState, lambda: f64, threshold: f64) -> Snapshot {
        let arm_freq = state.arm_frequencies();
        let context_freq = state.context_frequencies();
        let tracked = if self.contexts { &context_freq } else { &arm_freq };
        Snapshot {
            round: state.t(),
            dist_l2: l2(tracked, &self.target),
            arm_freq,
            context_freq,
            lambda,
            threshold,
        }
    }
}

// Per-algorithm hooks for the shared track-and-stop loop.
trait Agent {
    fn algo(&self) -> Algo;
    fn initialized(&self, state: &EmpiricalState) -> bool;
    fn init_arm(&self, state: &EmpiricalState) -> usize;
    /// GLR statistic, threshold and empirical best at the current state.
    fn test(&mut self, state: &EmpiricalState) -> Result<(f64, f64, Option<usize>)>;
    /// Next arm given a unique empirical best; `refresh` asks for new weights.
    fn track(&mut self, state: &EmpiricalState, refresh: bool, rng: &mut RngStream)
        -> Result<usize>;
}

fn run_loop(
    agent: &mut impl Agent,
    inst: &Instance,
    cfg: &RunConfig,
    rng: &mut RngStream,
) -> Result<RunResult> {
    cfg.validate()?;
    let tracker = Tracker::new(inst, cfg)?;
    let (k, n) = (inst.k(), inst.n());
    let mut state = EmpiricalState::new(k, n);
    let mut trajectory = Vec::new();
    let mut non_unique_rounds = 0;
    let mut last = (0.0, f64::INFINITY, None);
    let mut since_refresh = u64::MAX;
    let mut stopped = false;

    while state.t() < cfg.max_rounds && !agent.initialized(&state) {
        let arm = agent.init_arm(&state);
        let (z, y) = sample_step(inst, arm, rng)?;
        state.record(arm, z, y);
    }

    while agent.initialized(&state) {
        let t = state.t();
        let snap_due = tracker.as_ref().is_some_and(|tr| tr.due(t));
        if !cfg.ignore_stopping || snap_due || t >= cfg.max_rounds {
            last = agent.test(&state)?;
        }
        if snap_due {
            if let Some(tr) = &tracker {
                trajectory.push(tr.snapshot(&state, last.0, last.1));
            }
        }
        if !cfg.ignore_stopping && last.2.is_some() && last.0 > last.1 {
            stopped = true;
            break;
        }
        if t >= cfg.max_rounds {
            break;
        }
        let arm = if last.2.is_none() && !cfg.ignore_stopping {
            non_unique_rounds += 1;
            rng.random_range(0..n)
        } else {
            let refresh = since_refresh >= cfg.recompute_every;
            if refresh {
                since_refresh = 0;
            }
            since_refresh += 1;
            match agent.track(&state, refresh, rng) {
                Ok(arm) => arm,
                Err(Error::NoUniqueBestArm) => {
                    non_unique_rounds += 1;
                    rng.random_range(0..n)
                }
                Err(e) => return Err(e),
            }
        };
        let (z, y) = sample_step(inst, arm, rng)?;
        state.record(arm, z, y);
    }

    let recommendation = last.2;
    Ok(RunResult {
        algo: agent.algo(),
        tau: state.t(),
        recommendation,
        correct: recommendation == Some(inst.best_arm()),
        truncated: !stopped,
        final_lambda: last.0,
        final_threshold: last.1,
        non_unique_rounds,
        seed: rng.seed(),
        stream: rng.stream(),
        trajectory,
    })
}

fn rewards_of(a: &crate::model::ContextMatrix, mu: &MeanSpec) -> Vec<f64> {
    crate::model::expected_rewards(a, mu)
}

fn gaps_from(rewards: &[f64]) -> Result<Vec<f64>> {
    let best = unique_argmax(rewards).ok_or(Error::NoUniqueBestArm)?;
    Ok(rewards.iter().map(|r| rewards[best] - r).collect())
}

struct Nsts<'a> {
    inst: &'a Instance,
    delta: f64,
    weights: Vec<f64>,
    means: Option<MeanSpec>,
}

impl Agent for Nsts<'_> {
    fn algo(&self) -> Algo {
        Algo::Nsts
    }

    fn initialized(&self, state: &EmpiricalState) -> bool {
        state.cells_initialized()
    }

    fn init_arm(&self, state: &EmpiricalState) -> usize {
        let a = self.inst.a();
        let mut best = (0, f64::NEG_INFINITY);
        for i in 0..a.n() {
            let mass: f64 = (0..a.k())
                .filter(|&j| state.joint_count(j, i) == 0)
                .map(|j| a.get(j, i))
                .sum();
            if mass > best.1 {
                best = (i, mass);
            }
        }
        best.0
    }

    fn test(&mut self, state: &EmpiricalState) -> Result<(f64, f64, Option<usize>)> {
        let report = glr_nonsep(state, self.inst.a())?;
        self.means = Some(state.empirical_means(Setting::NonSeparator)?);
        let thr = threshold_nonsep(state.t(), self.delta, self.inst.n(), self.inst.k());
        Ok((report.lambda, thr, report.empirical_best))
    }

    fn track(&mut self, state: &EmpiricalState, refresh: bool, _: &mut RngStream) -> Result<usize> {
        if refresh || self.weights.is_empty() {
            let means = match self.means.take() {
                Some(m) => m,
                None => state.empirical_means(Setting::NonSeparator)?,
            };
            let gaps = gaps_from(&rewards_of(self.inst.a(), &means))?;
            self.weights = solve_nonsep_weights(&gaps)?.into_inner();
        }
        Ok(d_track_next(state, &self.weights))
    }
}

struct Sts<'a> {
    inst: &'a Instance,
    delta: f64,
    target: Option<ArmMixture>,
    means: Option<MeanSpec>,
}

const STS_SOLVER: SepOptions = SepOptions {
    tol: 1e-14,
    rel_tol: 1e-6,
    max_iter: 200,
};

impl Agent for Sts<'_> {
    fn algo(&self) -> Algo {
        Algo::Sts
    }

    fn initialized(&self, state: &EmpiricalState) -> bool {
        state.contexts_initialized()
    }

    fn init_arm(&self, state: &EmpiricalState) -> usize {
        let a = self.inst.a();
        let reach = |j: usize| (0..a.n()).map(|i| a.get(j, i)).fold(0.0, f64::max);
        let mut rarest: Option<(usize, f64)> = None;
        for j in (0..a.k()).filter(|&j| state.context_counts()[j] == 0) {
            let r = reach(j);
            if rarest.is_none_or(|(_, best)| r < best) {
                rarest = Some((j, r));
            }
        }
        let j = rarest.map_or(0, |(j, _)| j);
        let mut arm = 0;
        for i in 1..a.n() {
            if a.get(j, i) > a.get(j, arm) {
                arm = i;
            }
        }
        arm
    }

    fn test(&mut self, state: &EmpiricalState) -> Result<(f64, f64, Option<usize>)> {
        let report = glr_sep(state, self.inst.a())?;
        self.means = Some(state.empirical_means(Setting::Separator)?);
        let thr = threshold_sep(state, self.delta)?;
        Ok((report.lambda, thr, report.empirical_best))
    }

    fn track(&mut self, state: &EmpiricalState, refresh: bool, rng: &mut RngStream) -> Result<usize> {
        let a = self.inst.a();
        if refresh || self.target.is_none() {
            let means = match self.means.take() {
                Some(m) => m,
                None => state.empirical_means(Setting::Separator)?,
            };
            let problem = SepProblem::new(a, &rewards_of(a, &means))?;
            let warm = self.target.as_ref().map(|t| t.pi.as_slice());
            let sol = problem.solve(warm, STS_SOLVER);
            self.target = Some(ArmMixture {
                pi: sol.lambda,
                target: sol.wz,
            });
        }
        let target = self.target.as_ref().expect("target set above");
        Ok(g_track_next(state, target, a, rng))
    }
}

struct Ts<'a> {
    inst: &'a Instance,
    delta: f64,
    sigma2: f64,
    weights: Vec<f64>,
    means: Vec<f64>,
}

impl Agent for Ts<'_> {
    fn algo(&self) -> Algo {
        Algo::Ts
    }

    fn initialized(&self, state: &EmpiricalState) -> bool {
        state.arms_initialized()
    }

    fn init_arm(&self, state: &EmpiricalState) -> usize {
        state
            .arm_counts()
            .iter()
            .position(|&c| c == 0)
            .unwrap_or(0)
    }

    fn test(&mut self, state: &EmpiricalState) -> Result<(f64, f64, Option<usize>)> {
        self.means = state.arm_means()?;
        let report = glr_classic(state.arm_counts(), &self.means, self.sigma2)?;
        let thr = threshold_classic(state.t(), self.delta, self.inst.n());
        Ok((report.lambda, thr, report.empirical_best))
    }

    fn track(&mut self, state: &EmpiricalState, refresh: bool, _: &mut RngStream) -> Result<usize> {
        if refresh || self.weights.is_empty() {
            if self.means.is_empty() {
                self.means = state.arm_means()?;
            }
            let sigma = self.sigma2.sqrt();
            let gaps: Vec<f64> = gaps_from(&self.means)?.iter().map(|g| g / sigma).collect();
            self.weights = solve_nonsep_weights(&gaps)?.into_inner();
        }
        Ok(d_track_next(state, &self.weights))
    }
}

/// Non-separator track-and-stop. Separator instances are accepted too, since
/// they are a special case of the non-separator model.
pub fn nsts_run(inst: &Instance, cfg: &RunConfig, rng: &mut RngStream) -> Result<RunResult> {
    let mut agent = Nsts {
        inst,
        delta: cfg.delta,
        weights: Vec::new(),
        means: None,
    };
    run_loop(&mut agent, inst, cfg, rng)
}

/// Separator track-and-stop with geometric tracking.
pub fn sts_run(inst: &Instance, cfg: &RunConfig, rng: &mut RngStream) -> Result<RunResult> {
    if inst.setting() != Setting::Separator {
        return Err(Error::Usage("STS requires a separator instance".into()));
    }
    let mut agent = Sts {
        inst,
        delta: cfg.delta,
        target: None,
        means: None,
    };
    run_loop(&mut agent, inst, cfg, rng)
}

/// Classic track-and-stop on arm rewards only, ignoring contexts.
pub fn ts_baseline_run(inst: &Instance, cfg: &RunConfig, rng: &mut RngStream) -> Result<RunResult> {
    let (lo, hi) = cfg.mu_range.unwrap_or_else(|| inst.mean_range());
    let mut agent = Ts {
        inst,
        delta: cfg.delta,
        sigma2: classic_sigma2(lo, hi),
        weights: Vec::new(),
        means: Vec::new(),
    };
    run_loop(&mut agent, inst, cfg, rng)
}

pub fn run_algo(
    algo: Algo,
    inst: &Instance,
    cfg: &RunConfig,
    rng: &mut RngStream,
) -> Result<RunResult> {
    match algo {
        Algo::Nsts => nsts_run(inst, cfg, rng),
        Algo::Sts => sts_run(inst, cfg, rng),
        Algo::Ts => ts_baseline_run(inst, cfg, rng),
    }
}

/// Context distribution targeted by the solver for the true instance.
pub fn separator_target(inst: &Instance) -> Result<ContextDistribution> {
    if inst.setting() != Setting::Separator {
        return Err(Error::Usage("separator instance required".into()));
    }
    let p = SepProblem::new(inst.a(), &inst.expected_rewards())?;
    Ok(p.solve(None, SepOptions::default()).wz)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ContextMatrix;

    fn three_context() -> Instance {
        let a = ContextMatrix::from_rows(&[
            vec![0.9, 0.9, 0.1],
            vec![0.09, 0.01, 0.45],
            vec![0.01, 0.09, 0.45],
        ])
        .unwrap();
        Instance::new(a, MeanSpec::Separator(vec![1.0, 0.1, 0.3])).unwrap()
    }

    fn easy_nonsep() -> Instance {
        let a = ContextMatrix::from_rows(&[vec![0.5, 0.6, 0.3], vec![0.5, 0.4, 0.7]]).unwrap();
        let mu =
            MeanSpec::non_separator_from_rows(&[vec![10.0, 4.0, 0.0], vec![10.0, 5.0, -1.0]]).unwrap();
        Instance::new(a, mu).unwrap()
    }

    #[test]
    fn d_tracking_examples() {
        let s = EmpiricalState::from_cells(1, 2, vec![0, 4], vec![0.0, 0.0]).unwrap();
        assert_eq!(d_track_next(&s, &[0.5, 0.5]), 0);
        let s = EmpiricalState::from_cells(1, 2, vec![50, 50], vec![0.0, 0.0]).unwrap();
        assert_eq!(d_track_next(&s, &[0.75, 0.25]), 0);
        let s = EmpiricalState::from_cells(1, 3, vec![50, 25, 25], vec![0.0; 3]).unwrap();
        assert_eq!(d_track_next(&s, &[0.5, 0.25, 0.25]), 0);
    }

    #[test]
    fn g_tracking_example() {
        let a = ContextMatrix::with_zeros(&[
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ])
        .unwrap();
        let s = EmpiricalState::from_cells(3, 3, vec![1, 0, 0, 0, 1, 0, 0, 0, 1], vec![0.0; 9])
            .unwrap();
        let target = ArmMixture {
            pi: vec![0.2, 0.4, 0.4],
            target: ContextDistribution::new(vec![0.2, 0.4, 0.4]).unwrap(),
        };
        let mut rng = RngStream::new(3, 0);
        let mut hits = [0usize; 3];
        for _ in 0..2000 {
            hits[g_track_next(&s, &target, &a, &mut rng)] += 1;
        }
        assert_eq!(hits[0], 0);
        assert!(hits[1] > 800 && hits[2] > 800);
    }

    #[test]
    fn stride_doubles_after_a_million() {
        assert_eq!(stride_at(500, 1000), 500);
        assert_eq!(stride_at(500, 1_000_000), 500);
        assert_eq!(stride_at(500, 1_000_001), 1000);
        assert_eq!(stride_at(500, 2_000_001), 2000);
    }

    #[test]
    fn nsts_easy_instance() {
        let inst = easy_nonsep();
        let cfg = RunConfig::new(0.1);
        let mut correct = 0;
        for trial in 0..100 {
            let mut rng = RngStream::new(11, trial);
            let r = nsts_run(&inst, &cfg, &mut rng).unwrap();
            assert!(!r.truncated && r.tau < 10_000);
            assert!(r.final_lambda > r.final_threshold);
            correct += usize::from(r.correct);
        }
        assert!(correct >= 95);
    }

    #[test]
    fn runs_are_reproducible() {
        let inst = three_context();
        let mut cfg = RunConfig::new(0.1);
        cfg.trajectory_stride = Some(50);
        for algo in [Algo::Nsts, Algo::Sts, Algo::Ts] {
            let a = run_algo(algo, &inst, &cfg, &mut RngStream::new(5, 2)).unwrap();
            let b = run_algo(algo, &inst, &cfg, &mut RngStream::new(5, 2)).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn sts_stops_on_three_context() {
        let inst = three_context();
        let cfg = RunConfig::new(0.01);
        let r = sts_run(&inst, &cfg, &mut RngStream::new(1, 0)).unwrap();
        assert!(!r.truncated);
        assert_eq!(r.recommendation, Some(1));
        assert_eq!(r.report().recommendation, Some(2));
    }

    #[test]
    fn truncation_is_flagged() {
        let inst = three_context();
        let mut cfg = RunConfig::new(0.01);
        cfg.max_rounds = 20;
        let r = sts_run(&inst, &cfg, &mut RngStream::new(1, 0)).unwrap();
        assert!(r.truncated);
        assert_eq!(r.tau, 20);
    }

    #[test]
    fn sts_rejects_nonseparator() {
        let r = sts_run(&easy_nonsep(), &RunConfig::new(0.1), &mut RngStream::new(0, 0));
        assert!(matches!(r, Err(Error::Usage(_))));
    }
}
