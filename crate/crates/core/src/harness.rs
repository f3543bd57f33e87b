//! Multi-trial experiments, aggregation and CSV/JSON output.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algorithms::{run_algo, Algo, RunConfig, RunResult, DEFAULT_MAX_ROUNDS};
use crate::env::{gen_random_instance, GenConstraints, RngStream};
use crate::error::{Error, Result};
use crate::model::{Instance, Setting};
use crate::optim::{characteristic_time, d_bernoulli};

pub const SUMMARY_HEADER: [&str; 15] = [
    "instance_id",
    "algo",
    "n",
    "k",
    "delta",
    "trials",
    "mean_tau",
    "median_tau",
    "std_tau",
    "error_rate",
    "err_ci_lo",
    "err_ci_hi",
    "truncated",
    "t_star",
    "lower_bound",
];

pub const TRAJECTORY_HEADER: [&str; 4] = ["round", "mean_dist_l2", "mean_lambda", "mean_threshold"];

const WILSON_Z: f64 = 1.959_963_984_540_054;
const GEN_STREAM: u64 = 1 << 63;

fn default_delta() -> f64 {
    0.1
}

fn default_jobs() -> usize {
    1
}

fn default_stride() -> Option<u64> {
    Some(500)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateSpec {
    pub n: usize,
    pub k: usize,
    pub kind: Setting,
    pub count: usize,
    #[serde(default)]
    pub mu_range: Option<(f64, f64)>,
    #[serde(default)]
    pub a_min_floor: Option<f64>,
    #[serde(default)]
    pub gap_bands: Option<Vec<(f64, f64)>>,
    #[serde(default)]
    pub max_attempts: Option<usize>,
}

impl GenerateSpec {
    pub fn constraints(&self) -> GenConstraints {
        let mut c = GenConstraints::new(self.n, self.k);
        if let Some(r) = self.mu_range {
            c.mu_range = r;
        }
        if let Some(f) = self.a_min_floor {
            c.a_min_floor = f;
        }
        if let Some(b) = &self.gap_bands {
            c.gap_bands = b.clone();
        }
        if let Some(m) = self.max_attempts {
            c.max_attempts = m;
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum InstanceSource {
    Paths(Vec<PathBuf>),
    Generate(GenerateSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub instances: InstanceSource,
    pub algorithms: Vec<Algo>,
    #[serde(default = "default_delta")]
    pub delta: f64,
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_jobs")]
    pub jobs: usize,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub max_rounds: Option<u64>,
    #[serde(default)]
    pub recompute_every: Option<u64>,
    /// Snapshot stride, 500 by default; `null` disables trajectories.
    #[serde(default = "default_stride")]
    pub trajectory_stride: Option<u64>,
    /// Reward range for the TS variance proxy. Defaults to the generator's
    /// range for generated instances and to each instance's own range of
    /// means otherwise.
    #[serde(default)]
    pub ts_mu_range: Option<(f64, f64)>,
}

impl ExperimentConfig {
    /// Reads a JSON config; relative instance and output paths resolve against the
    /// config file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: Self = serde_json::from_str(&text).map_err(|e| {
            Error::Config(format!("{}: line {}: {e}", path.display(), e.line()))
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let InstanceSource::Paths(paths) = &mut cfg.instances {
            for p in paths.iter_mut() {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        if let Some(out) = cfg.out.as_mut().filter(|o| o.is_relative()) {
            *out = base.join(&*out);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.trials < 1 {
            return bad("trials must be at least 1".into());
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad(format!("delta must lie in (0, 1), got {}", self.delta));
        }
        if self.algorithms.is_empty() {
            return bad("no algorithms listed".into());
        }
        if self.jobs < 1 {
            return bad("jobs must be at least 1".into());
        }
        match &self.instances {
            InstanceSource::Paths(p) if p.is_empty() => return bad("no instance paths".into()),
            InstanceSource::Generate(g) => {
                if g.count < 1 {
                    return bad("instance count must be at least 1".into());
                }
                g.constraints().validate().map_err(|e| Error::Config(e.to_string()))?;
            }
            _ => {}
        }
        self.run_config(None).validate().map_err(|e| Error::Config(e.to_string()))
    }

    fn run_config(&self, ts_range: Option<(f64, f64)>) -> RunConfig {
        RunConfig {
            delta: self.delta,
            max_rounds: self.max_rounds.unwrap_or(DEFAULT_MAX_ROUNDS),
            recompute_every: self.recompute_every.unwrap_or(1),
            trajectory_stride: self.trajectory_stride,
            mu_range: self.ts_mu_range.or(ts_range),
            ignore_stopping: false,
        }
    }
}

/// Stream id of one run, independent of scheduling.
pub fn stream_id(instance: usize, algo: Algo, trial: usize) -> u64 {
    let code = match algo {
        Algo::Nsts => 0u64,
        Algo::Sts => 1,
        Algo::Ts => 2,
    };
    ((instance as u64) << 40) | (code << 32) | trial as u64
}

#[derive(Debug, Clone)]
pub struct NamedInstance {
    pub id: String,
    pub instance: Instance,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub instance_id: String,
    pub algo: Algo,
    pub trial: usize,
    pub stream: u64,
    pub outcome: std::result::Result<RunResult, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryPoint {
    pub round: u64,
    pub mean_dist_l2: f64,
    pub mean_lambda: f64,
    pub mean_threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialAggregate {
    pub instance_id: String,
    pub algo: Algo,
    pub n: usize,
    pub k: usize,
    pub delta: f64,
    pub trials: usize,
    /// Runs that returned a result (failed runs are excluded everywhere).
    pub completed: usize,
    pub failures: usize,
    pub mean_tau: f64,
    pub median_tau: f64,
    pub std_tau: f64,
    pub errors: usize,
    pub error_rate: f64,
    pub err_ci: (f64, f64),
    pub truncated: usize,
    pub t_star: f64,
    pub lower_bound: f64,
    pub trajectory: Vec<TrajectoryPoint>,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub instances: Vec<NamedInstance>,
    pub runs: Vec<RunRecord>,
    pub aggregates: Vec<TrialAggregate>,
}

impl ExperimentOutput {
    pub fn failures(&self) -> usize {
        self.runs.iter().filter(|r| r.outcome.is_err()).count()
    }
}

/// 95% Wilson score interval for `errors` out of `m`.
pub fn wilson_interval(errors: usize, m: usize) -> (f64, f64) {
    if m == 0 {
        return (0.0, 1.0);
    }
    let (e, m) = (errors as f64, m as f64);
    let p = e / m;
    let z2 = WILSON_Z * WILSON_Z;
    let denom = 1.0 + z2 / m;
    let centre = (p + z2 / (2.0 * m)) / denom;
    let half = WILSON_Z / denom * (p * (1.0 - p) / m + z2 / (4.0 * m * m)).sqrt();
    let lo = if errors == 0 { 0.0 } else { (centre - half).max(0.0) };
    let hi = if p == 1.0 { 1.0 } else { (centre + half).min(1.0) };
    (lo, hi)
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        f64::NAN
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let mu = mean(xs);
    (xs.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

fn load_instances(cfg: &ExperimentConfig) -> Result<(Vec<NamedInstance>, Option<(f64, f64)>)> {
    match &cfg.instances {
        InstanceSource::Paths(paths) => {
            let mut out = Vec::new();
            for p in paths {
                let instance = Instance::load(p)?;
                let stem = p
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| format!("inst{}", out.len() + 1));
                out.push(NamedInstance {
                    id: stem,
                    instance,
                });
            }
            Ok((out, None))
        }
        InstanceSource::Generate(g) => {
            let c = g.constraints();
            let out = (0..g.count)
                .map(|idx| {
                    let mut rng = RngStream::new(cfg.seed, GEN_STREAM | idx as u64);
                    gen_random_instance(&c, g.kind, &mut rng).map(|instance| NamedInstance {
                        id: format!("gen{:03}", idx + 1),
                        instance,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((out, Some(c.mu_range)))
        }
    }
}

fn aggregate(
    named: &NamedInstance,
    algo: Algo,
    cfg: &ExperimentConfig,
    runs: &[&RunRecord],
) -> Result<TrialAggregate> {
    let ok: Vec<&RunResult> = runs.iter().filter_map(|r| r.outcome.as_ref().ok()).collect();
    let taus: Vec<f64> = ok.iter().map(|r| r.tau as f64).collect();
    let stopped: Vec<&&RunResult> = ok.iter().filter(|r| !r.truncated).collect();
    let errors = stopped.iter().filter(|r| !r.correct).count();
    let error_rate = if stopped.is_empty() {
        0.0
    } else {
        errors as f64 / stopped.len() as f64
    };
    let t_star = characteristic_time(&named.instance)?.t_star;

    // snapshots share rounds across runs; average over runs still active
    let mut by_round: BTreeMap<u64, (f64, f64, f64, usize)> = BTreeMap::new();
    for r in &ok {
        for s in &r.trajectory {
            let e = by_round.entry(s.round).or_insert((0.0, 0.0, 0.0, 0));
            e.0 += s.dist_l2;
            e.1 += s.lambda;
            e.2 += s.threshold;
            e.3 += 1;
        }
    }
    let trajectory = by_round
        .into_iter()
        .map(|(round, (d, l, t, c))| {
            let c = c as f64;
            TrajectoryPoint {
                round,
                mean_dist_l2: d / c,
                mean_lambda: l / c,
                mean_threshold: t / c,
            }
        })
        .collect();

    Ok(TrialAggregate {
        instance_id: named.id.clone(),
        algo,
        n: named.instance.n(),
        k: named.instance.k(),
        delta: cfg.delta,
        trials: runs.len(),
        completed: ok.len(),
        failures: runs.len() - ok.len(),
        mean_tau: mean(&taus),
        median_tau: median(&taus),
        std_tau: sample_std(&taus),
        errors,
        error_rate,
        err_ci: wilson_interval(errors, stopped.len()),
        truncated: ok.iter().filter(|r| r.truncated).count(),
        t_star,
        lower_bound: t_star * d_bernoulli(cfg.delta)?,
        trajectory,
    })
}

/// Runs every (instance, algorithm, trial) combination on `cfg.jobs` threads.
/// Results do not depend on the thread count.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let (instances, gen_range) = load_instances(cfg)?;
    if cfg.algorithms.contains(&Algo::Sts) {
        if let Some(bad) = instances
            .iter()
            .find(|i| i.instance.setting() != Setting::Separator)
        {
            return Err(Error::Config(format!(
                "sts requires separator instances; '{}' is not one",
                bad.id
            )));
        }
    }
    let run_cfg = cfg.run_config(gen_range);
    let jobs: Vec<(usize, Algo, usize)> = (0..instances.len())
        .flat_map(|i| {
            cfg.algorithms
                .iter()
                .flat_map(move |&a| (0..cfg.trials).map(move |t| (i, a, t)))
        })
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let runs: Vec<RunRecord> = pool.install(|| {
        jobs.par_iter()
            .map(|&(i, algo, trial)| {
                let stream = stream_id(i, algo, trial);
                let mut rng = RngStream::new(cfg.seed, stream);
                let outcome = run_algo(algo, &instances[i].instance, &run_cfg, &mut rng)
                    .map_err(|e| e.to_string());
                RunRecord {
                    instance_id: instances[i].id.clone(),
                    algo,
                    trial,
                    stream,
                    outcome,
                }
            })
            .collect()
    });
    let mut aggregates = Vec::new();
    for (i, named) in instances.iter().enumerate() {
        for &algo in &cfg.algorithms {
            let group: Vec<&RunRecord> = runs
                .iter()
                .zip(&jobs)
                .filter(|(_, j)| j.0 == i && j.1 == algo)
                .map(|(r, _)| r)
                .collect();
            aggregates.push(aggregate(named, algo, cfg, &group)?);
        }
    }
    Ok(ExperimentOutput {
        instances,
        runs,
        aggregates,
    })
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Config(format!("{}: {other:?}", path.display())),
    }
}

/// Writes `summary.csv` into `dir`.
pub fn emit_csv(aggs: &[TrialAggregate], dir: &Path) -> Result<PathBuf> {
    let path = dir.join("summary.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| csv_err(&path, e))?;
    w.write_record(SUMMARY_HEADER).map_err(|e| csv_err(&path, e))?;
    for a in aggs {
        w.write_record([
            a.instance_id.clone(),
            a.algo.to_string(),
            a.n.to_string(),
            a.k.to_string(),
            a.delta.to_string(),
            a.trials.to_string(),
            a.mean_tau.to_string(),
            a.median_tau.to_string(),
            a.std_tau.to_string(),
            a.error_rate.to_string(),
            a.err_ci.0.to_string(),
            a.err_ci.1.to_string(),
            a.truncated.to_string(),
            a.t_star.to_string(),
            a.lower_bound.to_string(),
        ])
        .map_err(|e| csv_err(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Writes one `trajectory_<instance>_<algo>.csv` per aggregate that has
/// snapshots.
pub fn emit_trajectories(aggs: &[TrialAggregate], dir: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for a in aggs.iter().filter(|a| !a.trajectory.is_empty()) {
        let path = dir.join(format!("trajectory_{}_{}.csv", a.instance_id, a.algo));
        let mut w = csv::Writer::from_path(&path).map_err(|e| csv_err(&path, e))?;
        w.write_record(TRAJECTORY_HEADER).map_err(|e| csv_err(&path, e))?;
        for p in &a.trajectory {
            w.write_record([
                p.round.to_string(),
                p.mean_dist_l2.to_string(),
                p.mean_lambda.to_string(),
                p.mean_threshold.to_string(),
            ])
            .map_err(|e| csv_err(&path, e))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

#[derive(Serialize)]
struct RunLine<'a> {
    instance_id: &'a str,
    algo: Algo,
    trial: usize,
    stream: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    result: Option<crate::algorithms::RunReport<'a>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<&'a str>,
}

/// Writes the summary, trajectories, raw runs, instances and metadata.
pub fn write_outputs(out: &ExperimentOutput, cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    emit_csv(&out.aggregates, dir)?;
    emit_trajectories(&out.aggregates, dir)?;
    let inst_dir = dir.join("instances");
    fs::create_dir_all(&inst_dir).map_err(|e| Error::io(&inst_dir, e))?;
    for named in &out.instances {
        named.instance.save(inst_dir.join(format!("{}.json", named.id)))?;
    }
    let lines: Vec<RunLine> = out
        .runs
        .iter()
        .map(|r| RunLine {
            instance_id: &r.instance_id,
            algo: r.algo,
            trial: r.trial,
            stream: r.stream,
            result: r.outcome.as_ref().ok().map(RunResult::report),
            error: r.outcome.as_ref().err().map(String::as_str),
        })
        .collect();
    write_json(&dir.join("runs.json"), &lines)?;
    let generator = match &cfg.instances {
        InstanceSource::Generate(_) => serde_json::json!({
            "columns": "symmetric Dirichlet(1), rejected below the a_min floor",
            "non_separator_means": "uniform columns shifted so each gap hits a uniform draw in its band",
            "separator_means": "uniform context means, arms relabelled by reward, then an affine map into the gap bands",
        }),
        InstanceSource::Paths(_) => serde_json::Value::Null,
    };
    let meta = serde_json::json!({
        "crate_version": env!("CARGO_PKG_VERSION"),
        "config": cfg,
        "instances": out.instances.iter().map(|i| &i.id).collect::<Vec<_>>(),
        "generator": generator,
        "failures": out.failures(),
        "rng": "ChaCha8, stream = instance << 40 | algo << 32 | trial",
    });
    write_json(&dir.join("metadata.json"), &meta)
}
