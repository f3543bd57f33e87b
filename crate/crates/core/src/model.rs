//! Bandit instances, empirical statistics and best-arm bookkeeping.
//!
//! Arms and contexts are 0-based everywhere in the library. File formats and
//! CLI output use 1-based labels.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on column sums of a context matrix.
pub const COLUMN_SUM_TOL: f64 = 1e-12;
/// Two expected rewards closer than this are treated as tied.
pub const TIE_TOL: f64 = 1e-12;
/// Tolerance on the total mass of a weight vector or context distribution.
pub const SIMPLEX_TOL: f64 = 1e-10;

/// Known context probabilities, entry `(j, i)` is `P(Z = j | X = i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextMatrix {
    k: usize,
    n: usize,
    // row-major k x n
    data: Vec<f64>,
}

impl ContextMatrix {
    /// Builds a matrix from `k` rows of `n` entries each.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let k = rows.len();
        if k == 0 {
            return Err(Error::InvalidContextMatrix("need at least one context".into()));
        }
        let n = rows[0].len();
        if let Some((j, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != n) {
            return Err(Error::InvalidContextMatrix(format!(
                "row {} has {} entries, expected {n}",
                j + 1,
                r.len()
            )));
        }
        Self::from_row_major(k, n, rows.concat())
    }

    pub fn from_row_major(k: usize, n: usize, data: Vec<f64>) -> Result<Self> {
        Self::build(k, n, data, true)
    }

    /// Column-stochastic matrix that may contain zero entries. Only useful for
    /// pure geometry (hulls of simplex points); instances reject it.
    pub fn with_zeros(rows: &[Vec<f64>]) -> Result<Self> {
        let k = rows.len();
        let n = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidContextMatrix("ragged rows".into()));
        }
        Self::build(k, n, rows.concat(), false)
    }

    fn build(k: usize, n: usize, data: Vec<f64>, positive: bool) -> Result<Self> {
        if k < 1 {
            return Err(Error::InvalidContextMatrix("need at least one context".into()));
        }
        if n < 2 {
            return Err(Error::InvalidContextMatrix(format!("need at least two arms, got {n}")));
        }
        if data.len() != k * n {
            return Err(Error::InvalidContextMatrix(format!(
                "expected {} entries, got {}",
                k * n,
                data.len()
            )));
        }
        for j in 0..k {
            for i in 0..n {
                let v = data[j * n + i];
                if !v.is_finite() || v < 0.0 || (positive && v == 0.0) {
                    return Err(Error::InvalidContextMatrix(format!(
                        "entry ({}, {}) = {v} must be positive",
                        j + 1,
                        i + 1
                    )));
                }
            }
        }
        for i in 0..n {
            let s: f64 = (0..k).map(|j| data[j * n + i]).sum();
            if (s - 1.0).abs() > COLUMN_SUM_TOL {
                return Err(Error::InvalidContextMatrix(format!(
                    "column {} sums to {s}, expected 1",
                    i + 1
                )));
            }
        }
        Ok(Self { k, n, data })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, context: usize, arm: usize) -> f64 {
        self.data[context * self.n + arm]
    }

    pub fn column(&self, arm: usize) -> Vec<f64> {
        (0..self.k).map(|j| self.get(j, arm)).collect()
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.n).map(<[f64]>::to_vec).collect()
    }

    pub fn a_min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// `A * pi`, the context distribution induced by an arm mixture.
    pub fn mix(&self, pi: &[f64]) -> Vec<f64> {
        debug_assert_eq!(pi.len(), self.n);
        (0..self.k)
            .map(|j| {
                let row = &self.data[j * self.n..(j + 1) * self.n];
                row.iter().zip(pi).map(|(a, p)| a * p).sum()
            })
            .collect()
    }

    /// Same matrix with context labels permuted: row `j` of the result is row
    /// `perm[j]` of `self`.
    pub fn permute_contexts(&self, perm: &[usize]) -> Self {
        let data = perm
            .iter()
            .flat_map(|&j| self.data[j * self.n..(j + 1) * self.n].iter().copied())
            .collect();
        Self {
            k: self.k,
            n: self.n,
            data,
        }
    }
}

/// Mean rewards, either per (context, arm) cell or per context.
#[derive(Debug, Clone, PartialEq)]
pub enum MeanSpec {
    /// Row-major `k x n`; entry `(j, i)` is `E[Y | X = i, Z = j]`.
    NonSeparator { k: usize, n: usize, means: Vec<f64> },
    /// Entry `j` is `E[Y | Z = j]`.
    Separator(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    Separator,
    NonSeparator,
}

impl std::fmt::Display for Setting {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Setting::Separator => "separator",
            Setting::NonSeparator => "non_separator",
        })
    }
}

impl std::str::FromStr for Setting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "separator" | "sep" => Ok(Setting::Separator),
            "non_separator" | "non-separator" | "nonsep" => Ok(Setting::NonSeparator),
            other => Err(Error::Usage(format!("unknown instance kind `{other}`"))),
        }
    }
}

impl MeanSpec {
    pub fn non_separator_from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let k = rows.len();
        let n = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidMeans("ragged mean matrix".into()));
        }
        Ok(MeanSpec::NonSeparator {
            k,
            n,
            means: rows.concat(),
        })
    }

    pub fn setting(&self) -> Setting {
        match self {
            MeanSpec::NonSeparator { .. } => Setting::NonSeparator,
            MeanSpec::Separator(_) => Setting::Separator,
        }
    }

    /// Mean of cell `(context, arm)`.
    #[inline]
    pub fn cell(&self, context: usize, arm: usize) -> f64 {
        match self {
            MeanSpec::NonSeparator { n, means, .. } => means[context * n + arm],
            MeanSpec::Separator(m) => m[context],
        }
    }

    fn check_against(&self, a: &ContextMatrix) -> Result<()> {
        let values: &[f64] = match self {
            MeanSpec::NonSeparator { k, n, means } => {
                if *k != a.k() || *n != a.n() {
                    return Err(Error::InvalidMeans(format!(
                        "mean matrix is {k}x{n}, context matrix is {}x{}",
                        a.k(),
                        a.n()
                    )));
                }
                means
            }
            MeanSpec::Separator(m) => {
                if m.len() != a.k() {
                    return Err(Error::InvalidMeans(format!(
                        "mean vector has {} entries, expected {}",
                        m.len(),
                        a.k()
                    )));
                }
                m
            }
        };
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidMeans(format!("entry {} is not finite", pos + 1)));
        }
        Ok(())
    }

    pub fn permute_contexts(&self, perm: &[usize]) -> Self {
        match self {
            MeanSpec::NonSeparator { k, n, means } => MeanSpec::NonSeparator {
                k: *k,
                n: *n,
                means: perm
                    .iter()
                    .flat_map(|&j| means[j * n..(j + 1) * n].iter().copied())
                    .collect(),
            },
            MeanSpec::Separator(m) => MeanSpec::Separator(perm.iter().map(|&j| m[j]).collect()),
        }
    }
}

/// `A_i^T mu_i` for every arm.
pub fn expected_rewards(a: &ContextMatrix, mu: &MeanSpec) -> Vec<f64> {
    (0..a.n())
        .map(|i| (0..a.k()).map(|j| a.get(j, i) * mu.cell(j, i)).sum())
        .collect()
}

/// Unique argmax of `values`, or `None` when the top two are within [`TIE_TOL`].
pub fn unique_argmax(values: &[f64]) -> Option<usize> {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    let tied = values
        .iter()
        .enumerate()
        .any(|(i, &v)| i != best && values[best] - v <= TIE_TOL);
    (!tied).then_some(best)
}

pub fn best_arm_of(a: &ContextMatrix, mu: &MeanSpec) -> Result<usize> {
    unique_argmax(&expected_rewards(a, mu)).ok_or(Error::NoUniqueBestArm)
}

/// Gaps relative to the unique best arm; the best arm's own gap is exactly 0.
pub fn gaps_of(a: &ContextMatrix, mu: &MeanSpec) -> Result<Vec<f64>> {
    let r = expected_rewards(a, mu);
    let best = unique_argmax(&r).ok_or(Error::NoUniqueBestArm)?;
    Ok(r.iter()
        .enumerate()
        .map(|(i, &v)| if i == best { 0.0 } else { r[best] - v })
        .collect())
}

/// A bandit environment: known context matrix plus reward means.
///
/// Rewards are unit-variance Gaussian in every cell. Construction rejects
/// instances whose best arm is not unique.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    a: ContextMatrix,
    mu: MeanSpec,
    best: usize,
}

impl Instance {
    pub fn new(a: ContextMatrix, mu: MeanSpec) -> Result<Self> {
        if a.a_min() <= 0.0 {
            return Err(Error::InvalidContextMatrix(
                "every context needs positive probability under every arm".into(),
            ));
        }
        mu.check_against(&a)?;
        let best = best_arm_of(&a, &mu)?;
        Ok(Self { a, mu, best })
    }

    pub fn a(&self) -> &ContextMatrix {
        &self.a
    }

    pub fn mu(&self) -> &MeanSpec {
        &self.mu
    }

    pub fn setting(&self) -> Setting {
        self.mu.setting()
    }

    pub fn n(&self) -> usize {
        self.a.n()
    }

    pub fn k(&self) -> usize {
        self.a.k()
    }

    pub fn expected_reward(&self, arm: usize) -> Result<f64> {
        if arm >= self.n() {
            return Err(Error::ArmOutOfRange { arm, n: self.n() });
        }
        Ok((0..self.k()).map(|j| self.a.get(j, arm) * self.mu.cell(j, arm)).sum())
    }

    pub fn expected_rewards(&self) -> Vec<f64> {
        expected_rewards(&self.a, &self.mu)
    }

    pub fn best_arm(&self) -> usize {
        self.best
    }

    pub fn gaps(&self) -> Vec<f64> {
        gaps_of(&self.a, &self.mu).expect("instance has a unique best arm")
    }

    /// Smallest and largest mean over all cells.
    pub fn mean_range(&self) -> (f64, f64) {
        let values: Vec<f64> = match &self.mu {
            MeanSpec::NonSeparator { means, .. } => means.clone(),
            MeanSpec::Separator(m) => m.clone(),
        };
        values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    pub fn to_file(&self) -> InstanceFile {
        let mu = match &self.mu {
            MeanSpec::NonSeparator { n, means, .. } => {
                MeanValues::Matrix(means.chunks(*n).map(<[f64]>::to_vec).collect())
            }
            MeanSpec::Separator(m) => MeanValues::Vector(m.clone()),
        };
        InstanceFile {
            kind: self.setting(),
            n: self.n(),
            k: self.k(),
            a: self.a.rows(),
            mu,
            meta: None,
        }
    }

    /// Loads and validates an instance JSON file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text, &path.display().to_string())
    }

    /// Parses instance JSON; `origin` labels error messages.
    pub fn from_json_str(text: &str, origin: &str) -> Result<Self> {
        let file: InstanceFile = serde_json::from_str(text).map_err(|e| Error::Parse {
            path: origin.to_string(),
            line: e.line(),
            msg: e.to_string(),
        })?;
        file.into_instance().map_err(|e| {
            let key = match &e {
                Error::InvalidContextMatrix(_) => "\"A\"",
                Error::InvalidMeans(_) | Error::NoUniqueBestArm => "\"mu\"",
                _ => "\"n\"",
            };
            Error::Parse {
                path: origin.to_string(),
                line: line_of(text, key),
                msg: e.to_string(),
            }
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_file().save(path)
    }
}

fn line_of(text: &str, needle: &str) -> usize {
    text.find(needle)
        .map_or(1, |pos| text[..pos].matches('\n').count() + 1)
}

/// On-disk instance representation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstanceFile {
    pub kind: Setting,
    pub n: usize,
    pub k: usize,
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    pub mu: MeanValues,
    /// Free-form provenance, e.g. the generator scheme and seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<serde_json::Value>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MeanValues {
    Vector(Vec<f64>),
    Matrix(Vec<Vec<f64>>),
}

impl InstanceFile {
    pub fn into_instance(self) -> Result<Instance> {
        if self.a.len() != self.k {
            return Err(Error::InvalidContextMatrix(format!(
                "\"k\" is {} but A has {} rows",
                self.k,
                self.a.len()
            )));
        }
        if let Some((j, _)) = self.a.iter().enumerate().find(|(_, r)| r.len() != self.n) {
            return Err(Error::InvalidContextMatrix(format!(
                "row {} of A does not have n = {} entries",
                j + 1,
                self.n
            )));
        }
        let a = ContextMatrix::from_rows(&self.a)?;
        let mu = match (self.kind, self.mu) {
            (Setting::Separator, MeanValues::Vector(v)) => MeanSpec::Separator(v),
            (Setting::NonSeparator, MeanValues::Matrix(rows)) => {
                MeanSpec::non_separator_from_rows(&rows)?
            }
            (Setting::Separator, MeanValues::Matrix(_)) => {
                return Err(Error::InvalidMeans(
                    "separator instances need a mean vector of length k".into(),
                ))
            }
            (Setting::NonSeparator, MeanValues::Vector(_)) => {
                return Err(Error::InvalidMeans(
                    "non-separator instances need a k x n mean matrix".into(),
                ))
            }
        };
        Instance::new(a, mu)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("instance serializes");
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Simplex point over arms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WeightVector(Vec<f64>);

/// Simplex point over contexts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ContextDistribution(Vec<f64>);

fn check_simplex(v: &[f64], what: &str) -> Result<()> {
    if v.is_empty() {
        return Err(Error::Usage(format!("{what} is empty")));
    }
    if let Some(x) = v.iter().find(|x| !x.is_finite() || **x < 0.0) {
        return Err(Error::Usage(format!("{what} has invalid entry {x}")));
    }
    let s: f64 = v.iter().sum();
    if (s - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::Usage(format!("{what} sums to {s}")));
    }
    Ok(())
}

macro_rules! simplex_newtype {
    ($name:ident, $what:literal) => {
        impl $name {
            pub fn new(v: Vec<f64>) -> Result<Self> {
                check_simplex(&v, $what)?;
                Ok(Self(v))
            }

            /// Uniform distribution over `len` entries.
            pub fn uniform(len: usize) -> Self {
                Self(vec![1.0 / len as f64; len])
            }

            pub fn as_slice(&self) -> &[f64] {
                &self.0
            }

            pub fn into_inner(self) -> Vec<f64> {
                self.0
            }

            pub fn len(&self) -> usize {
                self.0.len()
            }

            pub fn is_empty(&self) -> bool {
                self.0.is_empty()
            }
        }

        impl std::ops::Index<usize> for $name {
            type Output = f64;
            fn index(&self, i: usize) -> &f64 {
                &self.0[i]
            }
        }
    };
}

simplex_newtype!(WeightVector, "weight vector");
simplex_newtype!(ContextDistribution, "context distribution");

impl WeightVector {
    pub(crate) fn new_unchecked(v: Vec<f64>) -> Self {
        Self(v)
    }
}

impl ContextDistribution {
    pub(crate) fn new_unchecked(v: Vec<f64>) -> Self {
        Self(v)
    }
}

/// Running counts and reward sums collected during a run.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalState {
    k: usize,
    n: usize,
    t: u64,
    n_x: Vec<u64>,
    n_z: Vec<u64>,
    // row-major k x n
    n_joint: Vec<u64>,
    cell_sums: Vec<f64>,
    context_sums: Vec<f64>,
    arm_sums: Vec<f64>,
}

impl EmpiricalState {
    pub fn new(k: usize, n: usize) -> Self {
        Self {
            k,
            n,
            t: 0,
            n_x: vec![0; n],
            n_z: vec![0; k],
            n_joint: vec![0; k * n],
            cell_sums: vec![0.0; k * n],
            context_sums: vec![0.0; k],
            arm_sums: vec![0.0; n],
        }
    }

    /// Builds a state directly from per-cell counts and reward sums
    /// (row-major `k x n`).
    pub fn from_cells(k: usize, n: usize, counts: Vec<u64>, sums: Vec<f64>) -> Result<Self> {
        if counts.len() != k * n || sums.len() != k * n {
            return Err(Error::Usage(format!("expected {} cells", k * n)));
        }
        let mut s = Self::new(k, n);
        for j in 0..k {
            for i in 0..n {
                let c = counts[j * n + i];
                let r = sums[j * n + i];
                s.n_joint[j * n + i] = c;
                s.cell_sums[j * n + i] = r;
                s.n_x[i] += c;
                s.n_z[j] += c;
                s.arm_sums[i] += r;
                s.context_sums[j] += r;
                s.t += c;
            }
        }
        Ok(s)
    }

    pub fn record(&mut self, arm: usize, context: usize, reward: f64) {
        let cell = context * self.n + arm;
        self.t += 1;
        self.n_x[arm] += 1;
        self.n_z[context] += 1;
        self.n_joint[cell] += 1;
        self.cell_sums[cell] += reward;
        self.context_sums[context] += reward;
        self.arm_sums[arm] += reward;
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn arm_counts(&self) -> &[u64] {
        &self.n_x
    }

    pub fn context_counts(&self) -> &[u64] {
        &self.n_z
    }

    #[inline]
    pub fn joint_count(&self, context: usize, arm: usize) -> u64 {
        self.n_joint[context * self.n + arm]
    }

    pub fn arm_sums(&self) -> &[f64] {
        &self.arm_sums
    }

    pub fn context_sums(&self) -> &[f64] {
        &self.context_sums
    }

    pub fn cells_initialized(&self) -> bool {
        self.n_joint.iter().all(|&c| c > 0)
    }

    pub fn contexts_initialized(&self) -> bool {
        self.n_z.iter().all(|&c| c > 0)
    }

    pub fn arms_initialized(&self) -> bool {
        self.n_x.iter().all(|&c| c > 0)
    }

    /// Empirical means in the given setting: per cell for non-separator,
    /// per context for separator.
    pub fn empirical_means(&self, setting: Setting) -> Result<MeanSpec> {
        match setting {
            Setting::NonSeparator => {
                if let Some(pos) = self.n_joint.iter().position(|&c| c == 0) {
                    return Err(Error::NotInitialized(format!(
                        "cell (context {}, arm {}) has no samples",
                        pos / self.n + 1,
                        pos % self.n + 1
                    )));
                }
                let means = self
                    .cell_sums
                    .iter()
                    .zip(&self.n_joint)
                    .map(|(s, &c)| s / c as f64)
                    .collect();
                Ok(MeanSpec::NonSeparator {
                    k: self.k,
                    n: self.n,
                    means,
                })
            }
            Setting::Separator => {
                if let Some(j) = self.n_z.iter().position(|&c| c == 0) {
                    return Err(Error::NotInitialized(format!(
                        "context {} has no samples",
                        j + 1
                    )));
                }
                Ok(MeanSpec::Separator(
                    self.context_sums
                        .iter()
                        .zip(&self.n_z)
                        .map(|(s, &c)| s / c as f64)
                        .collect(),
                ))
            }
        }
    }

    /// Per-arm sample means ignoring contexts.
    pub fn arm_means(&self) -> Result<Vec<f64>> {
        if let Some(i) = self.n_x.iter().position(|&c| c == 0) {
            return Err(Error::NotInitialized(format!("arm {} has no samples", i + 1)));
        }
        Ok(self
            .arm_sums
            .iter()
            .zip(&self.n_x)
            .map(|(s, &c)| s / c as f64)
            .collect())
    }

    pub fn arm_frequencies(&self) -> Vec<f64> {
        let t = self.t.max(1) as f64;
        self.n_x.iter().map(|&c| c as f64 / t).collect()
    }

    pub fn context_frequencies(&self) -> Vec<f64> {
        let t = self.t.max(1) as f64;
        self.n_z.iter().map(|&c| c as f64 / t).collect()
    }

    /// Checks the marginal identities between joint, arm and context counts.
    pub fn marginals_consistent(&self) -> bool {
        let arms_ok = (0..self.n)
            .all(|i| (0..self.k).map(|j| self.joint_count(j, i)).sum::<u64>() == self.n_x[i]);
        let ctx_ok = (0..self.k)
            .all(|j| (0..self.n).map(|i| self.joint_count(j, i)).sum::<u64>() == self.n_z[j]);
        arms_ok
            && ctx_ok
            && self.n_x.iter().sum::<u64>() == self.t
            && self.n_z.iter().sum::<u64>() == self.t
    }
}
