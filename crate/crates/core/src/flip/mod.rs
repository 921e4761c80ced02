//! Conclusion-flip and improvement-exaggeration Monte Carlo.
//!
//! Two evaluatables are compared on random `m`-class subsets of a large class
//! set. Each subset yields an observed gap `A1 - A2`; a flip is a negative gap
//! and an exaggeration a gap above `epsilon + delta`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ranking::{task_accuracies, Evaluatable};
use crate::rng::{derive_seed, stream, SimRng};
use crate::sampling::choose_distinct;
use crate::task::{EpisodeSpec, TaskDistribution, TaskKey};
use crate::universe::ClassId;

pub const DEFAULT_TRUE_TASKS: usize = 20_000;

/// Fixed per-class accuracy table; a task scores the mean accuracy of its
/// classes, so the expected score over uniform tuples of a class set is the
/// plain mean over that set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyticEvaluator {
    pub n_way: usize,
    pub accuracy: BTreeMap<ClassId, f64>,
}

impl AnalyticEvaluator {
    pub fn new(n_way: usize, accuracy: BTreeMap<ClassId, f64>) -> Result<Self> {
        if n_way == 0 {
            return Err(Error::config("n_way must be positive"));
        }
        if let Some((c, a)) = accuracy.iter().find(|(_, a)| !(0.0..=1.0).contains(*a)) {
            return Err(Error::config(format!("accuracy {a} of class {c} outside [0, 1]")));
        }
        Ok(AnalyticEvaluator { n_way, accuracy })
    }

    fn lookup(&self, c: ClassId) -> Result<f64> {
        self.accuracy.get(&c).copied().ok_or(Error::UnknownClass(c))
    }

    /// Mean table accuracy over `classes`.
    pub fn mean_over(&self, classes: &[ClassId]) -> Result<f64> {
        let mut s = 0.0;
        for &c in classes {
            s += self.lookup(c)?;
        }
        Ok(s / classes.len() as f64)
    }
}

impl Evaluatable for AnalyticEvaluator {
    fn n_way(&self) -> usize {
        self.n_way
    }

    fn task_accuracy(&self, task: &TaskKey, _rng: &mut SimRng) -> Result<f64> {
        match task {
            TaskKey::Classes(t) => self.mean_over(t.classes()),
            TaskKey::Attributes(_) => Err(Error::config("analytic evaluator scores class tasks only")),
        }
    }

    fn exact_accuracy(&self, classes: &[ClassId]) -> Option<f64> {
        self.mean_over(classes).ok()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeterogeneousModel {
    pub base_accuracy: f64,
    /// Half-width of the uniform per-class accuracy jitter of the first evaluatable.
    pub accuracy_jitter: f64,
    /// Half-width of the uniform per-class gap deviation.
    pub gap_spread: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for HeterogeneousModel {
    fn default() -> Self {
        HeterogeneousModel {
            base_accuracy: 0.6,
            accuracy_jitter: 0.1,
            gap_spread: 0.1,
            epsilon: 0.01,
            seed: 0,
        }
    }
}

/// Pair of analytic evaluatables whose per-class gaps vary from class to class
/// but average to exactly `epsilon` over `classes`.
pub fn heterogeneous_pair(
    classes: &[ClassId],
    n_way: usize,
    model: &HeterogeneousModel,
) -> Result<(AnalyticEvaluator, AnalyticEvaluator)> {
    if classes.is_empty() {
        return Err(Error::config("heterogeneous model needs at least one class"));
    }
    let mut rng = stream(model.seed, "flip-model", 0);
    let first: Vec<f64> = classes
        .iter()
        .map(|_| model.base_accuracy + model.accuracy_jitter * (2.0 * rng.random::<f64>() - 1.0))
        .collect();
    let mut dev: Vec<f64> = classes.iter().map(|_| model.gap_spread * (2.0 * rng.random::<f64>() - 1.0)).collect();
    let mean = dev.iter().sum::<f64>() / dev.len() as f64;
    dev.iter_mut().for_each(|d| *d -= mean);
    let a1: BTreeMap<ClassId, f64> = classes.iter().copied().zip(first.iter().copied()).collect();
    let a2: BTreeMap<ClassId, f64> = classes
        .iter()
        .zip(first.iter().zip(&dev))
        .map(|(&c, (&a, &d))| (c, a - model.epsilon - d))
        .collect();
    Ok((AnalyticEvaluator::new(n_way, a1)?, AnalyticEvaluator::new(n_way, a2)?))
}

/// Mean accuracy over `n_tasks` uniform tuples of `large_set`.
pub fn true_performance<V: Evaluatable + ?Sized>(eval: &V, large_set: &[ClassId], n_tasks: usize, seed: u64) -> Result<f64> {
    if large_set.len() < eval.n_way() {
        return Err(Error::InsufficientClasses {
            needed: eval.n_way(),
            available: large_set.len(),
        });
    }
    let dist = TaskDistribution::uniform(large_set.to_vec())?;
    crate::ranking::estimate_gen(eval, &dist, n_tasks, seed).map(|e| e.mean_acc)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GapMode {
    /// Both evaluatables scored on the same `tasks_per_eval` sampled tasks.
    #[default]
    Sampled,
    /// Closed-form expected accuracy of each evaluatable on the subset.
    Exact,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubsetMode {
    /// `repeats` subsets drawn uniformly without replacement.
    #[default]
    Random,
    /// Every `m`-subset once, in lexicographic order; `repeats` is ignored.
    Exhaustive,
}

fn default_true_tasks() -> usize {
    DEFAULT_TRUE_TASKS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlipConfig {
    pub large_set: Vec<ClassId>,
    pub subset_size: usize,
    pub repeats: usize,
    pub tasks_per_eval: usize,
    pub epsilon: f64,
    pub delta: f64,
    pub spec: EpisodeSpec,
    #[serde(default)]
    pub gap_mode: GapMode,
    #[serde(default)]
    pub subsets: SubsetMode,
    /// Tasks used to measure the true gap on the large set when no closed form exists.
    #[serde(default = "default_true_tasks")]
    pub true_tasks: usize,
    pub seed: u64,
}

impl FlipConfig {
    pub fn validate(&self) -> Result<()> {
        let l = self.large_set.len();
        let m = self.subset_size;
        if m < self.spec.n_way {
            return Err(Error::config(format!(
                "subset size {m} is smaller than n_way {}",
                self.spec.n_way
            )));
        }
        if m > l {
            return Err(Error::InsufficientClasses { needed: m, available: l });
        }
        if self.repeats == 0 && self.subsets == SubsetMode::Random {
            return Err(Error::config("repeats must be at least 1"));
        }
        if self.tasks_per_eval == 0 && self.gap_mode == GapMode::Sampled {
            return Err(Error::config("tasks_per_eval must be at least 1"));
        }
        if !(self.delta >= 0.0) {
            return Err(Error::config("delta must be non-negative"));
        }
        TaskDistribution::uniform(self.large_set.clone())?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlipReport {
    pub flip_freq: f64,
    pub exaggeration_freq: f64,
    pub gap_samples: Vec<f64>,
    pub true_gap: f64,
}

impl FlipReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn mean_gap(&self) -> f64 {
        self.gap_samples.iter().sum::<f64>() / self.gap_samples.len() as f64
    }
}

/// All `m`-subsets of `0..l` in lexicographic order.
pub fn subsets_lex(l: usize, m: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if m > l {
        return out;
    }
    let mut idx: Vec<usize> = (0..m).collect();
    loop {
        out.push(idx.clone());
        let Some(i) = (0..m).rev().find(|&i| idx[i] < l - m + i) else {
            return out;
        };
        idx[i] += 1;
        for j in i + 1..m {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

fn subset_gap<A: Evaluatable + ?Sized, B: Evaluatable + ?Sized>(
    e1: &A,
    e2: &B,
    subset: &[ClassId],
    config: &FlipConfig,
    task_seed: u64,
) -> Result<f64> {
    match config.gap_mode {
        GapMode::Exact => {
            let missing = || Error::config("exact gap mode needs evaluatables with closed-form accuracy");
            Ok(e1.exact_accuracy(subset).ok_or_else(missing)? - e2.exact_accuracy(subset).ok_or_else(missing)?)
        }
        GapMode::Sampled => {
            let dist = TaskDistribution::uniform(subset.to_vec())?;
            let a = task_accuracies(e1, &dist, config.tasks_per_eval, task_seed)?;
            let b = task_accuracies(e2, &dist, config.tasks_per_eval, task_seed)?;
            // Pairwise differences keep identical evaluatables at exactly zero.
            Ok(a.iter().zip(&b).map(|(x, y)| x - y).sum::<f64>() / a.len() as f64)
        }
    }
}

pub fn flip_experiment<A: Evaluatable + ?Sized, B: Evaluatable + ?Sized>(
    e1: &A,
    e2: &B,
    config: &FlipConfig,
) -> Result<FlipReport> {
    config.validate()?;
    if e1.n_way() != config.spec.n_way || e2.n_way() != config.spec.n_way {
        return Err(Error::config("evaluatables and episode spec disagree on n_way"));
    }
    let large = &config.large_set;
    let m = config.subset_size;
    let subsets: Vec<Vec<ClassId>> = match config.subsets {
        SubsetMode::Exhaustive => {
            let mut sorted = large.clone();
            sorted.sort_unstable();
            subsets_lex(sorted.len(), m)
                .into_iter()
                .map(|idx| idx.into_iter().map(|i| sorted[i]).collect())
                .collect()
        }
        SubsetMode::Random => (0..config.repeats as u64)
            .into_par_iter()
            .map(|r| {
                let mut s = choose_distinct(large, m, &mut stream(config.seed, "flip-subset", r));
                s.sort_unstable();
                s
            })
            .collect(),
    };
    let gap_samples: Vec<f64> = subsets
        .par_iter()
        .enumerate()
        .map(|(r, s)| subset_gap(e1, e2, s, config, derive_seed(config.seed, "flip-tasks", r as u64)))
        .collect::<Result<_>>()?;
    let true_gap = match (e1.exact_accuracy(large), e2.exact_accuracy(large)) {
        (Some(a), Some(b)) => a - b,
        _ => {
            let seed = derive_seed(config.seed, "flip-true", 0);
            true_performance(e1, large, config.true_tasks, seed)? - true_performance(e2, large, config.true_tasks, seed)?
        }
    };
    let r = gap_samples.len() as f64;
    let flips = gap_samples.iter().filter(|&&g| g < 0.0).count();
    let exaggerations = gap_samples.iter().filter(|&&g| g > config.epsilon + config.delta).count();
    Ok(FlipReport {
        flip_freq: flips as f64 / r,
        exaggeration_freq: exaggerations as f64 / r,
        gap_samples,
        true_gap,
    })
}

/// Empirical CDF of the gap samples: one `(gap, fraction <= gap)` point per
/// distinct gap value, in increasing order.
pub fn gap_cdf(report: &FlipReport) -> Vec<(f64, f64)> {
    let mut g = report.gap_samples.clone();
    g.sort_by(f64::total_cmp);
    let n = g.len() as f64;
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (i, &v) in g.iter().enumerate() {
        let frac = (i + 1) as f64 / n;
        match out.last_mut() {
            Some(last) if last.0 == v => last.1 = frac,
            _ => out.push((v, frac)),
        }
    }
    out
}

pub fn gap_cdf_csv(report: &FlipReport) -> String {
    let mut out = String::from("gap,cumulative_fraction\n");
    for (g, f) in gap_cdf(report) {
        writeln!(out, "{g},{f}").unwrap();
    }
    out
}
