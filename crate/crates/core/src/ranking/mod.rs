//! Generalization estimates, snapshot rankings and snapshot selection.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learners::{adapt, classify, EmbeddingParams, LearnerKind, Snapshot, SnapshotTrajectory};
use crate::rng::{stream, SimRng};
use crate::task::{EpisodeSource, EpisodeSpec, SupportSampler, TaskDistribution, TaskKey};
use crate::universe::ClassId;

/// Distribution names used by the selection strategies.
pub const BASE_GEN: &str = "base_gen";
pub const VAL_GEN: &str = "val_gen";
pub const NOVEL_GEN: &str = "novel_gen";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenEstimate {
    pub mean_acc: f64,
    pub ci95_halfwidth: f64,
    pub n_tasks: usize,
}

impl GenEstimate {
    /// Mean and normal-approximation 95% half-width `1.96 s / sqrt(n)` of
    /// per-task accuracies, summed in order.
    pub fn from_samples(acc: &[f64]) -> Result<Self> {
        let n = acc.len();
        if n < 2 {
            return Err(Error::config(format!("need at least 2 tasks for an estimate, got {n}")));
        }
        let mean = acc.iter().sum::<f64>() / n as f64;
        let var = acc.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        Ok(GenEstimate {
            mean_acc: mean,
            ci95_halfwidth: 1.96 * var.sqrt() / (n as f64).sqrt(),
            n_tasks: n,
        })
    }
}

/// Anything that can be scored on a task: an adapted learner, or an analytic
/// accuracy table.
pub trait Evaluatable: Sync {
    fn n_way(&self) -> usize;

    /// Accuracy on `task`; `rng` is the task's own stream, used for drawing
    /// the episode.
    fn task_accuracy(&self, task: &TaskKey, rng: &mut SimRng) -> Result<f64>;

    /// Expected accuracy over uniform tuples of `classes`, when known in
    /// closed form.
    fn exact_accuracy(&self, _classes: &[ClassId]) -> Option<f64> {
        None
    }
}

/// A learner snapshot evaluated on freshly sampled episodes.
pub struct LearnerEvaluator<'a, E: EpisodeSource + ?Sized> {
    pub kind: &'a LearnerKind,
    pub params: &'a EmbeddingParams,
    pub source: &'a E,
    pub spec: EpisodeSpec,
    pub sampler: &'a SupportSampler,
}

impl<E: EpisodeSource + ?Sized> Evaluatable for LearnerEvaluator<'_, E> {
    fn n_way(&self) -> usize {
        self.spec.n_way
    }

    fn task_accuracy(&self, task: &TaskKey, rng: &mut SimRng) -> Result<f64> {
        let ep = self.source.episode(task, &self.spec, self.sampler, rng)?;
        let clf = adapt(self.kind, self.params, &ep.support, ep.n_way)?;
        Ok(classify(&clf, &ep.query, self.params.scale)?.accuracy)
    }
}

/// Per-task accuracies over `n_tasks` tasks. Task `t` and its episode come
/// from stream `(seed, "task", t)`, so two evaluatables given the same seed
/// see the same tasks.
pub fn task_accuracies<V: Evaluatable + ?Sized>(
    eval: &V,
    dist: &TaskDistribution,
    n_tasks: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    (0..n_tasks as u64)
        .into_par_iter()
        .map(|t| {
            let mut rng = stream(seed, "task", t);
            let task = dist.sample(eval.n_way(), &mut rng)?;
            eval.task_accuracy(&task, &mut rng)
        })
        .collect()
}

pub fn estimate_gen<V: Evaluatable + ?Sized>(
    eval: &V,
    dist: &TaskDistribution,
    n_tasks: usize,
    seed: u64,
) -> Result<GenEstimate> {
    if n_tasks < 2 {
        return Err(Error::config(format!("n_tasks must be at least 2, got {n_tasks}")));
    }
    GenEstimate::from_samples(&task_accuracies(eval, dist, n_tasks, seed)?)
}

/// A named task distribution together with the source its episodes come from.
pub struct EvalTarget<'a> {
    pub name: String,
    pub dist: TaskDistribution,
    pub source: &'a dyn EpisodeSource,
}

/// Evaluate every snapshot on every target. All snapshots and targets use the
/// same task seed.
pub fn evaluate_trajectory(
    trajectory: &mut SnapshotTrajectory,
    kind: &LearnerKind,
    targets: &[EvalTarget<'_>],
    spec: EpisodeSpec,
    n_tasks: usize,
    seed: u64,
) -> Result<()> {
    let sampler = SupportSampler::Standard;
    let mut evaluations = Vec::with_capacity(trajectory.snapshots.len());
    for snap in &trajectory.snapshots {
        let mut row = BTreeMap::new();
        for target in targets {
            let eval = LearnerEvaluator {
                kind,
                params: &snap.params,
                source: target.source,
                spec,
                sampler: &sampler,
            };
            row.insert(target.name.clone(), estimate_gen(&eval, &target.dist, n_tasks, seed)?);
        }
        evaluations.push(row);
    }
    trajectory.evaluations = evaluations;
    Ok(())
}

/// Kendall tau-b between two score lists.
pub fn kendall_tau(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    if a.len() < 2 {
        return Err(Error::UndefinedCorrelation("fewer than two items"));
    }
    if a.iter().chain(b).any(|x| x.is_nan()) {
        return Err(Error::UndefinedCorrelation("scores contain NaN"));
    }
    let (mut concordant, mut discordant, mut ties_a, mut ties_b) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..a.len() {
        for j in i + 1..a.len() {
            let da = a[i].partial_cmp(&a[j]).unwrap();
            let db = b[i].partial_cmp(&b[j]).unwrap();
            use std::cmp::Ordering::Equal;
            match (da, db) {
                (Equal, Equal) => {
                    ties_a += 1;
                    ties_b += 1;
                }
                (Equal, _) => ties_a += 1,
                (_, Equal) => ties_b += 1,
                _ if da == db => concordant += 1,
                _ => discordant += 1,
            }
        }
    }
    let pairs = (a.len() * (a.len() - 1) / 2) as i64;
    let denom = (((pairs - ties_a) * (pairs - ties_b)) as f64).sqrt();
    if denom == 0.0 {
        return Err(Error::UndefinedCorrelation("a score list is entirely tied"));
    }
    Ok((concordant - discordant) as f64 / denom)
}

fn mean_on(trajectory: &SnapshotTrajectory, index: usize, dist: &str) -> Result<f64> {
    trajectory
        .evaluations
        .get(index)
        .and_then(|row| row.get(dist))
        .map(|e| e.mean_acc)
        .ok_or_else(|| Error::MissingEstimate {
            distribution: dist.to_string(),
            epoch: trajectory.snapshots[index].epoch,
        })
}

/// Kendall tau between snapshot rankings under two distributions, over the
/// last `tail_window` snapshots.
pub fn rank_similarity_report(trajectory: &SnapshotTrajectory, dist_a: &str, dist_b: &str, tail_window: usize) -> Result<f64> {
    let len = trajectory.snapshots.len();
    if tail_window < 2 || tail_window > len {
        return Err(Error::config(format!(
            "tail window {tail_window} must lie in [2, {len}]"
        )));
    }
    let range = len - tail_window..len;
    let a = range.clone().map(|i| mean_on(trajectory, i, dist_a)).collect::<Result<Vec<_>>>()?;
    let b = range.map(|i| mean_on(trajectory, i, dist_b)).collect::<Result<Vec<_>>>()?;
    kendall_tau(&a, &b)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionStrategy {
    LastSnapshot,
    BestTrainLoss,
    BestBaseGen,
    BestValGen,
}

/// Index of the snapshot chosen by `strategy`; ties go to the earliest epoch.
pub fn select_index(trajectory: &SnapshotTrajectory, strategy: SelectionStrategy) -> Result<usize> {
    let len = trajectory.snapshots.len();
    if len == 0 {
        return Err(Error::config("trajectory has no snapshots"));
    }
    // Index of the first maximum of `key`.
    let first_max = |key: &dyn Fn(usize) -> Result<f64>| -> Result<usize> {
        let mut best = (0, key(0)?);
        for i in 1..len {
            let k = key(i)?;
            if k > best.1 {
                best = (i, k);
            }
        }
        Ok(best.0)
    };
    match strategy {
        SelectionStrategy::LastSnapshot => Ok(len - 1),
        SelectionStrategy::BestTrainLoss => first_max(&|i| Ok(-trajectory.snapshots[i].train_loss)),
        SelectionStrategy::BestBaseGen => first_max(&|i| mean_on(trajectory, i, BASE_GEN)),
        SelectionStrategy::BestValGen => first_max(&|i| mean_on(trajectory, i, VAL_GEN)),
    }
}

pub fn select_snapshot(trajectory: &SnapshotTrajectory, strategy: SelectionStrategy) -> Result<&Snapshot> {
    select_index(trajectory, strategy).map(|i| &trajectory.snapshots[i])
}

/// `epoch,train_loss` followed by `<dist>_mean,<dist>_ci95` for every
/// evaluated distribution (sorted by name).
pub fn trajectory_csv(trajectory: &SnapshotTrajectory) -> Result<String> {
    let names: Vec<&String> = trajectory.evaluations.first().map(|r| r.keys().collect()).unwrap_or_default();
    if trajectory.evaluations.len() != trajectory.snapshots.len() && !trajectory.evaluations.is_empty() {
        return Err(Error::LengthMismatch(trajectory.evaluations.len(), trajectory.snapshots.len()));
    }
    let mut out = String::from("epoch,train_loss");
    for n in &names {
        write!(out, ",{n}_mean,{n}_ci95").unwrap();
    }
    out.push('\n');
    for (i, s) in trajectory.snapshots.iter().enumerate() {
        write!(out, "{},{}", s.epoch, s.train_loss).unwrap();
        for n in &names {
            let e = trajectory.evaluations[i].get(*n).ok_or_else(|| Error::MissingEstimate {
                distribution: n.to_string(),
                epoch: s.epoch,
            })?;
            write!(out, ",{},{}", e.mean_acc, e.ci95_halfwidth).unwrap();
        }
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::universe::{generate_universe, UniverseConfig};
    use rand::Rng;

    #[test]
    fn kendall_examples() {
        assert_eq!(kendall_tau(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap(), 1.0);
        assert_eq!(kendall_tau(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(), -1.0);
        assert!((kendall_tau(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!(matches!(kendall_tau(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), Err(Error::UndefinedCorrelation(_))));
        assert!(kendall_tau(&[1.0], &[1.0]).is_err());
        assert!(kendall_tau(&[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn kendall_tau_b_with_ties() {
        // a = [1,1,2,3], b = [1,2,2,3]: C=4, D=0, ties_a=1, ties_b=1 -> 4/5.
        let t = kendall_tau(&[1.0, 1.0, 2.0, 3.0], &[1.0, 2.0, 2.0, 3.0]).unwrap();
        assert!((t - 0.8).abs() < 1e-15);
    }

    fn snapshot(epoch: usize, loss: f64) -> Snapshot {
        Snapshot {
            epoch,
            params: EmbeddingParams::identity(1, 1.0).unwrap(),
            train_loss: loss,
        }
    }

    fn est(m: f64) -> GenEstimate {
        GenEstimate { mean_acc: m, ci95_halfwidth: 0.0, n_tasks: 2 }
    }

    fn trajectory(base: &[f64], val: &[f64], novel: &[f64]) -> SnapshotTrajectory {
        SnapshotTrajectory {
            snapshots: (0..val.len()).map(|i| snapshot(i + 1, 1.0 / (i + 1) as f64)).collect(),
            evaluations: (0..val.len())
                .map(|i| {
                    BTreeMap::from([
                        (BASE_GEN.to_string(), est(base[i])),
                        (VAL_GEN.to_string(), est(val[i])),
                        (NOVEL_GEN.to_string(), est(novel[i])),
                    ])
                })
                .collect(),
        }
    }

    #[test]
    fn selection_strategies() {
        let val = [0.3, 0.5, 0.7, 0.6, 0.6, 0.5, 0.4, 0.4, 0.4, 0.4];
        let novel = [0.2, 0.3, 0.4, 0.5, 0.6, 0.6, 0.6, 0.6, 0.6, 0.7];
        let t = trajectory(&val, &val, &novel);
        assert_eq!(select_snapshot(&t, SelectionStrategy::BestValGen).unwrap().epoch, 3);
        assert_eq!(select_snapshot(&t, SelectionStrategy::LastSnapshot).unwrap().epoch, 10);
        assert_eq!(select_snapshot(&t, SelectionStrategy::BestTrainLoss).unwrap().epoch, 10);
        assert_ne!(select_index(&t, SelectionStrategy::BestValGen).unwrap(), 9);
        let single = trajectory(&[0.5], &[0.5], &[0.5]);
        for s in [SelectionStrategy::LastSnapshot, SelectionStrategy::BestTrainLoss, SelectionStrategy::BestBaseGen, SelectionStrategy::BestValGen] {
            assert_eq!(select_index(&single, s).unwrap(), 0);
        }
    }

    #[test]
    fn selection_ties_go_early_and_missing_errors() {
        let t = trajectory(&[0.5, 0.5], &[0.4, 0.4], &[0.0, 0.0]);
        assert_eq!(select_index(&t, SelectionStrategy::BestValGen).unwrap(), 0);
        let mut bare = t.clone();
        bare.evaluations.clear();
        assert!(matches!(select_index(&bare, SelectionStrategy::BestValGen), Err(Error::MissingEstimate { .. })));
        assert_eq!(select_index(&bare, SelectionStrategy::LastSnapshot).unwrap(), 1);
    }

    #[test]
    fn rank_similarity() {
        let t = trajectory(&[0.1, 0.2, 0.3], &[0.1, 0.5, 0.4], &[0.1, 0.3, 0.6]);
        assert_eq!(rank_similarity_report(&t, VAL_GEN, VAL_GEN, 3).unwrap(), 1.0);
        assert_eq!(rank_similarity_report(&t, VAL_GEN, NOVEL_GEN, 2).unwrap(), -1.0);
        assert!(rank_similarity_report(&t, VAL_GEN, NOVEL_GEN, 4).is_err());
        assert!(rank_similarity_report(&t, VAL_GEN, "other", 2).is_err());
    }

    /// Each task scores the mean of five Bernoulli(p) trials.
    struct Coin(f64);

    impl Evaluatable for Coin {
        fn n_way(&self) -> usize {
            2
        }

        fn task_accuracy(&self, _: &TaskKey, rng: &mut SimRng) -> Result<f64> {
            Ok((0..5).filter(|_| rng.random_bool(self.0)).count() as f64 / 5.0)
        }
    }

    #[test]
    fn ci_covers_true_mean() {
        let d = TaskDistribution::uniform(vec![0, 1, 2]).unwrap();
        let covered = (0..100)
            .filter(|&r| {
                let e = estimate_gen(&Coin(0.7), &d, 200, r).unwrap();
                (e.mean_acc - 0.7).abs() <= e.ci95_halfwidth
            })
            .count();
        assert!(covered >= 90, "{covered}");
    }

    #[test]
    fn estimates_are_reproducible() {
        let d = TaskDistribution::uniform(vec![0, 1, 2]).unwrap();
        assert_eq!(estimate_gen(&Coin(0.4), &d, 300, 8).unwrap(), estimate_gen(&Coin(0.4), &d, 300, 8).unwrap());
        assert!(estimate_gen(&Coin(0.4), &d, 1, 8).is_err());
    }

    #[test]
    fn separable_universe_is_perfect() {
        let u = generate_universe(&UniverseConfig { separation: 1000.0, class_stddev: 1e-3, ..Default::default() }).unwrap();
        let d = TaskDistribution::uniform(u.roles().base.clone()).unwrap();
        let params = EmbeddingParams::identity(u.dim(), 1.0).unwrap();
        let eval = LearnerEvaluator {
            kind: &LearnerKind::Proto,
            params: &params,
            source: &u,
            spec: EpisodeSpec::new(5, 1, 5).unwrap(),
            sampler: &SupportSampler::Standard,
        };
        let e = estimate_gen(&eval, &d, 200, 0).unwrap();
        assert_eq!((e.mean_acc, e.ci95_halfwidth), (1.0, 0.0));
    }

    #[test]
    fn zero_scale_five_way_is_chance() {
        let u = generate_universe(&UniverseConfig::default()).unwrap();
        let d = TaskDistribution::uniform(u.roles().base.clone()).unwrap();
        let params = EmbeddingParams::identity(u.dim(), 0.0).unwrap();
        let eval = LearnerEvaluator {
            kind: &LearnerKind::Proto,
            params: &params,
            source: &u,
            spec: EpisodeSpec::new(5, 1, 3).unwrap(),
            sampler: &SupportSampler::Standard,
        };
        let e = estimate_gen(&eval, &d, 500, 0).unwrap();
        assert!((e.mean_acc - 0.2).abs() < 1e-12, "{}", e.mean_acc);
    }

    #[test]
    fn csv_layout() {
        let t = trajectory(&[0.1, 0.2], &[0.3, 0.4], &[0.5, 0.6]);
        let csv = trajectory_csv(&t).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "epoch,train_loss,base_gen_mean,base_gen_ci95,novel_gen_mean,novel_gen_ci95,val_gen_mean,val_gen_ci95");
        assert_eq!(lines.next().unwrap(), "1,1,0.1,0,0.5,0,0.3,0");
    }
}
