//! Episodic meta-training with a staircase learning-rate schedule.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{episode_loss_grad, EmbeddingParams, LearnerKind};
use crate::error::{Error, Result};
use crate::ranking::GenEstimate;
use crate::rng::stream;
use crate::task::{EpisodeSource, EpisodeSpec, SupportSampler, TaskDistribution};

/// Piecewise-constant rate, written `start(rate)-start(rate)-...`, for
/// example `0(0.1)-20(6e-3)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct LrSchedule(Vec<(usize, f64)>);

impl LrSchedule {
    pub fn new(steps: Vec<(usize, f64)>) -> Result<Self> {
        match steps.first() {
            None => return Err(Error::config("learning-rate schedule is empty")),
            Some(&(start, _)) if start != 0 => {
                return Err(Error::config("learning-rate schedule must start at epoch 0"))
            }
            _ => {}
        }
        if steps.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::config("schedule start epochs must be strictly increasing"));
        }
        if let Some(&(_, r)) = steps.iter().find(|(_, r)| !(*r > 0.0 && r.is_finite())) {
            return Err(Error::config(format!("learning rate {r} is not positive")));
        }
        Ok(LrSchedule(steps))
    }

    pub fn constant(rate: f64) -> Result<Self> {
        LrSchedule::new(vec![(0, rate)])
    }

    /// Rate in effect during (0-based) `epoch`.
    pub fn rate_at(&self, epoch: usize) -> f64 {
        self.0.iter().rev().find(|(start, _)| *start <= epoch).map_or(self.0[0].1, |s| s.1)
    }

    pub fn steps(&self) -> &[(usize, f64)] {
        &self.0
    }
}

impl FromStr for LrSchedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::config(format!("malformed learning-rate schedule '{s}'"));
        let mut steps = Vec::new();
        let mut rest = s.trim();
        loop {
            let open = rest.find('(').ok_or_else(bad)?;
            let close = rest.find(')').ok_or_else(bad)?;
            if close < open {
                return Err(bad());
            }
            let start = rest[..open].trim().parse::<usize>().map_err(|_| bad())?;
            let rate = rest[open + 1..close].trim().parse::<f64>().map_err(|_| bad())?;
            steps.push((start, rate));
            rest = rest[close + 1..].trim_start();
            if rest.is_empty() {
                break;
            }
            rest = rest.strip_prefix('-').ok_or_else(bad)?;
        }
        LrSchedule::new(steps)
    }
}

impl fmt::Display for LrSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (start, rate)) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str("-")?;
            }
            write!(f, "{start}({rate})")?;
        }
        Ok(())
    }
}

impl TryFrom<String> for LrSchedule {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<LrSchedule> for String {
    fn from(s: LrSchedule) -> Self {
        s.to_string()
    }
}

fn default_momentum() -> f64 {
    0.9
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    pub epochs: usize,
    /// Rounded up to a whole number of `task_batch`-sized steps.
    pub episodes_per_epoch: usize,
    pub task_batch: usize,
    pub lr_schedule: LrSchedule,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default)]
    pub seed: u64,
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.task_batch == 0 || self.episodes_per_epoch == 0 {
            return Err(Error::config("task_batch and episodes_per_epoch must be positive"));
        }
        if !(self.weight_decay >= 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("weight_decay must be >= 0 and momentum in [0, 1)"));
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.episodes_per_epoch.div_ceil(self.task_batch)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub epoch: usize,
    #[serde(flatten)]
    pub params: EmbeddingParams,
    pub train_loss: f64,
}

/// Snapshots in epoch order plus, once evaluated, one estimate map per snapshot.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SnapshotTrajectory {
    pub snapshots: Vec<Snapshot>,
    #[serde(default)]
    pub evaluations: Vec<BTreeMap<String, GenEstimate>>,
}

impl SnapshotTrajectory {
    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    /// One JSON snapshot per line. Lines starting with `#` are comments.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        for s in &self.snapshots {
            serde_json::to_writer(&mut w, s)?;
            w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_jsonl(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut snapshots: Vec<Snapshot> = Vec::new();
        for line in std::io::BufReader::new(file).lines() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let s: Snapshot = serde_json::from_str(&line)?;
            if snapshots.last().is_some_and(|p| p.epoch >= s.epoch) {
                return Err(Error::config("snapshot epochs must be strictly increasing"));
            }
            snapshots.push(s);
        }
        Ok(SnapshotTrajectory {
            snapshots,
            evaluations: Vec::new(),
        })
    }
}

/// SGD with momentum on the mean episode loss. Each step draws `task_batch`
/// episodes, episode `i` (counted over the whole run) from its own stream,
/// so the run is reproducible regardless of thread count. A snapshot is
/// taken after every epoch, numbered from 1.
#[allow(clippy::too_many_arguments)]
pub fn meta_train<E: EpisodeSource + ?Sized>(
    kind: &LearnerKind,
    train_dist: &TaskDistribution,
    source: &E,
    spec: &EpisodeSpec,
    sampler: &SupportSampler,
    config: &TrainingConfig,
    init: EmbeddingParams,
) -> Result<SnapshotTrajectory> {
    kind.validate()?;
    config.validate()?;
    init.validate()?;
    if init.d_in() != source.feature_dim() {
        return Err(Error::LengthMismatch(init.d_in(), source.feature_dim()));
    }
    let mut params = init;
    let mut velocity = DMatrix::zeros(params.d_out(), params.d_in());
    let mut trajectory = SnapshotTrajectory::default();
    let steps = config.steps_per_epoch();
    let diverged = |epoch, trajectory: SnapshotTrajectory| Error::Diverged {
        epoch,
        partial: Box::new(trajectory),
    };

    for epoch in 0..config.epochs {
        let lr = config.lr_schedule.rate_at(epoch);
        let mut epoch_loss = 0.0;
        for step in 0..steps {
            let first = ((epoch * steps + step) * config.task_batch) as u64;
            let parts: Vec<Result<(f64, DMatrix<f64>)>> = (0..config.task_batch as u64)
                .into_par_iter()
                .map(|b| {
                    let mut rng = stream(config.seed, "train-episode", first + b);
                    let task = train_dist.sample(spec.n_way, &mut rng)?;
                    let episode = source.episode(&task, spec, sampler, &mut rng)?;
                    episode_loss_grad(kind, &params, &episode)
                })
                .collect();
            let mut loss = 0.0;
            let mut grad = DMatrix::zeros(params.d_out(), params.d_in());
            for part in parts {
                match part {
                    Ok((l, g)) => {
                        loss += l;
                        grad += g;
                    }
                    Err(Error::Numerical(_)) => return Err(diverged(epoch + 1, trajectory)),
                    Err(e) => return Err(e),
                }
            }
            let m = config.task_batch as f64;
            loss /= m;
            grad /= m;
            velocity = &velocity * config.momentum + grad + &params.weights * config.weight_decay;
            params.weights -= &velocity * lr;
            if !params.weights.iter().all(|x| x.is_finite()) {
                return Err(diverged(epoch + 1, trajectory));
            }
            epoch_loss += loss;
        }
        trajectory.snapshots.push(Snapshot {
            epoch: epoch + 1,
            params: params.clone(),
            train_loss: epoch_loss / steps as f64,
        });
    }
    Ok(trajectory)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::{batch_loss_grad, EmbeddingParams};
    use crate::task::{sample_episode, ClassTuple};
    use crate::universe::{generate_universe, UniverseConfig};

    #[test]
    fn schedule_parse_and_display() {
        let s: LrSchedule = "0(0.1)-20(6e-3)".parse().unwrap();
        assert_eq!(s.steps(), &[(0, 0.1), (20, 6e-3)]);
        assert_eq!(s.rate_at(0), 0.1);
        assert_eq!(s.rate_at(19), 0.1);
        assert_eq!(s.rate_at(20), 6e-3);
        assert_eq!(s.rate_at(500), 6e-3);
        assert_eq!(s.to_string(), "0(0.1)-20(0.006)");
        assert_eq!(s.to_string().parse::<LrSchedule>().unwrap(), s);
        for bad in ["", "5(0.1)", "0(0.1)-0(0.2)", "0(-1)", "0(0.1)20(0.2)", "0(x)"] {
            assert!(bad.parse::<LrSchedule>().is_err(), "{bad}");
        }
    }

    fn setup() -> (crate::universe::ClassUniverse, TaskDistribution, EpisodeSpec) {
        let u = generate_universe(&UniverseConfig { dim: 4, n_base: 6, n_val: 2, n_novel: 2, ..Default::default() }).unwrap();
        let d = TaskDistribution::uniform(u.roles().base.clone()).unwrap();
        (u, d, EpisodeSpec::new(3, 2, 3).unwrap())
    }

    fn config(epochs: usize) -> TrainingConfig {
        TrainingConfig {
            epochs,
            episodes_per_epoch: 8,
            task_batch: 4,
            lr_schedule: LrSchedule::constant(0.01).unwrap(),
            weight_decay: 1e-4,
            momentum: 0.9,
            seed: 5,
        }
    }

    #[test]
    fn trajectory_length_and_determinism() {
        let (u, d, spec) = setup();
        let init = EmbeddingParams::identity(4, 1.0).unwrap();
        let run = || meta_train(&LearnerKind::Proto, &d, &u, &spec, &SupportSampler::Standard, &config(3), init.clone()).unwrap();
        let a = run();
        assert_eq!(a.len(), 3);
        assert_eq!(a.snapshots.iter().map(|s| s.epoch).collect::<Vec<_>>(), vec![1, 2, 3]);
        assert_eq!(a, run());
    }

    #[test]
    fn divergence_returns_partial_trajectory() {
        let (u, d, spec) = setup();
        let mut cfg = config(4);
        cfg.lr_schedule = LrSchedule::new(vec![(0, 1e-3), (2, 1e200)]).unwrap();
        let init = EmbeddingParams::identity(4, 1.0).unwrap();
        match meta_train(&LearnerKind::Proto, &d, &u, &spec, &SupportSampler::Standard, &cfg, init) {
            Err(Error::Diverged { epoch, partial }) => {
                assert_eq!(epoch, 3);
                assert_eq!(partial.len(), 2);
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn fixed_episode_loss_is_monotone() {
        let (u, _, spec) = setup();
        let t = ClassTuple::new(vec![0, 1, 2]).unwrap();
        let ep = sample_episode(&u, &t, &spec, &SupportSampler::Standard, &mut stream(0, "e", 0)).unwrap();
        let mut p = EmbeddingParams::identity(4, 1.0).unwrap();
        let mut last = f64::INFINITY;
        for _ in 0..50 {
            let (loss, grad) = batch_loss_grad(&LearnerKind::Proto, &p, std::slice::from_ref(&ep)).unwrap();
            assert!(loss <= last + 1e-9, "{loss} > {last}");
            last = loss;
            p.weights -= grad * 1e-3;
        }
    }

    #[test]
    fn jsonl_round_trip() {
        let (u, d, spec) = setup();
        let init = EmbeddingParams::identity(4, 1.0).unwrap();
        let t = meta_train(&LearnerKind::Proto, &d, &u, &spec, &SupportSampler::Standard, &config(2), init).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traj.jsonl");
        t.write_jsonl(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.lines().next().unwrap().starts_with(r#"{"epoch":1,"w":[["#));
        assert_eq!(SnapshotTrajectory::read_jsonl(&path).unwrap(), t);
    }
}
