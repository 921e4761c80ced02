//! Scenario configuration files.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::coverage::TupleDistributionModel;
use crate::flip::{GapMode, HeterogeneousModel, SubsetMode, DEFAULT_TRUE_TASKS};
use crate::learners::{LearnerKind, TrainingConfig};
use crate::ranking::{SelectionStrategy, BASE_GEN, NOVEL_GEN, VAL_GEN};
use crate::splits::DEFAULT_TOLERANCE;
use crate::task::EpisodeSpec;
use crate::universe::{CatalogConfig, ClassId, Role, UniverseConfig};

/// Distribution name for base tasks scored on held-out examples of the
/// training classes.
pub const BASE_ID_GEN: &str = "base_id_gen";
pub const LARGE_GEN: &str = "large_gen";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    /// Master seed; every random component derives its own seed from it.
    pub seed: u64,
    /// Relative paths resolve against the config file's directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(flatten)]
    pub scenario: Scenario,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scenario", rename_all = "kebab-case")]
pub enum Scenario {
    Train(TrainScenario),
    TrajectoryReport(TrajectoryReportScenario),
    RankCorr(RankCorrScenario),
    Flip(FlipScenario),
    Coverage(CoverageScenario),
    Split(SplitScenario),
    InterpolateSweep(SweepScenario),
}

impl Scenario {
    pub fn name(&self) -> &'static str {
        match self {
            Scenario::Train(_) => "train",
            Scenario::TrajectoryReport(_) => "trajectory-report",
            Scenario::RankCorr(_) => "rank-corr",
            Scenario::Flip(_) => "flip",
            Scenario::Coverage(_) => "coverage",
            Scenario::Split(_) => "split",
            Scenario::InterpolateSweep(_) => "interpolate-sweep",
        }
    }
}

/// `{"generate": {...}}` or `{"path": "universe.json"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UniverseSource {
    Generate(UniverseConfig),
    Path(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CatalogSource {
    Generate(CatalogConfig),
    Path(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EmbeddingInit {
    Identity { scale: f64 },
    /// Gaussian entries with standard deviation `1 / sqrt(d_in)`.
    Random { d_out: usize, scale: f64 },
}

impl Default for EmbeddingInit {
    fn default() -> Self {
        EmbeddingInit::Identity { scale: 10.0 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum SamplerChoice {
    #[default]
    Standard,
    /// Freeze `k` support exemplars per base class for the whole run.
    Fixml { k: usize },
}

/// Materialise a finite pool per base class and hold part of it out for
/// in-distribution evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdSplit {
    pub examples_per_class: usize,
    /// Share of each pool used for training.
    pub fraction: f64,
}

fn default_distributions() -> Vec<String> {
    [BASE_GEN, VAL_GEN, NOVEL_GEN].map(String::from).to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSettings {
    pub n_tasks: usize,
    /// Any of `base_gen`, `val_gen`, `novel_gen`, `large_gen`, `base_id_gen`.
    #[serde(default = "default_distributions")]
    pub distributions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainScenario {
    pub universe: UniverseSource,
    pub learner: LearnerKind,
    pub spec: EpisodeSpec,
    pub training: TrainingConfig,
    #[serde(default)]
    pub init: EmbeddingInit,
    #[serde(default)]
    pub sampler: SamplerChoice,
    #[serde(default)]
    pub id_split: Option<IdSplit>,
    #[serde(default)]
    pub evaluation: Option<EvalSettings>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryReportScenario {
    pub universe: UniverseSource,
    pub learner: LearnerKind,
    pub spec: EpisodeSpec,
    /// `.jsonl` snapshot file or an evaluated trajectory JSON.
    pub trajectory: PathBuf,
    pub evaluation: EvalSettings,
    /// Must match the training run's split (same master seed) for `base_id_gen`.
    #[serde(default)]
    pub id_split: Option<IdSplit>,
}

fn default_dist_a() -> String {
    VAL_GEN.to_string()
}

fn default_dist_b() -> String {
    NOVEL_GEN.to_string()
}

fn all_strategies() -> Vec<SelectionStrategy> {
    vec![
        SelectionStrategy::LastSnapshot,
        SelectionStrategy::BestTrainLoss,
        SelectionStrategy::BestBaseGen,
        SelectionStrategy::BestValGen,
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RankCorrScenario {
    /// Evaluated trajectory JSON.
    pub trajectory: PathBuf,
    #[serde(default = "default_dist_a")]
    pub dist_a: String,
    #[serde(default = "default_dist_b")]
    pub dist_b: String,
    /// Tail windows; empty means the whole trajectory.
    #[serde(default)]
    pub windows: Vec<usize>,
    #[serde(default = "all_strategies")]
    pub strategies: Vec<SelectionStrategy>,
}

/// `"last"`, `{"epoch": 12}` or `{"strategy": "best_val_gen"}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SnapshotChoice {
    Last,
    Epoch(usize),
    Strategy(SelectionStrategy),
}

fn last() -> SnapshotChoice {
    SnapshotChoice::Last
}

fn best_val() -> SnapshotChoice {
    SnapshotChoice::Strategy(SelectionStrategy::BestValGen)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnapshotRef {
    pub learner: LearnerKind,
    pub trajectory: PathBuf,
    #[serde(default = "last")]
    pub select: SnapshotChoice,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum FlipEvaluators {
    /// Two analytic evaluatables over classes `0..classes`.
    Analytic { classes: usize, model: HeterogeneousModel },
    /// Two trained snapshots scored on the universe's large class set.
    Learners {
        universe: UniverseSource,
        first: SnapshotRef,
        second: SnapshotRef,
    },
}

fn default_true_tasks() -> usize {
    DEFAULT_TRUE_TASKS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlipScenario {
    pub evaluators: FlipEvaluators,
    pub subset_sizes: Vec<usize>,
    #[serde(default)]
    pub repeats: usize,
    #[serde(default)]
    pub tasks_per_eval: usize,
    /// Defaults to the model's gap, or the measured gap for learners.
    #[serde(default)]
    pub epsilon: Option<f64>,
    pub delta: f64,
    pub spec: EpisodeSpec,
    #[serde(default)]
    pub gap_mode: GapMode,
    #[serde(default)]
    pub subsets: SubsetMode,
    #[serde(default = "default_true_tasks")]
    pub true_tasks: usize,
}

/// `"uniform"`, `"linear_skew"` or `{"explicit": [p_1, ...]}`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbsChoice {
    #[default]
    Uniform,
    LinearSkew,
    Explicit(Vec<f64>),
}

fn one() -> f64 {
    1.0
}

fn half() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoverageSetting {
    pub l: usize,
    pub n: usize,
    #[serde(default = "one")]
    pub gamma: f64,
    #[serde(default)]
    pub probs: ProbsChoice,
    pub n_train: usize,
    /// Defaults to `n_train`.
    #[serde(default)]
    pub n_test: Option<usize>,
    pub trials: usize,
    #[serde(default = "half")]
    pub eta: f64,
}

impl CoverageSetting {
    pub fn model(&self) -> crate::Result<TupleDistributionModel> {
        let probs = match &self.probs {
            ProbsChoice::Uniform => None,
            ProbsChoice::LinearSkew => Some(crate::coverage::linear_skew_probs(self.l, self.n, self.gamma)?),
            ProbsChoice::Explicit(p) => Some(p.clone()),
        };
        Ok(TupleDistributionModel {
            l: self.l,
            n: self.n,
            probs,
            gamma: self.gamma,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoverageScenario {
    pub settings: Vec<CoverageSetting>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SplitScenario {
    ClassPartition(ClassPartitionSplit),
    Attribute(AttributeSplit),
    Examples(ExampleSplit),
}

/// Partition `class_ids` (or `0..n_classes`) into base/val/novel roles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassPartitionSplit {
    #[serde(default)]
    pub class_ids: Option<Vec<ClassId>>,
    #[serde(default)]
    pub n_classes: Option<usize>,
    pub base: usize,
    pub val: usize,
    pub novel: usize,
}

fn default_tol() -> f64 {
    DEFAULT_TOLERANCE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributeSplit {
    pub catalog: CatalogSource,
    #[serde(default = "default_tol")]
    pub tol: f64,
    /// Minimum items per side for a pair to be listed as feasible.
    #[serde(default)]
    pub min_pair_items: usize,
}

fn base_role() -> Role {
    Role::Base
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExampleSplit {
    pub universe: UniverseSource,
    #[serde(default = "base_role")]
    pub role: Role,
    pub examples_per_class: usize,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepRun {
    pub name: String,
    pub learner: LearnerKind,
    pub trajectory: PathBuf,
    #[serde(default = "best_val")]
    pub select: SnapshotChoice,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepScenario {
    pub universe: UniverseSource,
    pub spec: EpisodeSpec,
    pub lambdas: Vec<f64>,
    pub n_tasks: usize,
    pub runs: Vec<SweepRun>,
}
