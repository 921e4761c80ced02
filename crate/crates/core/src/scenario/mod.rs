//! JSON-configured experiment runs that wire the other modules together and
//! write CSV/JSON reports plus a run manifest.
//!
//! Every random component draws from a seed derived from the config's master
//! `seed`, so a config fully determines every data file. Generator configs
//! (`universe.generate`, `catalog.generate`, the flip `model`) and `training`
//! receive a derived `seed` when they do not set one.

mod config;
mod output;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

pub use config::*;
pub use output::{config_hash, RunManifest, ERROR_FILE, MANIFEST_FILE};

use crate::coverage::{verify_bounds, BoundReport};
use crate::error::{Error, Result};
use crate::flip::{flip_experiment, gap_cdf_csv, heterogeneous_pair, true_performance, FlipConfig, FlipReport};
use crate::learners::{meta_train, EmbeddingParams, LearnerKind, Snapshot, SnapshotTrajectory};
use crate::ranking::{
    estimate_gen, evaluate_trajectory, rank_similarity_report, select_index, trajectory_csv, EvalTarget, Evaluatable,
    GenEstimate, LearnerEvaluator, SelectionStrategy, BASE_GEN, NOVEL_GEN, VAL_GEN,
};
use crate::rng::{derive_seed, stream};
use crate::splits::{
    build_attribute_graph, random_class_partition, spectral_bipartition, within_class_example_split, ExampleStore,
};
use crate::task::{make_fixml_sampler, EpisodeSource, EpisodeSpec, SupportSampler, TaskDistribution};
use crate::universe::{
    feasible_attribute_pairs, generate_item_catalog, generate_universe, ClassId, ClassUniverse, ItemCatalog, Role,
};
use output::{unix_ms, Outputs};

/// Environment variable naming the default output directory.
pub const OUTPUT_DIR_ENV: &str = "FSL_EVAL_OUTPUT_DIR";
pub const DEFAULT_OUTPUT_DIR: &str = "fsl-eval-out";

/// Why a run failed, mapped onto the process exit code.
#[derive(Debug)]
pub enum ScenarioError {
    /// The config could not be parsed or is invalid (exit code 2).
    Config(String),
    /// A referenced input file does not exist (exit code 2).
    MissingPath(PathBuf),
    /// The scenario failed while running (exit code 1).
    Runtime(Error),
}

impl ScenarioError {
    pub fn exit_code(&self) -> i32 {
        match self {
            ScenarioError::Config(_) | ScenarioError::MissingPath(_) => 2,
            ScenarioError::Runtime(_) => 1,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            ScenarioError::Config(_) => "config",
            ScenarioError::MissingPath(_) => "missing_path",
            ScenarioError::Runtime(_) => "runtime",
        }
    }

    /// `{"error": {"kind", "message", "path"?}, "exit_code"}`.
    pub fn to_json(&self) -> Value {
        let mut err = serde_json::json!({
            "kind": self.kind(),
            "message": self.to_string(),
        });
        if let ScenarioError::MissingPath(p) = self {
            err["path"] = Value::String(p.display().to_string());
        }
        serde_json::json!({ "error": err, "exit_code": self.exit_code() })
    }
}

impl std::fmt::Display for ScenarioError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ScenarioError::Config(m) => write!(f, "invalid config: {m}"),
            ScenarioError::MissingPath(p) => write!(f, "no such file: {}", p.display()),
            ScenarioError::Runtime(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for ScenarioError {}

impl From<Error> for ScenarioError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidConfig(m) => ScenarioError::Config(m),
            e => ScenarioError::Runtime(e),
        }
    }
}

/// Read a config file and run it. Relative paths inside resolve against the
/// file's directory.
pub fn run_file(path: &Path) -> std::result::Result<RunManifest, ScenarioError> {
    let value = read_config_value(path)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    run_value(value, &base)
}

pub fn read_config_value(path: &Path) -> std::result::Result<Value, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => ScenarioError::MissingPath(path.to_path_buf()),
        _ => ScenarioError::Runtime(Error::io(path, e)),
    })?;
    serde_json::from_str(&text).map_err(|e| ScenarioError::Config(format!("{}: {e}", path.display())))
}

/// Fill in derived seeds, then parse. Returns the parsed config and the
/// completed JSON it was parsed from.
pub fn resolve_config(mut value: Value) -> std::result::Result<(ScenarioConfig, Value), ScenarioError> {
    let seed = value
        .get("seed")
        .and_then(Value::as_u64)
        .ok_or_else(|| ScenarioError::Config("'seed' must be present as a non-negative integer".into()))?;
    fill_seeds(&mut value, seed);
    let config: ScenarioConfig =
        serde_json::from_value(value.clone()).map_err(|e| ScenarioError::Config(e.to_string()))?;
    Ok((config, value))
}

/// Run a config given as JSON. On failure after the output directory is
/// known, the error JSON is also written there.
pub fn run_value(value: Value, base_dir: &Path) -> std::result::Result<RunManifest, ScenarioError> {
    let started = unix_ms();
    let (mut config, mut value) = resolve_config(value)?;
    // Where results go does not change what they are.
    if let Some(map) = value.as_object_mut() {
        map.remove("output_dir");
    }
    let hash = config_hash(&value);
    resolve_inputs(&mut config.scenario, base_dir)?;
    let dir = output_dir(&config, base_dir);
    let mut out = Outputs::new(dir.clone(), hash.clone())?;
    let result = out
        .raw_json("config.json", &value)
        .map_err(ScenarioError::from)
        .and_then(|()| execute(&config, &mut out).map_err(ScenarioError::from));
    if let Err(e) = result {
        let text = serde_json::to_string_pretty(&e.to_json()).unwrap_or_default();
        let _ = std::fs::write(dir.join(ERROR_FILE), text + "\n");
        return Err(e);
    }
    let manifest = RunManifest {
        scenario: config.scenario.name().to_string(),
        config_hash: hash,
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: config.seed,
        started_unix_ms: started,
        finished_unix_ms: unix_ms(),
        output_dir: dir.clone(),
        outputs: out.files().to_vec(),
    };
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).map_err(Error::from)? + "\n";
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Config `output_dir`, else the environment default, else `fsl-eval-out`.
fn output_dir(config: &ScenarioConfig, base_dir: &Path) -> PathBuf {
    match &config.output_dir {
        Some(p) => base_dir.join(p),
        None => std::env::var_os(OUTPUT_DIR_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR)),
    }
}

fn fill_seed(obj: &mut Value, seed: u64, component: &str) {
    if let Some(map) = obj.as_object_mut() {
        map.entry("seed").or_insert_with(|| Value::from(derive_seed(seed, component, 0)));
    }
}

fn fill_seeds(value: &mut Value, seed: u64) {
    let Some(map) = value.as_object_mut() else {
        return;
    };
    for (key, child) in map.iter_mut() {
        match key.as_str() {
            "universe" | "catalog" => {
                if let Some(gen) = child.get_mut("generate") {
                    fill_seed(gen, seed, key);
                }
            }
            "training" => fill_seed(child, seed, "training"),
            "model" => fill_seed(child, seed, "flip-model"),
            _ => {}
        }
        fill_seeds(child, seed);
    }
}

fn resolve_inputs(scenario: &mut Scenario, base: &Path) -> std::result::Result<(), ScenarioError> {
    fn universe(u: &mut UniverseSource) -> Option<&mut PathBuf> {
        match u {
            UniverseSource::Path(p) => Some(p),
            UniverseSource::Generate(_) => None,
        }
    }
    let paths: Vec<&mut PathBuf> = match scenario {
        Scenario::Train(s) => universe(&mut s.universe).into_iter().collect(),
        Scenario::TrajectoryReport(s) => universe(&mut s.universe).into_iter().chain([&mut s.trajectory]).collect(),
        Scenario::RankCorr(s) => vec![&mut s.trajectory],
        Scenario::Flip(s) => match &mut s.evaluators {
            FlipEvaluators::Analytic { .. } => Vec::new(),
            FlipEvaluators::Learners { universe: u, first, second } => universe(u)
                .into_iter()
                .chain([&mut first.trajectory, &mut second.trajectory])
                .collect(),
        },
        Scenario::Coverage(_) => Vec::new(),
        Scenario::Split(SplitScenario::Attribute(a)) => match &mut a.catalog {
            CatalogSource::Path(p) => vec![p],
            CatalogSource::Generate(_) => Vec::new(),
        },
        Scenario::Split(SplitScenario::Examples(e)) => universe(&mut e.universe).into_iter().collect(),
        Scenario::Split(SplitScenario::ClassPartition(_)) => Vec::new(),
        Scenario::InterpolateSweep(s) => universe(&mut s.universe)
            .into_iter()
            .chain(s.runs.iter_mut().map(|r| &mut r.trajectory))
            .collect(),
    };
    for p in paths {
        *p = base.join(&*p);
        if !p.exists() {
            return Err(ScenarioError::MissingPath(p.clone()));
        }
    }
    Ok(())
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn load_universe(source: &UniverseSource) -> Result<ClassUniverse> {
    match source {
        UniverseSource::Generate(cfg) => generate_universe(cfg),
        UniverseSource::Path(p) => ClassUniverse::from_json(&read_text(p)?),
    }
}

pub fn load_catalog(source: &CatalogSource) -> Result<ItemCatalog> {
    match source {
        CatalogSource::Generate(cfg) => generate_item_catalog(cfg),
        CatalogSource::Path(p) => ItemCatalog::from_json(&read_text(p)?),
    }
}

/// `.jsonl` snapshot files or evaluated trajectory JSON.
pub fn load_trajectory(path: &Path) -> Result<SnapshotTrajectory> {
    if path.extension().is_some_and(|e| e == "jsonl") {
        SnapshotTrajectory::read_jsonl(path)
    } else {
        Ok(serde_json::from_str(&read_text(path)?)?)
    }
}

pub fn choose_snapshot(trajectory: &SnapshotTrajectory, choice: SnapshotChoice) -> Result<&Snapshot> {
    let index = match choice {
        SnapshotChoice::Last => select_index(trajectory, SelectionStrategy::LastSnapshot)?,
        SnapshotChoice::Epoch(epoch) => trajectory
            .snapshots
            .iter()
            .position(|s| s.epoch == epoch)
            .ok_or_else(|| Error::config(format!("trajectory has no snapshot for epoch {epoch}")))?,
        SnapshotChoice::Strategy(s) => select_index(trajectory, s)?,
    };
    Ok(&trajectory.snapshots[index])
}

/// Seed shared by every evaluation in a run, so estimates of the same
/// snapshot on the same distribution agree across scenarios.
pub fn evaluation_seed(master: u64) -> u64 {
    derive_seed(master, "eval", 0)
}

/// Materialise the `role` classes' pools and split them, as the train and
/// trajectory-report scenarios do for `id_split`.
pub fn id_example_split(
    universe: &ClassUniverse,
    classes: &[ClassId],
    split: &IdSplit,
    master: u64,
) -> Result<(ExampleStore, ExampleStore)> {
    let store = ExampleStore::from_source(
        universe,
        classes,
        split.examples_per_class,
        &mut stream(master, "id-split-draw", 0),
    )?;
    within_class_example_split(&store, split.fraction, &mut stream(master, "id-split", 0))
}

fn eval_targets<'a>(
    names: &[String],
    universe: &'a ClassUniverse,
    id_eval: Option<&'a ExampleStore>,
) -> Result<Vec<EvalTarget<'a>>> {
    names
        .iter()
        .map(|name| {
            let (classes, source): (&[ClassId], &dyn EpisodeSource) = match name.as_str() {
                BASE_GEN => (universe.role(Role::Base), universe),
                VAL_GEN => (universe.role(Role::Val), universe),
                NOVEL_GEN => (universe.role(Role::Novel), universe),
                LARGE_GEN => (universe.role(Role::Large), universe),
                BASE_ID_GEN => (
                    universe.role(Role::Base),
                    id_eval.ok_or_else(|| Error::config("base_id_gen needs an id_split"))?,
                ),
                other => return Err(Error::config(format!("unknown distribution '{other}'"))),
            };
            Ok(EvalTarget {
                name: name.clone(),
                dist: TaskDistribution::uniform(classes.to_vec())?,
                source,
            })
        })
        .collect()
}

fn execute(config: &ScenarioConfig, out: &mut Outputs) -> Result<()> {
    let seed = config.seed;
    match &config.scenario {
        Scenario::Train(s) => run_train(s, seed, out),
        Scenario::TrajectoryReport(s) => run_trajectory_report(s, seed, out),
        Scenario::RankCorr(s) => run_rank_corr(s, out),
        Scenario::Flip(s) => run_flip(s, seed, out),
        Scenario::Coverage(s) => run_coverage(s, seed, out),
        Scenario::Split(s) => run_split(s, seed, out),
        Scenario::InterpolateSweep(s) => run_sweep(s, seed, out),
    }
}

fn init_params(init: &EmbeddingInit, dim: usize, seed: u64) -> Result<EmbeddingParams> {
    match *init {
        EmbeddingInit::Identity { scale } => EmbeddingParams::identity(dim, scale),
        EmbeddingInit::Random { d_out, scale } => EmbeddingParams::random(d_out, dim, scale, &mut stream(seed, "init", 0)),
    }
}

fn write_universe(universe: &ClassUniverse, out: &mut Outputs) -> Result<()> {
    let value: Value = serde_json::from_str(&universe.to_json()?)?;
    out.json("universe.json", &value)
}

#[allow(clippy::too_many_arguments)]
fn evaluate_and_write(
    trajectory: &mut SnapshotTrajectory,
    learner: &LearnerKind,
    eval: &EvalSettings,
    spec: EpisodeSpec,
    universe: &ClassUniverse,
    id_eval: Option<&ExampleStore>,
    seed: u64,
    out: &mut Outputs,
) -> Result<()> {
    let targets = eval_targets(&eval.distributions, universe, id_eval)?;
    evaluate_trajectory(trajectory, learner, &targets, spec, eval.n_tasks, evaluation_seed(seed))?;
    out.json("trajectory_eval.json", trajectory)?;
    out.csv("trajectory.csv", &trajectory_csv(trajectory)?)
}

fn run_train(s: &TrainScenario, seed: u64, out: &mut Outputs) -> Result<()> {
    let universe = load_universe(&s.universe)?;
    if matches!(s.universe, UniverseSource::Generate(_)) {
        write_universe(&universe, out)?;
    }
    let base = universe.role(Role::Base).to_vec();
    let split = s
        .id_split
        .as_ref()
        .map(|cfg| id_example_split(&universe, &base, cfg, seed))
        .transpose()?;
    let source: &dyn EpisodeSource = match &split {
        Some((train, _)) => train,
        None => &universe,
    };
    let sampler = match s.sampler {
        SamplerChoice::Standard => SupportSampler::Standard,
        SamplerChoice::Fixml { k } => {
            let fixml_seed = derive_seed(seed, "fixml", 0);
            match &split {
                Some((train, _)) => make_fixml_sampler(train, &base, k, fixml_seed)?,
                None => make_fixml_sampler(&universe, &base, k, fixml_seed)?,
            }
        }
    };
    let init = init_params(&s.init, universe.dim(), seed)?;
    let dist = TaskDistribution::uniform(base)?;
    let mut trajectory = match meta_train(&s.learner, &dist, source, &s.spec, &sampler, &s.training, init) {
        Ok(t) => t,
        Err(Error::Diverged { epoch, partial }) => {
            out.jsonl("trajectory.jsonl", &partial)?;
            return Err(Error::Diverged { epoch, partial });
        }
        Err(e) => return Err(e),
    };
    out.jsonl("trajectory.jsonl", &trajectory)?;
    if let Some(eval) = &s.evaluation {
        let id_eval = split.as_ref().map(|(_, e)| e);
        evaluate_and_write(&mut trajectory, &s.learner, eval, s.spec, &universe, id_eval, seed, out)?;
    }
    Ok(())
}

fn run_trajectory_report(s: &TrajectoryReportScenario, seed: u64, out: &mut Outputs) -> Result<()> {
    let universe = load_universe(&s.universe)?;
    let mut trajectory = load_trajectory(&s.trajectory)?;
    let split = s
        .id_split
        .as_ref()
        .map(|cfg| id_example_split(&universe, universe.role(Role::Base), cfg, seed))
        .transpose()?;
    let id_eval = split.as_ref().map(|(_, e)| e);
    evaluate_and_write(&mut trajectory, &s.learner, &s.evaluation, s.spec, &universe, id_eval, seed, out)
}

#[derive(Serialize)]
struct WindowTau {
    window: usize,
    tau: f64,
}

#[derive(Serialize)]
struct Selection {
    strategy: SelectionStrategy,
    epoch: usize,
    train_loss: f64,
    estimates: BTreeMap<String, GenEstimate>,
}

#[derive(Serialize)]
struct RankCorrReport<'a> {
    dist_a: &'a str,
    dist_b: &'a str,
    windows: Vec<WindowTau>,
    selections: Vec<Selection>,
}

fn run_rank_corr(s: &RankCorrScenario, out: &mut Outputs) -> Result<()> {
    let trajectory = load_trajectory(&s.trajectory)?;
    if trajectory.evaluations.len() != trajectory.snapshots.len() {
        return Err(Error::config("rank-corr needs an evaluated trajectory"));
    }
    let windows = if s.windows.is_empty() { vec![trajectory.len()] } else { s.windows.clone() };
    let windows = windows
        .into_iter()
        .map(|w| Ok(WindowTau { window: w, tau: rank_similarity_report(&trajectory, &s.dist_a, &s.dist_b, w)? }))
        .collect::<Result<Vec<_>>>()?;
    let selections = s
        .strategies
        .iter()
        .map(|&strategy| {
            let i = select_index(&trajectory, strategy)?;
            Ok(Selection {
                strategy,
                epoch: trajectory.snapshots[i].epoch,
                train_loss: trajectory.snapshots[i].train_loss,
                estimates: trajectory.evaluations[i].clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut csv = String::from("window,kendall_tau\n");
    for w in &windows {
        writeln!(csv, "{},{}", w.window, w.tau).unwrap();
    }
    out.json(
        "rank_corr.json",
        &RankCorrReport {
            dist_a: &s.dist_a,
            dist_b: &s.dist_b,
            windows,
            selections,
        },
    )?;
    out.csv("rank_corr.csv", &csv)
}

fn flip_sizes<A: Evaluatable, B: Evaluatable>(
    s: &FlipScenario,
    a: &A,
    b: &B,
    large_set: Vec<ClassId>,
    epsilon: f64,
    seed: u64,
    out: &mut Outputs,
) -> Result<()> {
    let mut summary = String::from("subset_size,samples,flip_freq,exaggeration_freq,mean_gap,true_gap\n");
    for &m in &s.subset_sizes {
        let config = FlipConfig {
            large_set: large_set.clone(),
            subset_size: m,
            repeats: s.repeats,
            tasks_per_eval: s.tasks_per_eval,
            epsilon,
            delta: s.delta,
            spec: s.spec,
            gap_mode: s.gap_mode,
            subsets: s.subsets,
            true_tasks: s.true_tasks,
            seed,
        };
        let report: FlipReport = flip_experiment(a, b, &config)?;
        writeln!(
            summary,
            "{m},{},{},{},{},{}",
            report.gap_samples.len(),
            report.flip_freq,
            report.exaggeration_freq,
            report.mean_gap(),
            report.true_gap
        )
        .unwrap();
        out.json(&format!("flip_m{m}.json"), &report)?;
        out.csv(&format!("gap_cdf_m{m}.csv"), &gap_cdf_csv(&report))?;
    }
    out.csv("flip_summary.csv", &summary)
}

/// Seed shared by every subset size, so sizes are compared on matched draws.
pub fn flip_seed(master: u64) -> u64 {
    derive_seed(master, "flip", 0)
}

fn run_flip(s: &FlipScenario, seed: u64, out: &mut Outputs) -> Result<()> {
    let fseed = flip_seed(seed);
    match &s.evaluators {
        FlipEvaluators::Analytic { classes, model } => {
            let ids: Vec<ClassId> = (0..*classes as ClassId).collect();
            let (a, b) = heterogeneous_pair(&ids, s.spec.n_way, model)?;
            flip_sizes(s, &a, &b, ids, s.epsilon.unwrap_or(model.epsilon), fseed, out)
        }
        FlipEvaluators::Learners { universe, first, second } => {
            let universe = load_universe(universe)?;
            let (ta, tb) = (load_trajectory(&first.trajectory)?, load_trajectory(&second.trajectory)?);
            let (sa, sb) = (choose_snapshot(&ta, first.select)?, choose_snapshot(&tb, second.select)?);
            let sampler = SupportSampler::Standard;
            let a = LearnerEvaluator {
                kind: &first.learner,
                params: &sa.params,
                source: &universe,
                spec: s.spec,
                sampler: &sampler,
            };
            let b = LearnerEvaluator {
                kind: &second.learner,
                params: &sb.params,
                ..a
            };
            let large = match universe.role(Role::Large) {
                [] => universe.classes().iter().map(|c| c.class_id).collect(),
                l => l.to_vec(),
            };
            let epsilon = match s.epsilon {
                Some(e) => e,
                None => {
                    let tseed = derive_seed(fseed, "flip-true", 0);
                    true_performance(&a, &large, s.true_tasks, tseed)? - true_performance(&b, &large, s.true_tasks, tseed)?
                }
            };
            flip_sizes(s, &a, &b, large, epsilon, fseed, out)
        }
    }
}

#[derive(Serialize)]
struct CoverageOutput<'a> {
    all_pass: bool,
    reports: &'a [BoundReport],
}

fn run_coverage(s: &CoverageScenario, seed: u64, out: &mut Outputs) -> Result<()> {
    if s.settings.is_empty() {
        return Err(Error::config("coverage scenario needs at least one setting"));
    }
    let mut reports = Vec::with_capacity(s.settings.len());
    let mut csv = String::from("setting,l,n,gamma,n_train,n_test,trials,bound,formula_value,empirical_value,margin,pass\n");
    for (i, setting) in s.settings.iter().enumerate() {
        let model = setting.model()?;
        let n_test = setting.n_test.unwrap_or(setting.n_train);
        let report = verify_bounds(
            &model,
            setting.n_train,
            n_test,
            setting.trials,
            setting.eta,
            derive_seed(seed, "coverage", i as u64),
        )?;
        for e in &report.entries {
            writeln!(
                csv,
                "{i},{},{},{},{},{n_test},{},{},{},{},{},{}",
                setting.l, setting.n, setting.gamma, setting.n_train, setting.trials, e.name, e.formula_value,
                e.empirical_value, e.margin, e.pass
            )
            .unwrap();
        }
        reports.push(report);
    }
    let all_pass = reports.iter().all(BoundReport::all_pass);
    out.json("coverage_report.json", &CoverageOutput { all_pass, reports: &reports })?;
    out.csv("coverage_summary.csv", &csv)
}

#[derive(Serialize)]
struct AttributeSplitOutput {
    attributes_a: Vec<u32>,
    attributes_b: Vec<u32>,
    names_a: Vec<String>,
    names_b: Vec<String>,
    cut_weight: u64,
    balance: f64,
    fiedler_value: f64,
    iterations: usize,
    /// Feasible attribute pairs with both attributes on the same side.
    pairs_a: Vec<(u32, u32)>,
    pairs_b: Vec<(u32, u32)>,
}

#[derive(Serialize)]
struct ExampleSplitOutput<'a> {
    fraction: f64,
    train_pool: &'a ExampleStore,
    id_eval_pool: &'a ExampleStore,
}

fn run_split(s: &SplitScenario, seed: u64, out: &mut Outputs) -> Result<()> {
    match s {
        SplitScenario::ClassPartition(p) => {
            let ids: Vec<ClassId> = match (&p.class_ids, p.n_classes) {
                (Some(ids), None) => ids.clone(),
                (None, Some(n)) => (0..n as ClassId).collect(),
                _ => return Err(Error::config("give exactly one of class_ids and n_classes")),
            };
            let spec = random_class_partition(&ids, (p.base, p.val, p.novel), &mut stream(seed, "class-partition", 0))?;
            out.json("split.json", &spec)
        }
        SplitScenario::Attribute(a) => {
            let catalog = load_catalog(&a.catalog)?;
            if matches!(a.catalog, CatalogSource::Generate(_)) {
                let value: Value = serde_json::from_str(&catalog.to_json()?)?;
                out.json("catalog.json", &value)?;
            }
            let part = spectral_bipartition(&build_attribute_graph(&catalog), a.tol)?;
            let ids = |set: &[usize]| set.iter().map(|&i| i as u32).collect::<Vec<_>>();
            let names = |set: &[usize]| set.iter().map(|&i| catalog.attribute_names()[i].clone()).collect();
            let side_a: std::collections::HashSet<usize> = part.set_a.iter().copied().collect();
            let (pairs_a, pairs_b): (Vec<_>, Vec<_>) = feasible_attribute_pairs(&catalog, a.min_pair_items)
                .into_iter()
                .filter(|&(x, y)| side_a.contains(&(x as usize)) == side_a.contains(&(y as usize)))
                .partition(|&(x, _)| side_a.contains(&(x as usize)));
            out.json(
                "bipartition.json",
                &AttributeSplitOutput {
                    attributes_a: ids(&part.set_a),
                    attributes_b: ids(&part.set_b),
                    names_a: names(&part.set_a),
                    names_b: names(&part.set_b),
                    cut_weight: part.cut_weight,
                    balance: part.balance(),
                    fiedler_value: part.fiedler_value,
                    iterations: part.iterations,
                    pairs_a,
                    pairs_b,
                },
            )
        }
        SplitScenario::Examples(e) => {
            let universe = load_universe(&e.universe)?;
            let cfg = IdSplit {
                examples_per_class: e.examples_per_class,
                fraction: e.fraction,
            };
            let (train, eval) = id_example_split(&universe, universe.role(e.role), &cfg, seed)?;
            out.json(
                "id_split.json",
                &ExampleSplitOutput {
                    fraction: e.fraction,
                    train_pool: &train,
                    id_eval_pool: &eval,
                },
            )
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub learner: String,
    pub epoch: usize,
    pub estimate: GenEstimate,
}

/// One named, already chosen snapshot to sweep.
pub struct SweepEntry<'a> {
    pub name: &'a str,
    pub kind: &'a LearnerKind,
    pub snapshot: &'a Snapshot,
}

/// Estimate every snapshot on `Interpolated(base, novel, lambda)` for each
/// `lambda`, all with task seed `seed`. Rows are ordered by lambda, then entry.
pub fn interpolate_sweep(
    universe: &ClassUniverse,
    entries: &[SweepEntry<'_>],
    spec: EpisodeSpec,
    lambdas: &[f64],
    n_tasks: usize,
    seed: u64,
) -> Result<Vec<SweepRow>> {
    let sampler = SupportSampler::Standard;
    let mut rows = Vec::with_capacity(lambdas.len() * entries.len());
    for &lambda in lambdas {
        let dist = TaskDistribution::interpolated(
            universe.role(Role::Base).to_vec(),
            universe.role(Role::Novel).to_vec(),
            lambda,
        )?;
        for entry in entries {
            let eval = LearnerEvaluator {
                kind: entry.kind,
                params: &entry.snapshot.params,
                source: universe,
                spec,
                sampler: &sampler,
            };
            rows.push(SweepRow {
                lambda,
                learner: entry.name.to_string(),
                epoch: entry.snapshot.epoch,
                estimate: estimate_gen(&eval, &dist, n_tasks, seed)?,
            });
        }
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut csv = String::from("lambda,learner,epoch,mean_acc,ci95\n");
    for r in rows {
        writeln!(csv, "{},{},{},{},{}", r.lambda, r.learner, r.epoch, r.estimate.mean_acc, r.estimate.ci95_halfwidth).unwrap();
    }
    csv
}

fn run_sweep(s: &SweepScenario, seed: u64, out: &mut Outputs) -> Result<()> {
    if s.runs.is_empty() || s.lambdas.is_empty() {
        return Err(Error::config("sweep needs at least one run and one lambda"));
    }
    if let Some(r) = s.runs.iter().find(|r| r.name.contains([',', '\n', '"'])) {
        return Err(Error::config(format!("run name '{}' must not contain commas, quotes or newlines", r.name)));
    }
    let universe = load_universe(&s.universe)?;
    let trajectories = s.runs.iter().map(|r| load_trajectory(&r.trajectory)).collect::<Result<Vec<_>>>()?;
    let entries = s
        .runs
        .iter()
        .zip(&trajectories)
        .map(|(r, t)| {
            Ok(SweepEntry {
                name: &r.name,
                kind: &r.learner,
                snapshot: choose_snapshot(t, r.select)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let rows = interpolate_sweep(&universe, &entries, s.spec, &s.lambdas, s.n_tasks, evaluation_seed(seed))?;
    out.csv("sweep.csv", &sweep_csv(&rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn coverage_config(dir: &Path) -> Value {
        json!({
            "scenario": "coverage",
            "seed": 11,
            "output_dir": dir,
            "settings": [{"l": 10, "n": 3, "n_train": 5, "trials": 20000}]
        })
    }

    #[test]
    fn coverage_example_passes_every_bound() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = run_value(coverage_config(dir.path()), Path::new(".")).unwrap();
        assert_eq!(manifest.scenario, "coverage");
        assert_eq!(manifest.outputs, vec!["config.json", "coverage_report.json", "coverage_summary.csv"]);
        let report: Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("coverage_report.json")).unwrap()).unwrap();
        assert_eq!(report["all_pass"], json!(true));
        assert_eq!(report["config_hash"], json!(manifest.config_hash));
        let csv = std::fs::read_to_string(dir.path().join("coverage_summary.csv")).unwrap();
        assert!(csv.starts_with(&format!("# config_hash={}\nsetting,", manifest.config_hash)));
        assert!(dir.path().join(MANIFEST_FILE).exists());
    }

    #[test]
    fn seeds_are_filled_from_the_master_seed() {
        let value = json!({
            "scenario": "train",
            "seed": 3,
            "universe": {"generate": {"dim": 2, "n_base": 3, "n_val": 2, "n_novel": 2, "separation": 3.0}},
            "learner": {"kind": "proto"},
            "spec": {"n_way": 2, "k_shot": 1, "q_query": 1},
            "training": {"epochs": 1, "episodes_per_epoch": 2, "task_batch": 2, "lr_schedule": "0(0.1)"}
        });
        let (config, filled) = resolve_config(value).unwrap();
        assert_eq!(filled["universe"]["generate"]["seed"], json!(derive_seed(3, "universe", 0)));
        let Scenario::Train(t) = config.scenario else { panic!("wrong kind") };
        assert_eq!(t.training.seed, derive_seed(3, "training", 0));

        let mut explicit = filled.clone();
        explicit["training"]["seed"] = json!(9);
        assert_eq!(resolve_config(explicit).unwrap().1["training"]["seed"], json!(9));
    }

    #[test]
    fn config_errors_exit_with_two() {
        let no_seed = json!({"scenario": "coverage", "settings": []});
        assert_eq!(run_value(no_seed, Path::new(".")).unwrap_err().exit_code(), 2);
        let typo = json!({"scenario": "coverage", "seed": 1, "setings": []});
        assert_eq!(run_value(typo, Path::new(".")).unwrap_err().exit_code(), 2);
        let unknown = json!({"scenario": "plot", "seed": 1});
        assert_eq!(run_value(unknown, Path::new(".")).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn missing_input_names_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let value = json!({"scenario": "rank-corr", "seed": 1, "trajectory": "nowhere.json"});
        let err = run_value(value, dir.path()).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        let j = err.to_json();
        assert_eq!(j["error"]["kind"], json!("missing_path"));
        assert_eq!(j["error"]["path"], json!(dir.path().join("nowhere.json").display().to_string()));
    }

    #[test]
    fn runtime_errors_exit_with_one_and_leave_error_json() {
        let dir = tempfile::tempdir().unwrap();
        // n > L passes parsing but fails inside the simulation.
        let value = json!({"scenario": "coverage", "seed": 1, "output_dir": dir.path(),
            "settings": [{"l": 3, "n": 3, "n_train": 2, "trials": 10, "probs": {"explicit": [1.5, 1.0, 0.5]}}]});
        let err = run_value(value, Path::new(".")).unwrap_err();
        assert_eq!(err.exit_code(), 1, "{err}");
        let written: Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join(ERROR_FILE)).unwrap()).unwrap();
        assert_eq!(written, err.to_json());
        assert!(!dir.path().join(MANIFEST_FILE).exists());
    }

    #[test]
    fn class_partition_split_is_deterministic() {
        let run = |dir: &Path| {
            let value = json!({"scenario": "split", "seed": 5, "output_dir": dir, "mode": "class_partition",
                "n_classes": 12, "base": 6, "val": 3, "novel": 3});
            run_value(value, Path::new(".")).unwrap();
            std::fs::read_to_string(dir.join("split.json")).unwrap()
        };
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let text = run(a.path());
        assert_eq!(text, run(b.path()));
        let spec = crate::splits::SplitSpec::from_json(&text).unwrap();
        assert_eq!((spec.base.len(), spec.val.len(), spec.novel.len()), (6, 3, 3));
    }

    #[test]
    fn snapshot_choice_forms() {
        let parse = |v: Value| serde_json::from_value::<SnapshotChoice>(v).unwrap();
        assert_eq!(parse(json!("last")), SnapshotChoice::Last);
        assert_eq!(parse(json!({"epoch": 4})), SnapshotChoice::Epoch(4));
        assert_eq!(
            parse(json!({"strategy": "best_val_gen"})),
            SnapshotChoice::Strategy(SelectionStrategy::BestValGen)
        );
    }
}
