use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fsl_eval::scenario::{read_config_value, run_value, ScenarioError};
use serde_json::{json, Map, Value};

/// Run few-shot evaluation scenarios from JSON configs.
///
/// Prints the run manifest on success. On failure prints a JSON error to
/// stderr and exits 2 for config problems, 1 for runtime errors.
#[derive(Parser, Debug)]
#[command(name = "fsl-eval", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a scenario config file as is (apart from --set/--seed/--output-dir).
    Run {
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Coverage bound verification.
    Coverage(CoverageArgs),
    /// Conclusion flips over random class subsets.
    Flip(FlipArgs),
    /// Rank correlation and snapshot selection over an evaluated trajectory.
    RankCorr(RankCorrArgs),
    /// Meta-train a learner and record its snapshot trajectory.
    Train(TrainArgs),
    /// Accuracy along the base-to-novel interpolation.
    Sweep(SweepArgs),
    /// Build a benchmark split.
    Split(SplitArgs),
}

#[derive(Args, Debug, Default)]
struct Common {
    /// Master seed, overriding the config's.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, overriding the config's.
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Worker threads; outputs do not depend on it.
    #[arg(long, env = "FSL_EVAL_WORKERS")]
    workers: Option<usize>,
    /// Override any config field: `--set training.epochs=5`. The value is
    /// parsed as JSON, falling back to a plain string.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Args, Debug)]
struct Base {
    /// Config file to start from; inline flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct CoverageArgs {
    #[command(flatten)]
    base: Base,
    /// Number of classes.
    #[arg(long)]
    l: Option<usize>,
    /// Classes per task.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    n_test: Option<usize>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    eta: Option<f64>,
}

#[derive(Args, Debug)]
struct FlipArgs {
    #[command(flatten)]
    base: Base,
    #[arg(long, value_delimiter = ',')]
    subset_sizes: Option<Vec<usize>>,
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long)]
    tasks_per_eval: Option<usize>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
}

#[derive(Args, Debug)]
struct RankCorrArgs {
    #[command(flatten)]
    base: Base,
    /// Evaluated trajectory JSON.
    #[arg(long)]
    trajectory: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    windows: Option<Vec<usize>>,
    #[arg(long)]
    dist_a: Option<String>,
    #[arg(long)]
    dist_b: Option<String>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    base: Base,
    /// Universe JSON to train on.
    #[arg(long)]
    universe: Option<PathBuf>,
    /// proto, ridge, svm or fomaml; other learner fields come from the config.
    #[arg(long)]
    learner: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    episodes_per_epoch: Option<usize>,
    #[arg(long)]
    lr_schedule: Option<String>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    base: Base,
    #[arg(long)]
    universe: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    lambdas: Option<Vec<f64>>,
    #[arg(long)]
    n_tasks: Option<usize>,
}

#[derive(Args, Debug)]
struct SplitArgs {
    #[command(flatten)]
    base: Base,
    /// class_partition, attribute or examples.
    #[arg(long)]
    mode: Option<String>,
}

/// Sets `value` at a dotted key path, creating objects on the way.
fn set_path(root: &mut Value, key: &str, value: Value) -> Result<(), String> {
    let mut cur = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if part.is_empty() {
            return Err(format!("bad key '{key}'"));
        }
        if !cur.is_object() {
            if !cur.is_null() {
                return Err(format!("'{key}': '{part}' is inside a non-object value"));
            }
            *cur = Value::Object(Map::new());
        }
        let map = cur.as_object_mut().expect("object");
        if i + 1 == parts.len() {
            map.insert(part.to_string(), value);
            return Ok(());
        }
        cur = map.entry(part.to_string()).or_insert(Value::Null);
    }
    Ok(())
}

fn parse_set(arg: &str) -> Result<(String, Value), String> {
    let (key, raw) = arg.split_once('=').ok_or_else(|| format!("--set expects KEY=VALUE, got '{arg}'"))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok((key.to_string(), value))
}

fn absolute(p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        std::env::current_dir().map(|d| d.join(p)).unwrap_or_else(|_| p.to_path_buf())
    }
}

fn path_value(p: &Path) -> Value {
    Value::String(absolute(p).display().to_string())
}

/// The config to run plus the directory its relative paths resolve against.
struct Job {
    config: Value,
    base_dir: PathBuf,
    overrides: Vec<(String, Value)>,
}

impl Job {
    /// `scenario` replaces the file's scenario name when given.
    fn load(config: Option<&Path>, scenario: Option<&str>) -> Result<Self, ScenarioError> {
        let (mut value, base_dir) = match config {
            Some(p) => (read_config_value(p)?, p.parent().map(Path::to_path_buf).unwrap_or_default()),
            None => (json!({}), PathBuf::new()),
        };
        if !value.is_object() {
            return Err(ScenarioError::Config("config must be a JSON object".into()));
        }
        if let Some(name) = scenario {
            value["scenario"] = Value::String(name.into());
        }
        Ok(Job {
            config: value,
            base_dir,
            overrides: Vec::new(),
        })
    }

    fn set(&mut self, key: &str, value: Option<impl Into<Value>>) {
        if let Some(v) = value {
            self.overrides.push((key.to_string(), v.into()));
        }
    }

    fn set_path(&mut self, key: &str, path: Option<&Path>) {
        self.set(key, path.map(path_value));
    }

    fn run(mut self, common: &Common) -> Result<Value, ScenarioError> {
        if let Some(seed) = common.seed {
            self.overrides.push(("seed".into(), seed.into()));
        }
        if let Some(dir) = &common.output_dir {
            self.overrides.push(("output_dir".into(), path_value(dir)));
        }
        for arg in &common.sets {
            self.overrides.push(parse_set(arg).map_err(ScenarioError::Config)?);
        }
        for (key, value) in self.overrides {
            set_path(&mut self.config, &key, value).map_err(ScenarioError::Config)?;
        }
        let manifest = run_value(self.config, &self.base_dir)?;
        Ok(serde_json::to_value(manifest).unwrap_or(Value::Null))
    }
}

fn execute(command: Command) -> Result<Value, ScenarioError> {
    match command {
        Command::Run { config, common } => {
            Job::load(Some(&config), None)?.run(&common)
        }
        Command::Coverage(a) => {
            let mut job = Job::load(a.base.config.as_deref(), Some("coverage"))?;
            job.set("settings.0.l", a.l);
            job.set("settings.0.n", a.n);
            job.set("settings.0.n_train", a.n_train);
            job.set("settings.0.n_test", a.n_test);
            job.set("settings.0.gamma", a.gamma);
            job.set("settings.0.trials", a.trials);
            job.set("settings.0.eta", a.eta);
            settings_as_array(&mut job);
            job.run(&a.base.common)
        }
        Command::Flip(a) => {
            let mut job = Job::load(a.base.config.as_deref(), Some("flip"))?;
            job.set("subset_sizes", a.subset_sizes);
            job.set("repeats", a.repeats);
            job.set("tasks_per_eval", a.tasks_per_eval);
            job.set("epsilon", a.epsilon);
            job.set("delta", a.delta);
            job.run(&a.base.common)
        }
        Command::RankCorr(a) => {
            let mut job = Job::load(a.base.config.as_deref(), Some("rank-corr"))?;
            job.set_path("trajectory", a.trajectory.as_deref());
            job.set("windows", a.windows);
            job.set("dist_a", a.dist_a);
            job.set("dist_b", a.dist_b);
            job.run(&a.base.common)
        }
        Command::Train(a) => {
            let mut job = Job::load(a.base.config.as_deref(), Some("train"))?;
            job.set("universe", a.universe.as_deref().map(|p| json!({ "path": path_value(p) })));
            job.set("learner.kind", a.learner);
            job.set("training.epochs", a.epochs);
            job.set("training.episodes_per_epoch", a.episodes_per_epoch);
            job.set("training.lr_schedule", a.lr_schedule);
            job.run(&a.base.common)
        }
        Command::Sweep(a) => {
            let mut job = Job::load(a.base.config.as_deref(), Some("interpolate-sweep"))?;
            job.set("universe", a.universe.as_deref().map(|p| json!({ "path": path_value(p) })));
            job.set("lambdas", a.lambdas);
            job.set("n_tasks", a.n_tasks);
            job.run(&a.base.common)
        }
        Command::Split(a) => {
            let mut job = Job::load(a.base.config.as_deref(), Some("split"))?;
            job.set("mode", a.mode);
            job.run(&a.base.common)
        }
    }
}

/// `settings.0.*` overrides address the first coverage setting; turn the
/// object keyed "0" that `set_path` builds into an array element.
fn settings_as_array(job: &mut Job) {
    let (first, rest): (Vec<_>, Vec<_>) = std::mem::take(&mut job.overrides)
        .into_iter()
        .partition(|(k, _)| k.starts_with("settings.0."));
    job.overrides = rest;
    if first.is_empty() {
        return;
    }
    let settings = job.config.get_mut("settings").and_then(Value::as_array_mut);
    let mut setting = settings
        .as_ref()
        .and_then(|s| s.first().cloned())
        .unwrap_or_else(|| json!({}));
    for (k, v) in first {
        setting[&k["settings.0.".len()..]] = v;
    }
    match job.config.get_mut("settings").and_then(Value::as_array_mut) {
        Some(s) if !s.is_empty() => s[0] = setting,
        _ => job.config["settings"] = json!([setting]),
    }
}

fn workers(command: &Command) -> Option<usize> {
    let common = match command {
        Command::Run { common, .. } => common,
        Command::Coverage(a) => &a.base.common,
        Command::Flip(a) => &a.base.common,
        Command::RankCorr(a) => &a.base.common,
        Command::Train(a) => &a.base.common,
        Command::Sweep(a) => &a.base.common,
        Command::Split(a) => &a.base.common,
    };
    common.workers
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = workers(&cli.command) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("warning: could not set worker count: {e}");
        }
    }
    match execute(cli.command) {
        Ok(manifest) => {
            println!("{}", serde_json::to_string_pretty(&manifest).unwrap_or_default());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", serde_json::to_string_pretty(&e.to_json()).unwrap_or_default());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn set_path_builds_nested_objects() {
        let mut v = json!({"training": {"epochs": 3}});
        set_path(&mut v, "training.epochs", json!(5)).unwrap();
        set_path(&mut v, "universe.generate.dim", json!(4)).unwrap();
        assert_eq!(v, json!({"training": {"epochs": 5}, "universe": {"generate": {"dim": 4}}}));
        assert!(set_path(&mut v, "training.epochs.x", json!(1)).is_err());
        assert!(set_path(&mut v, "a..b", json!(1)).is_err());
    }

    #[test]
    fn set_values_parse_as_json_or_string() {
        assert_eq!(parse_set("a=3").unwrap(), ("a".into(), json!(3)));
        assert_eq!(parse_set("a=[1,2]").unwrap(), ("a".into(), json!([1, 2])));
        assert_eq!(parse_set("a=proto").unwrap(), ("a".into(), json!("proto")));
        assert!(parse_set("novalue").is_err());
    }

    #[test]
    fn coverage_flags_edit_first_setting() {
        let mut job = Job {
            config: json!({"settings": [{"l": 10, "n": 3, "n_train": 5}, {"l": 20, "n": 2, "n_train": 4}]}),
            base_dir: PathBuf::new(),
            overrides: Vec::new(),
        };
        job.set("settings.0.l", Some(12));
        job.set("seed", Some(1));
        settings_as_array(&mut job);
        assert_eq!(job.config["settings"][0]["l"], json!(12));
        assert_eq!(job.config["settings"][1]["l"], json!(20));
        assert_eq!(job.overrides.len(), 1);

        let mut job = Job {
            config: json!({}),
            base_dir: PathBuf::new(),
            overrides: Vec::new(),
        };
        job.set("settings.0.n", Some(3));
        settings_as_array(&mut job);
        assert_eq!(job.config["settings"], json!([{"n": 3}]));
    }
}
