//! Tasks, task distributions and `(S, Q)` episode sampling.
//!
//! A task is identified by an ordered, non-repeating class tuple or by an
//! attribute pair. [`TaskDistribution`] covers uniform tuples over a class
//! set, base/novel interpolation, uniform attribute pairs and finite task
//! lists.

mod episode;

use std::collections::HashSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SimRng;
use crate::sampling::choose_distinct;
use crate::universe::ClassId;

pub use episode::{
    make_fixml_sampler, sample_attribute_episode, sample_episode, Episode, EpisodeSource, Example,
    FixedSupport, SupportSampler,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawSpec")]
pub struct EpisodeSpec {
    pub n_way: usize,
    pub k_shot: usize,
    pub q_query: usize,
}

#[derive(Deserialize)]
struct RawSpec {
    n_way: usize,
    k_shot: usize,
    q_query: usize,
}

impl TryFrom<RawSpec> for EpisodeSpec {
    type Error = Error;

    fn try_from(r: RawSpec) -> Result<Self> {
        EpisodeSpec::new(r.n_way, r.k_shot, r.q_query)
    }
}

impl EpisodeSpec {
    pub fn new(n_way: usize, k_shot: usize, q_query: usize) -> Result<Self> {
        if n_way < 2 {
            return Err(Error::config(format!("n_way must be at least 2, got {n_way}")));
        }
        if k_shot == 0 || q_query == 0 {
            return Err(Error::config("k_shot and q_query must be at least 1"));
        }
        Ok(EpisodeSpec {
            n_way,
            k_shot,
            q_query,
        })
    }
}

/// Ordered class tuple with pairwise distinct entries.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<ClassId>", into = "Vec<ClassId>")]
pub struct ClassTuple(Vec<ClassId>);

impl ClassTuple {
    pub fn new(classes: Vec<ClassId>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(classes.len());
        if let Some(&dup) = classes.iter().find(|c| !seen.insert(**c)) {
            return Err(Error::config(format!("class {dup} repeated in tuple")));
        }
        Ok(ClassTuple(classes))
    }

    pub fn classes(&self) -> &[ClassId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<Vec<ClassId>> for ClassTuple {
    type Error = Error;

    fn try_from(v: Vec<ClassId>) -> Result<Self> {
        ClassTuple::new(v)
    }
}

impl From<ClassTuple> for Vec<ClassId> {
    fn from(t: ClassTuple) -> Self {
        t.0
    }
}

/// Pair of distinct attributes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "[u32; 2]", into = "[u32; 2]")]
pub struct AttributePair(u32, u32);

impl AttributePair {
    pub fn new(a: u32, b: u32) -> Result<Self> {
        if a == b {
            return Err(Error::config(format!("attribute pair repeats attribute {a}")));
        }
        Ok(AttributePair(a, b))
    }

    pub fn first(&self) -> u32 {
        self.0
    }

    pub fn second(&self) -> u32 {
        self.1
    }
}

impl TryFrom<[u32; 2]> for AttributePair {
    type Error = Error;

    fn try_from(v: [u32; 2]) -> Result<Self> {
        AttributePair::new(v[0], v[1])
    }
}

impl From<AttributePair> for [u32; 2] {
    fn from(p: AttributePair) -> Self {
        [p.0, p.1]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKey {
    Classes(ClassTuple),
    Attributes(AttributePair),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    Classes,
    Attributes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskDistribution {
    /// Uniform over ordered non-repeating tuples of `classes`.
    UniformTuple { classes: Vec<ClassId> },
    /// Each position comes from `novel` with probability `lambda`, else from `base`.
    Interpolated {
        base: Vec<ClassId>,
        novel: Vec<ClassId>,
        lambda: f64,
    },
    /// Uniform over ordered pairs of distinct attributes from `attributes`.
    AttributeSet { attributes: Vec<u32> },
    /// Uniform over an explicit pair list.
    AttributePairs { pairs: Vec<AttributePair> },
    /// Uniform over a fixed list of tasks.
    FiniteTaskList { tasks: Vec<TaskKey> },
}

impl TaskDistribution {
    pub fn uniform(classes: Vec<ClassId>) -> Result<Self> {
        let d = TaskDistribution::UniformTuple { classes };
        d.validate()?;
        Ok(d)
    }

    pub fn interpolated(base: Vec<ClassId>, novel: Vec<ClassId>, lambda: f64) -> Result<Self> {
        let d = TaskDistribution::Interpolated { base, novel, lambda };
        d.validate()?;
        Ok(d)
    }

    pub fn finite(tasks: Vec<TaskKey>) -> Result<Self> {
        let d = TaskDistribution::FiniteTaskList { tasks };
        d.validate()?;
        Ok(d)
    }

    /// Finite task list from a JSON array of tuples (`[[1,2],[3,4]]`),
    /// read as class tuples or attribute pairs according to `kind`.
    pub fn finite_from_json(json: &str, kind: TaskKind) -> Result<Self> {
        let tasks = match kind {
            TaskKind::Classes => serde_json::from_str::<Vec<ClassTuple>>(json)?
                .into_iter()
                .map(TaskKey::Classes)
                .collect(),
            TaskKind::Attributes => serde_json::from_str::<Vec<AttributePair>>(json)?
                .into_iter()
                .map(TaskKey::Attributes)
                .collect(),
        };
        TaskDistribution::finite(tasks)
    }

    pub fn validate(&self) -> Result<()> {
        fn distinct<T: std::hash::Hash + Eq + Copy + std::fmt::Display>(v: &[T], what: &str) -> Result<()> {
            let mut seen = HashSet::with_capacity(v.len());
            match v.iter().find(|x| !seen.insert(**x)) {
                Some(dup) => Err(Error::config(format!("{what} lists {dup} twice"))),
                None => Ok(()),
            }
        }
        match self {
            TaskDistribution::UniformTuple { classes } => distinct(classes, "class set"),
            TaskDistribution::Interpolated { base, novel, lambda } => {
                check_interpolation(base, novel, *lambda)?;
                distinct(base, "base set")?;
                distinct(novel, "novel set")
            }
            TaskDistribution::AttributeSet { attributes } => distinct(attributes, "attribute set"),
            TaskDistribution::AttributePairs { pairs } => {
                if pairs.is_empty() {
                    return Err(Error::config("attribute pair list is empty"));
                }
                Ok(())
            }
            TaskDistribution::FiniteTaskList { tasks } => {
                if tasks.is_empty() {
                    return Err(Error::config("finite task list is empty"));
                }
                Ok(())
            }
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let d: TaskDistribution = serde_json::from_str(s)?;
        d.validate()?;
        Ok(d)
    }

    /// Draw one `n`-way task.
    pub fn sample(&self, n: usize, rng: &mut SimRng) -> Result<TaskKey> {
        match self {
            TaskDistribution::UniformTuple { .. } | TaskDistribution::Interpolated { .. } => {
                sample_class_tuple(self, n, rng).map(TaskKey::Classes)
            }
            TaskDistribution::AttributeSet { attributes } => {
                require_pair_way(n)?;
                if attributes.len() < 2 {
                    return Err(Error::InsufficientClasses {
                        needed: 2,
                        available: attributes.len(),
                    });
                }
                let p = choose_distinct(attributes, 2, rng);
                Ok(TaskKey::Attributes(AttributePair::new(p[0], p[1])?))
            }
            TaskDistribution::AttributePairs { pairs } => {
                require_pair_way(n)?;
                Ok(TaskKey::Attributes(pairs[rng.random_range(0..pairs.len())]))
            }
            TaskDistribution::FiniteTaskList { tasks } => {
                let t = &tasks[rng.random_range(0..tasks.len())];
                check_task_way(t, n)?;
                Ok(t.clone())
            }
        }
    }
}

fn require_pair_way(n: usize) -> Result<()> {
    if n != 2 {
        return Err(Error::config(format!(
            "attribute-pair tasks are 2-way, requested {n}-way"
        )));
    }
    Ok(())
}

fn check_task_way(task: &TaskKey, n: usize) -> Result<()> {
    match task {
        TaskKey::Classes(t) if t.len() != n => Err(Error::config(format!(
            "task list entry has {} classes, requested {n}-way",
            t.len()
        ))),
        TaskKey::Attributes(_) => require_pair_way(n),
        _ => Ok(()),
    }
}

fn check_interpolation(base: &[ClassId], novel: &[ClassId], lambda: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::config(format!("lambda {lambda} outside [0, 1]")));
    }
    if base.is_empty() || novel.is_empty() {
        return Err(Error::config("interpolation needs non-empty base and novel sets"));
    }
    let b: HashSet<ClassId> = base.iter().copied().collect();
    if let Some(c) = novel.iter().find(|c| b.contains(c)) {
        return Err(Error::config(format!("class {c} is in both base and novel sets")));
    }
    Ok(())
}

/// Draw an `n`-way class tuple from a class-valued distribution.
pub fn sample_class_tuple(dist: &TaskDistribution, n: usize, rng: &mut SimRng) -> Result<ClassTuple> {
    match dist {
        TaskDistribution::UniformTuple { classes } => {
            if n > classes.len() {
                return Err(Error::InsufficientClasses {
                    needed: n,
                    available: classes.len(),
                });
            }
            Ok(ClassTuple(choose_distinct(classes, n, rng)))
        }
        TaskDistribution::Interpolated { base, novel, lambda } => {
            sample_interpolated_tuple(base, novel, *lambda, n, rng)
        }
        TaskDistribution::FiniteTaskList { .. } => match dist.sample(n, rng)? {
            TaskKey::Classes(t) => Ok(t),
            TaskKey::Attributes(_) => Err(Error::config("task list holds attribute pairs, not class tuples")),
        },
        _ => Err(Error::config("distribution yields attribute pairs, not class tuples")),
    }
}

/// Sequential interpolated draw: every position picks the novel set with
/// probability `lambda` (base otherwise) and takes a uniformly chosen unused
/// class from it, falling back to the other set once one is exhausted.
///
/// At `lambda` 0 or 1 the draw is exactly the uniform tuple draw over the
/// base or novel set (same random stream consumption).
pub fn sample_interpolated_tuple(
    base: &[ClassId],
    novel: &[ClassId],
    lambda: f64,
    n: usize,
    rng: &mut SimRng,
) -> Result<ClassTuple> {
    check_interpolation(base, novel, lambda)?;
    if n > base.len() + novel.len() {
        return Err(Error::InsufficientClasses {
            needed: n,
            available: base.len() + novel.len(),
        });
    }
    if lambda == 0.0 && n <= base.len() {
        return Ok(ClassTuple(choose_distinct(base, n, rng)));
    }
    if lambda == 1.0 && n <= novel.len() {
        return Ok(ClassTuple(choose_distinct(novel, n, rng)));
    }
    let mut pools = [base.to_vec(), novel.to_vec()];
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let mut src = usize::from(rng.random_bool(lambda));
        if pools[src].is_empty() {
            src = 1 - src;
        }
        let k = rng.random_range(0..pools[src].len());
        out.push(pools[src].swap_remove(k));
    }
    Ok(ClassTuple(out))
}
