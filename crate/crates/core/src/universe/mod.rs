//! Synthetic class universes and attribute-tagged item catalogs.
//!
//! A [`ClassUniverse`] stands in for an image benchmark: every class is an
//! isotropic Gaussian in feature space, and classes are partitioned into
//! base / validation / novel roles plus optional extra classes that only
//! belong to the large pool.
//!
//! Base and validation class means vary only inside a "signal" subspace (the
//! first `signal_dims` coordinates). Novel and extra classes are drawn from the
//! same meta-distribution when `shift_strength` is zero. As the shift grows,
//! their means are translated along a seeded unit direction and their
//! class-to-class variation is rotated out of the signal subspace into the
//! complementary coordinates, so an embedding tuned on base classes sees
//! novel classes collapse together.

mod catalog;

use std::collections::HashMap;
use std::f64::consts::FRAC_PI_2;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, SimRng};
use crate::splits::SplitSpec;

pub use catalog::{
    feasible_attribute_pairs, generate_item_catalog, AttributeSet, CatalogConfig, Item,
    ItemCatalog,
};

pub type ClassId = u32;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub class_id: ClassId,
    pub mean: Vec<f64>,
    pub stddev: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Base,
    Val,
    Novel,
    Large,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UniverseConfig {
    pub dim: usize,
    pub n_base: usize,
    pub n_val: usize,
    pub n_novel: usize,
    /// Classes that belong only to the large pool.
    #[serde(default)]
    pub n_extra: usize,
    pub separation: f64,
    #[serde(default)]
    pub shift_strength: f64,
    #[serde(default = "default_stddev")]
    pub class_stddev: f64,
    /// Width of the subspace base classes vary in; defaults to `ceil(dim / 2)`.
    #[serde(default)]
    pub signal_dims: Option<usize>,
    pub seed: u64,
}

fn default_stddev() -> f64 {
    1.0
}

impl Default for UniverseConfig {
    fn default() -> Self {
        UniverseConfig {
            dim: 8,
            n_base: 20,
            n_val: 10,
            n_novel: 10,
            n_extra: 0,
            separation: 3.0,
            shift_strength: 0.0,
            class_stddev: 1.0,
            signal_dims: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct UniverseFile {
    version: u32,
    dim: usize,
    shift_strength: f64,
    classes: Vec<ClassSpec>,
    roles: SplitSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "UniverseFile", into = "UniverseFile")]
pub struct ClassUniverse {
    dim: usize,
    classes: Vec<ClassSpec>,
    roles: SplitSpec,
    shift_strength: f64,
    index: HashMap<ClassId, usize>,
}

impl TryFrom<UniverseFile> for ClassUniverse {
    type Error = Error;

    fn try_from(f: UniverseFile) -> Result<Self> {
        if f.version != FORMAT_VERSION {
            return Err(Error::config(format!(
                "unsupported universe format version {}",
                f.version
            )));
        }
        ClassUniverse::new(f.dim, f.classes, f.roles, f.shift_strength)
    }
}

impl From<ClassUniverse> for UniverseFile {
    fn from(u: ClassUniverse) -> Self {
        UniverseFile {
            version: FORMAT_VERSION,
            dim: u.dim,
            shift_strength: u.shift_strength,
            classes: u.classes,
            roles: u.roles,
        }
    }
}

impl ClassUniverse {
    pub fn new(
        dim: usize,
        classes: Vec<ClassSpec>,
        roles: SplitSpec,
        shift_strength: f64,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::config("universe dimension must be at least 1"));
        }
        let mut index = HashMap::with_capacity(classes.len());
        for (i, c) in classes.iter().enumerate() {
            if c.mean.len() != dim {
                return Err(Error::config(format!(
                    "class {} mean has {} entries, expected {dim}",
                    c.class_id,
                    c.mean.len()
                )));
            }
            if !(c.stddev > 0.0) || !c.stddev.is_finite() {
                return Err(Error::config(format!(
                    "class {} stddev must be positive and finite",
                    c.class_id
                )));
            }
            if index.insert(c.class_id, i).is_some() {
                return Err(Error::config(format!("duplicate class id {}", c.class_id)));
            }
        }
        roles.validate()?;
        for id in roles.all_ids() {
            if !index.contains_key(&id) {
                return Err(Error::UnknownClass(id));
            }
        }
        Ok(ClassUniverse {
            dim,
            classes,
            roles,
            shift_strength,
            index,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> &[ClassSpec] {
        &self.classes
    }

    pub fn roles(&self) -> &SplitSpec {
        &self.roles
    }

    pub fn shift_strength(&self) -> f64 {
        self.shift_strength
    }

    pub fn class(&self, id: ClassId) -> Result<&ClassSpec> {
        self.index
            .get(&id)
            .map(|&i| &self.classes[i])
            .ok_or(Error::UnknownClass(id))
    }

    pub fn contains(&self, id: ClassId) -> bool {
        self.index.contains_key(&id)
    }

    pub fn role(&self, role: Role) -> &[ClassId] {
        match role {
            Role::Base => &self.roles.base,
            Role::Val => &self.roles.val,
            Role::Novel => &self.roles.novel,
            Role::Large => self.roles.large.as_deref().unwrap_or(&[]),
        }
    }

    /// Large-pool classes outside the base, validation and novel roles.
    pub fn extra_classes(&self) -> Vec<ClassId> {
        let named: std::collections::HashSet<ClassId> = self
            .roles
            .base
            .iter()
            .chain(&self.roles.val)
            .chain(&self.roles.novel)
            .copied()
            .collect();
        self.role(Role::Large)
            .iter()
            .copied()
            .filter(|c| !named.contains(c))
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Build a universe from `config`. Class ids are assigned contiguously in the
/// order base, val, novel, extra; the large pool holds every class.
pub fn generate_universe(config: &UniverseConfig) -> Result<ClassUniverse> {
    let d = config.dim;
    if d == 0 {
        return Err(Error::config("universe dimension must be at least 1"));
    }
    if !(config.separation > 0.0) || !config.separation.is_finite() {
        return Err(Error::config("separation must be positive"));
    }
    if !(config.shift_strength >= 0.0) || !config.shift_strength.is_finite() {
        return Err(Error::config("shift_strength must be non-negative"));
    }
    if !(config.class_stddev > 0.0) || !config.class_stddev.is_finite() {
        return Err(Error::config("class_stddev must be positive"));
    }
    let signal = config.signal_dims.unwrap_or(d.div_ceil(2));
    if signal == 0 || signal > d {
        return Err(Error::config(format!(
            "signal_dims must lie in 1..={d}, got {signal}"
        )));
    }

    let sep = config.separation;
    let shift = config.shift_strength;
    let theta = FRAC_PI_2 * shift / (shift + sep);
    let direction = unit_direction(d, &mut stream(config.seed, "universe-shift", 0));

    let counts = [
        (Role::Base, config.n_base),
        (Role::Val, config.n_val),
        (Role::Novel, config.n_novel),
        (Role::Large, config.n_extra),
    ];
    let mut roles = SplitSpec::default();
    let mut classes = Vec::new();
    let mut next_id: ClassId = 0;
    for (role, count) in counts {
        for _ in 0..count {
            let id = next_id;
            next_id += 1;
            let mut rng = stream(config.seed, "universe-class", u64::from(id));
            let mut mean = vec![0.0; d];
            let shifted = matches!(role, Role::Novel | Role::Large);
            for m in mean.iter_mut().take(signal) {
                let z: f64 = rng.sample(StandardNormal);
                *m = if shifted { sep * theta.cos() * z } else { sep * z };
            }
            if shifted {
                for m in mean.iter_mut().skip(signal) {
                    let z: f64 = rng.sample(StandardNormal);
                    *m = sep * theta.sin() * z;
                }
                for (m, u) in mean.iter_mut().zip(&direction) {
                    *m += shift * u;
                }
            }
            classes.push(ClassSpec {
                class_id: id,
                mean,
                stddev: config.class_stddev,
            });
            match role {
                Role::Base => roles.base.push(id),
                Role::Val => roles.val.push(id),
                Role::Novel => roles.novel.push(id),
                Role::Large => {}
            }
        }
    }
    roles.large = Some((0..next_id).collect());
    ClassUniverse::new(d, classes, roles, shift)
}

fn unit_direction(d: usize, rng: &mut SimRng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleBatch {
    pub features: Vec<Vec<f64>>,
    pub source_class: ClassId,
}

/// `count` iid draws from the Gaussian of `class_id`.
pub fn sample_examples(
    universe: &ClassUniverse,
    class_id: ClassId,
    count: usize,
    rng: &mut SimRng,
) -> Result<ExampleBatch> {
    if count == 0 {
        return Err(Error::config("example count must be at least 1"));
    }
    let spec = universe.class(class_id)?;
    let features = (0..count)
        .map(|_| {
            spec.mean
                .iter()
                .map(|&m| {
                    let z: f64 = rng.sample(StandardNormal);
                    m + spec.stddev * z
                })
                .collect()
        })
        .collect();
    Ok(ExampleBatch {
        features,
        source_class: class_id,
    })
}

/// Anything that can hand out class-conditional examples.
///
/// A single call returns distinct examples: finite pools draw without
/// replacement, the Gaussian universe draws fresh samples.
pub trait ExampleSource: Sync {
    fn dim(&self) -> usize;
    fn has_class(&self, class: ClassId) -> bool;
    fn draw(&self, class: ClassId, count: usize, rng: &mut SimRng) -> Result<Vec<Vec<f64>>>;
}

impl ExampleSource for ClassUniverse {
    fn dim(&self) -> usize {
        self.dim
    }

    fn has_class(&self, class: ClassId) -> bool {
        self.contains(class)
    }

    fn draw(&self, class: ClassId, count: usize, rng: &mut SimRng) -> Result<Vec<Vec<f64>>> {
        Ok(sample_examples(self, class, count, rng)?.features)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean_pairwise(a: &[&[f64]], b: &[&[f64]], skip_same: bool) -> f64 {
        let mut total = 0.0;
        let mut n = 0usize;
        for (i, x) in a.iter().enumerate() {
            for (j, y) in b.iter().enumerate() {
                if skip_same && i == j {
                    continue;
                }
                total += x.iter().zip(y.iter()).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
                n += 1;
            }
        }
        total / n as f64
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = UniverseConfig {
            seed: 17,
            shift_strength: 2.0,
            ..Default::default()
        };
        let a = generate_universe(&cfg).unwrap();
        let b = generate_universe(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    }

    #[test]
    fn zero_shift_puts_novel_in_base_meta_distribution() {
        let cfg = UniverseConfig {
            dim: 6,
            signal_dims: Some(3),
            ..Default::default()
        };
        let u = generate_universe(&cfg).unwrap();
        for &id in u.role(Role::Novel) {
            let m = &u.class(id).unwrap().mean;
            assert!(m[3..].iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn roles_are_disjoint_and_covered_by_large() {
        let cfg = UniverseConfig {
            n_extra: 7,
            ..Default::default()
        };
        let u = generate_universe(&cfg).unwrap();
        assert_eq!(u.role(Role::Large).len(), 47);
        assert_eq!(u.extra_classes().len(), 7);
        u.roles().validate().unwrap();
    }

    #[test]
    fn strong_shift_separates_novel_from_base() {
        let mut wins = 0;
        let seeds = 1000;
        for seed in 0..seeds {
            let cfg = UniverseConfig {
                dim: 4,
                n_base: 6,
                n_val: 0,
                n_novel: 6,
                separation: 1.0,
                shift_strength: 10.0,
                seed,
                ..Default::default()
            };
            let u = generate_universe(&cfg).unwrap();
            let base: Vec<&[f64]> = u.role(Role::Base).iter().map(|&c| u.class(c).unwrap().mean.as_slice()).collect();
            let novel: Vec<&[f64]> = u.role(Role::Novel).iter().map(|&c| u.class(c).unwrap().mean.as_slice()).collect();
            if mean_pairwise(&base, &novel, false) > mean_pairwise(&base, &base, true) {
                wins += 1;
            }
        }
        assert_eq!(wins, seeds);
    }

    #[test]
    fn config_errors() {
        let bad_dim = UniverseConfig { dim: 0, ..Default::default() };
        assert!(generate_universe(&bad_dim).is_err());
        let bad_sep = UniverseConfig { separation: 0.0, ..Default::default() };
        assert!(generate_universe(&bad_sep).is_err());
        let u = generate_universe(&UniverseConfig::default()).unwrap();
        let mut rng = stream(0, "t", 0);
        assert!(matches!(sample_examples(&u, 999, 1, &mut rng), Err(Error::UnknownClass(999))));
        assert!(sample_examples(&u, 0, 0, &mut rng).is_err());
    }

    #[test]
    fn degenerate_gaussian_returns_mean() {
        let classes = vec![ClassSpec { class_id: 3, mean: vec![1.5, -2.0], stddev: 1e-12 }];
        let roles = SplitSpec { base: vec![3], ..Default::default() };
        let u = ClassUniverse::new(2, classes, roles, 0.0).unwrap();
        let batch = sample_examples(&u, 3, 50, &mut stream(1, "t", 0)).unwrap();
        for x in &batch.features {
            assert!((x[0] - 1.5).abs() < 1e-6 && (x[1] + 2.0).abs() < 1e-6);
        }
    }

    #[test]
    fn sample_mean_within_clt_bound() {
        let classes = vec![ClassSpec { class_id: 0, mean: vec![0.3, -1.0], stddev: 2.0 }];
        let roles = SplitSpec { base: vec![0], ..Default::default() };
        let u = ClassUniverse::new(2, classes, roles, 0.0).unwrap();
        let batch = sample_examples(&u, 0, 10_000, &mut stream(4, "t", 0)).unwrap();
        let bound = 5.0 * 2.0 / 100.0;
        for k in 0..2 {
            let m = batch.features.iter().map(|x| x[k]).sum::<f64>() / 10_000.0;
            assert!((m - u.class(0).unwrap().mean[k]).abs() < bound);
        }
    }

    #[test]
    fn covariance_converges_to_isotropic() {
        let d = 4;
        let stddev = 1.5;
        let classes = vec![ClassSpec { class_id: 0, mean: vec![1.0; d], stddev }];
        let roles = SplitSpec { base: vec![0], ..Default::default() };
        let u = ClassUniverse::new(d, classes, roles, 0.0).unwrap();
        let n = 100_000;
        let batch = sample_examples(&u, 0, n, &mut stream(8, "t", 0)).unwrap();
        let mut cov = vec![vec![0.0; d]; d];
        for x in &batch.features {
            for i in 0..d {
                for j in 0..d {
                    cov[i][j] += (x[i] - 1.0) * (x[j] - 1.0);
                }
            }
        }
        let var = stddev * stddev;
        let mut frob = 0.0;
        for i in 0..d {
            for j in 0..d {
                let target = if i == j { var } else { 0.0 };
                frob += (cov[i][j] / n as f64 - target).powi(2);
            }
        }
        assert!(frob.sqrt() < 0.05 * var, "frobenius error {}", frob.sqrt());
    }

    #[test]
    fn same_stream_same_batch() {
        let u = generate_universe(&UniverseConfig::default()).unwrap();
        let a = sample_examples(&u, 2, 5, &mut stream(3, "t", 0)).unwrap();
        let b = sample_examples(&u, 2, 5, &mut stream(3, "t", 0)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn json_round_trip_revalidates() {
        let u = generate_universe(&UniverseConfig::default()).unwrap();
        let back = ClassUniverse::from_json(&u.to_json().unwrap()).unwrap();
        assert_eq!(u, back);
        let bad = u.to_json().unwrap().replacen("\"version\": 1", "\"version\": 9", 1);
        assert!(ClassUniverse::from_json(&bad).is_err());
    }
}
