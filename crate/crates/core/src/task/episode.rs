use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{AttributePair, ClassTuple, EpisodeSpec, TaskKey};
use crate::error::{Error, Result};
use crate::rng::{stream, SimRng};
use crate::sampling::partial_fisher_yates;
use crate::splits::ExampleStore;
use crate::universe::{ClassId, ClassUniverse, ExampleSource, ItemCatalog};

/// One labelled example. `label` is the 1-based tuple position; `origin` is
/// the class id (class tasks) or item id (attribute tasks) it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub features: Vec<f64>,
    pub label: usize,
    pub origin: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub n_way: usize,
    pub support: Vec<Example>,
    pub query: Vec<Example>,
    pub task: TaskKey,
}

/// Frozen per-class support exemplars.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedSupport {
    pub k: usize,
    pub table: BTreeMap<ClassId, Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SupportSampler {
    /// Fresh support and query draws for every episode.
    Standard,
    /// Support copied from a frozen exemplar table; queries stay fresh.
    FixMl(FixedSupport),
}

/// Freeze `k` exemplars per class, each class from its own seeded stream.
pub fn make_fixml_sampler<S: ExampleSource + ?Sized>(
    source: &S,
    classes: &[ClassId],
    k: usize,
    seed: u64,
) -> Result<SupportSampler> {
    if k == 0 {
        return Err(Error::config("FixML needs at least one exemplar per class"));
    }
    let mut table = BTreeMap::new();
    for &c in classes {
        let mut rng = stream(seed, "fixml", u64::from(c));
        table.insert(c, source.draw(c, k, &mut rng)?);
    }
    Ok(SupportSampler::FixMl(FixedSupport { k, table }))
}

/// Sample one `(S, Q)` pair for a class tuple. Labels are tuple positions
/// `1..=n`; examples are grouped by label, support before query.
pub fn sample_episode<S: ExampleSource + ?Sized>(
    source: &S,
    tuple: &ClassTuple,
    spec: &EpisodeSpec,
    sampler: &SupportSampler,
    rng: &mut SimRng,
) -> Result<Episode> {
    if tuple.len() != spec.n_way {
        return Err(Error::config(format!(
            "tuple has {} classes but the episode is {}-way",
            tuple.len(),
            spec.n_way
        )));
    }
    let (k, q) = (spec.k_shot, spec.q_query);
    let mut support = Vec::with_capacity(spec.n_way * k);
    let mut query = Vec::with_capacity(spec.n_way * q);
    for (pos, &class) in tuple.classes().iter().enumerate() {
        if !source.has_class(class) {
            return Err(Error::UnknownClass(class));
        }
        let label = pos + 1;
        let make = |features| Example {
            features,
            label,
            origin: class,
        };
        match sampler {
            SupportSampler::Standard => {
                let mut drawn = source.draw(class, k + q, rng)?;
                let qs = drawn.split_off(k);
                support.extend(drawn.into_iter().map(make));
                query.extend(qs.into_iter().map(make));
            }
            SupportSampler::FixMl(fixed) => {
                let frozen = fixed.table.get(&class).ok_or(Error::MissingFixedSupport(class))?;
                if frozen.len() != k {
                    return Err(Error::config(format!(
                        "FixML table holds {} exemplars for class {class}, episode needs {k}",
                        frozen.len()
                    )));
                }
                support.extend(frozen.iter().cloned().map(make));
                query.extend(source.draw(class, q, rng)?.into_iter().map(make));
            }
        }
    }
    Ok(Episode {
        n_way: spec.n_way,
        support,
        query,
        task: TaskKey::Classes(tuple.clone()),
    })
}

/// Binary episode for an attribute pair: label 1 are items carrying both
/// attributes, label 2 the rest. `k + q` items are drawn without replacement
/// from each pool.
pub fn sample_attribute_episode(
    catalog: &ItemCatalog,
    pair: AttributePair,
    spec: &EpisodeSpec,
    rng: &mut SimRng,
) -> Result<Episode> {
    if spec.n_way != 2 {
        return Err(Error::config("attribute episodes are 2-way"));
    }
    let (a, b) = (pair.first(), pair.second());
    let (positive, negative): (Vec<usize>, Vec<usize>) = (0..catalog.items().len())
        .partition(|&i| {
            let attrs = &catalog.items()[i].attributes;
            attrs.contains(a) && attrs.contains(b)
        });
    let need = spec.k_shot + spec.q_query;
    for (pool, name) in [(&positive, "positive"), (&negative, "negative")] {
        if pool.len() < need {
            return Err(Error::InfeasiblePair(
                a,
                b,
                format!("{} {name} items, {need} needed", pool.len()),
            ));
        }
    }
    let mut support = Vec::with_capacity(2 * spec.k_shot);
    let mut query = Vec::with_capacity(2 * spec.q_query);
    for (label, pool) in [(1, &positive), (2, &negative)] {
        for (rank, i) in partial_fisher_yates(pool.len(), need, rng).into_iter().enumerate() {
            let item = &catalog.items()[pool[i]];
            let ex = Example {
                features: item.feature.clone(),
                label,
                origin: item.item_id,
            };
            if rank < spec.k_shot {
                support.push(ex);
            } else {
                query.push(ex);
            }
        }
    }
    Ok(Episode {
        n_way: 2,
        support,
        query,
        task: TaskKey::Attributes(pair),
    })
}

/// Anything that turns a sampled task into an episode.
pub trait EpisodeSource: Sync {
    fn feature_dim(&self) -> usize;

    fn episode(
        &self,
        task: &TaskKey,
        spec: &EpisodeSpec,
        sampler: &SupportSampler,
        rng: &mut SimRng,
    ) -> Result<Episode>;
}

fn class_episode<S: ExampleSource>(
    source: &S,
    task: &TaskKey,
    spec: &EpisodeSpec,
    sampler: &SupportSampler,
    rng: &mut SimRng,
) -> Result<Episode> {
    match task {
        TaskKey::Classes(t) => sample_episode(source, t, spec, sampler, rng),
        TaskKey::Attributes(_) => Err(Error::config("class-conditional source cannot serve attribute tasks")),
    }
}

impl EpisodeSource for ClassUniverse {
    fn feature_dim(&self) -> usize {
        ExampleSource::dim(self)
    }

    fn episode(&self, task: &TaskKey, spec: &EpisodeSpec, sampler: &SupportSampler, rng: &mut SimRng) -> Result<Episode> {
        class_episode(self, task, spec, sampler, rng)
    }
}

impl EpisodeSource for ExampleStore {
    fn feature_dim(&self) -> usize {
        ExampleSource::dim(self)
    }

    fn episode(&self, task: &TaskKey, spec: &EpisodeSpec, sampler: &SupportSampler, rng: &mut SimRng) -> Result<Episode> {
        class_episode(self, task, spec, sampler, rng)
    }
}

impl EpisodeSource for ItemCatalog {
    fn feature_dim(&self) -> usize {
        self.dim()
    }

    fn episode(&self, task: &TaskKey, spec: &EpisodeSpec, sampler: &SupportSampler, rng: &mut SimRng) -> Result<Episode> {
        match (task, sampler) {
            (TaskKey::Attributes(p), SupportSampler::Standard) => sample_attribute_episode(self, *p, spec, rng),
            (TaskKey::Attributes(_), SupportSampler::FixMl(_)) => {
                Err(Error::config("FixML support is only defined for class tasks"))
            }
            (TaskKey::Classes(_), _) => Err(Error::config("item catalog serves attribute-pair tasks only")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::universe::{generate_universe, Item, UniverseConfig};

    fn universe() -> ClassUniverse {
        generate_universe(&UniverseConfig::default()).unwrap()
    }

    fn label_counts(ex: &[Example], n: usize) -> Vec<usize> {
        let mut c = vec![0; n];
        for e in ex {
            c[e.label - 1] += 1;
        }
        c
    }

    #[test]
    fn minimal_episode_shape() {
        let u = universe();
        let spec = EpisodeSpec::new(2, 1, 1).unwrap();
        let t = ClassTuple::new(vec![4, 9]).unwrap();
        let e = sample_episode(&u, &t, &spec, &SupportSampler::Standard, &mut stream(0, "e", 0)).unwrap();
        assert_eq!(e.support.len(), 2);
        assert_eq!(e.query.len(), 2);
        assert_eq!(label_counts(&e.support, 2), vec![1, 1]);
        assert_eq!(label_counts(&e.query, 2), vec![1, 1]);
    }

    #[test]
    fn labels_follow_tuple_positions() {
        let u = universe();
        let spec = EpisodeSpec::new(5, 3, 4).unwrap();
        let t = ClassTuple::new(vec![12, 0, 7, 3, 19]).unwrap();
        let e = sample_episode(&u, &t, &spec, &SupportSampler::Standard, &mut stream(1, "e", 0)).unwrap();
        assert_eq!(label_counts(&e.support, 5), vec![3; 5]);
        assert_eq!(label_counts(&e.query, 5), vec![4; 5]);
        for ex in e.support.iter().chain(&e.query) {
            assert_eq!(ex.origin, t.classes()[ex.label - 1]);
        }
    }

    #[test]
    fn same_stream_same_episode() {
        let u = universe();
        let spec = EpisodeSpec::new(3, 2, 2).unwrap();
        let t = ClassTuple::new(vec![1, 2, 3]).unwrap();
        let a = sample_episode(&u, &t, &spec, &SupportSampler::Standard, &mut stream(2, "e", 0)).unwrap();
        let b = sample_episode(&u, &t, &spec, &SupportSampler::Standard, &mut stream(2, "e", 0)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn fixml_freezes_support_only() {
        let u = universe();
        let spec = EpisodeSpec::new(3, 2, 2).unwrap();
        let sampler = make_fixml_sampler(&u, u.roles().base.as_slice(), 2, 11).unwrap();
        assert_eq!(sampler, make_fixml_sampler(&u, u.roles().base.as_slice(), 2, 11).unwrap());
        assert_ne!(sampler, make_fixml_sampler(&u, u.roles().base.as_slice(), 2, 12).unwrap());
        let t = ClassTuple::new(vec![1, 2, 3]).unwrap();
        let mut rng = stream(3, "e", 0);
        let a = sample_episode(&u, &t, &spec, &sampler, &mut rng).unwrap();
        let b = sample_episode(&u, &t, &spec, &sampler, &mut rng).unwrap();
        assert_eq!(a.support, b.support);
        assert_ne!(a.query, b.query);
    }

    #[test]
    fn fixml_missing_class() {
        let u = universe();
        let spec = EpisodeSpec::new(2, 1, 1).unwrap();
        let sampler = make_fixml_sampler(&u, &[0, 1], 1, 0).unwrap();
        let t = ClassTuple::new(vec![0, 30]).unwrap();
        let r = sample_episode(&u, &t, &spec, &sampler, &mut stream(0, "e", 0));
        assert!(matches!(r, Err(Error::MissingFixedSupport(30))));
    }

    #[test]
    fn wrong_tuple_length() {
        let u = universe();
        let spec = EpisodeSpec::new(3, 1, 1).unwrap();
        let t = ClassTuple::new(vec![0, 1]).unwrap();
        assert!(sample_episode(&u, &t, &spec, &SupportSampler::Standard, &mut stream(0, "e", 0)).is_err());
    }

    fn pair_catalog(pos: usize, neg: usize) -> ItemCatalog {
        let items = (0..pos + neg)
            .map(|i| Item {
                item_id: i as u32,
                attributes: if i < pos { vec![0u32, 1, 2] } else { vec![0u32, 3] }.into(),
                feature: vec![i as f64, 0.0],
            })
            .collect();
        ItemCatalog::new(2, (0..4).map(|i| i.to_string()).collect(), Vec::new(), items).unwrap()
    }

    #[test]
    fn attribute_episode_is_balanced() {
        let c = pair_catalog(40, 40);
        let spec = EpisodeSpec::new(2, 5, 5).unwrap();
        let pair = AttributePair::new(1, 2).unwrap();
        let e = sample_attribute_episode(&c, pair, &spec, &mut stream(0, "a", 0)).unwrap();
        assert_eq!(e.support.len(), 10);
        assert_eq!(e.query.len(), 10);
        assert_eq!(label_counts(&e.support, 2), vec![5, 5]);
        for ex in e.support.iter().chain(&e.query) {
            let attrs = &c.items()[ex.origin as usize].attributes;
            assert_eq!(ex.label == 1, attrs.contains(1) && attrs.contains(2));
        }
        let mut origins: Vec<u32> = e.support.iter().chain(&e.query).map(|x| x.origin).collect();
        origins.sort_unstable();
        origins.dedup();
        assert_eq!(origins.len(), 20);
    }

    #[test]
    fn attribute_episode_without_negatives() {
        let c = pair_catalog(40, 0);
        let spec = EpisodeSpec::new(2, 5, 5).unwrap();
        let r = sample_attribute_episode(&c, AttributePair::new(1, 2).unwrap(), &spec, &mut stream(0, "a", 0));
        assert!(matches!(r, Err(Error::InfeasiblePair(1, 2, _))));
    }
}
