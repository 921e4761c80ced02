//! Benchmark split constructors: class-role partitions, within-class example
//! splits for in-distribution evaluation, and attribute-graph bipartitions.

mod spectral;

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SimRng;
use crate::sampling::{choose_distinct, partial_fisher_yates};
use crate::universe::{ClassId, ExampleSource, ItemCatalog};

pub use spectral::{
    spectral_bipartition, spectral_bipartition_with_cap, Bipartition, DEFAULT_MAX_ITERATIONS,
    DEFAULT_TOLERANCE,
};

/// Class-role assignment of a benchmark.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub base: Vec<ClassId>,
    pub val: Vec<ClassId>,
    pub novel: Vec<ClassId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub large: Option<Vec<ClassId>>,
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for (name, ids) in [("base", &self.base), ("val", &self.val), ("novel", &self.novel)] {
            for &id in ids {
                if !seen.insert(id) {
                    return Err(Error::config(format!(
                        "class {id} appears twice across roles (second time in {name})"
                    )));
                }
            }
        }
        if let Some(large) = &self.large {
            let large: HashSet<ClassId> = large.iter().copied().collect();
            if let Some(id) = seen.iter().find(|id| !large.contains(id)) {
                return Err(Error::config(format!("class {id} is missing from the large set")));
            }
        }
        Ok(())
    }

    /// Every id mentioned by any role.
    pub fn all_ids(&self) -> impl Iterator<Item = ClassId> + '_ {
        self.base
            .iter()
            .chain(&self.val)
            .chain(&self.novel)
            .chain(self.large.iter().flatten())
            .copied()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let spec: SplitSpec = serde_json::from_str(s)?;
        spec.validate()?;
        Ok(spec)
    }
}

/// Uniformly random disjoint base/val/novel subsets of the given sizes. Every
/// input class, assigned or not, goes to the large set.
pub fn random_class_partition(
    class_ids: &[ClassId],
    sizes: (usize, usize, usize),
    rng: &mut SimRng,
) -> Result<SplitSpec> {
    let (b, v, n) = sizes;
    let total = b + v + n;
    if total > class_ids.len() {
        return Err(Error::InsufficientClasses {
            needed: total,
            available: class_ids.len(),
        });
    }
    let drawn = choose_distinct(class_ids, total, rng);
    let sorted = |s: &[ClassId]| {
        let mut s = s.to_vec();
        s.sort_unstable();
        s
    };
    let mut large = class_ids.to_vec();
    large.sort_unstable();
    let spec = SplitSpec {
        base: sorted(&drawn[..b]),
        val: sorted(&drawn[b..b + v]),
        novel: sorted(&drawn[b + v..]),
        large: Some(large),
    };
    spec.validate()?;
    Ok(spec)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredExample {
    pub index: usize,
    pub features: Vec<f64>,
}

/// Finite per-class example pools.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleStore {
    dim: usize,
    classes: BTreeMap<ClassId, Vec<StoredExample>>,
}

impl ExampleStore {
    pub fn new(dim: usize) -> Self {
        ExampleStore {
            dim,
            classes: BTreeMap::new(),
        }
    }

    /// Materialise `per_class` draws of each class from `source`.
    pub fn from_source<S: ExampleSource + ?Sized>(
        source: &S,
        classes: &[ClassId],
        per_class: usize,
        rng: &mut SimRng,
    ) -> Result<Self> {
        let mut store = ExampleStore::new(source.dim());
        for &c in classes {
            let feats = source.draw(c, per_class, rng)?;
            store.insert(c, feats)?;
        }
        Ok(store)
    }

    /// Append examples to `class`, numbering them after the existing ones.
    pub fn insert(&mut self, class: ClassId, features: Vec<Vec<f64>>) -> Result<()> {
        if let Some(bad) = features.iter().find(|f| f.len() != self.dim) {
            return Err(Error::LengthMismatch(bad.len(), self.dim));
        }
        let pool = self.classes.entry(class).or_default();
        let start = pool.len();
        pool.extend(
            features
                .into_iter()
                .enumerate()
                .map(|(i, features)| StoredExample {
                    index: start + i,
                    features,
                }),
        );
        Ok(())
    }

    fn insert_stored(&mut self, class: ClassId, ex: StoredExample) {
        self.classes.entry(class).or_default().push(ex);
    }

    pub fn class_ids(&self) -> impl Iterator<Item = ClassId> + '_ {
        self.classes.keys().copied()
    }

    pub fn examples(&self, class: ClassId) -> Option<&[StoredExample]> {
        self.classes.get(&class).map(Vec::as_slice)
    }

    pub fn len(&self, class: ClassId) -> usize {
        self.classes.get(&class).map_or(0, Vec::len)
    }
}

impl ExampleSource for ExampleStore {
    fn dim(&self) -> usize {
        self.dim
    }

    fn has_class(&self, class: ClassId) -> bool {
        self.classes.contains_key(&class)
    }

    fn draw(&self, class: ClassId, count: usize, rng: &mut SimRng) -> Result<Vec<Vec<f64>>> {
        let pool = self.classes.get(&class).ok_or(Error::UnknownClass(class))?;
        if count > pool.len() {
            return Err(Error::config(format!(
                "class {class} has {} pooled examples, {count} requested",
                pool.len()
            )));
        }
        Ok(partial_fisher_yates(pool.len(), count, rng)
            .into_iter()
            .map(|i| pool[i].features.clone())
            .collect())
    }
}

/// Per class, `floor(fraction * count)` (at least one) examples go to the
/// training pool and the rest to the in-distribution evaluation pool.
pub fn within_class_example_split(
    store: &ExampleStore,
    fraction: f64,
    rng: &mut SimRng,
) -> Result<(ExampleStore, ExampleStore)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::config(format!("split fraction {fraction} outside (0, 1)")));
    }
    let mut train = ExampleStore::new(store.dim);
    let mut eval = ExampleStore::new(store.dim);
    for (&class, pool) in &store.classes {
        let count = pool.len();
        if count < 2 {
            return Err(Error::config(format!(
                "class {class} has {count} examples; at least 2 are needed to split"
            )));
        }
        // Tolerance keeps products like 0.8 * 5 = 4.000000000000001 on the right side of floor.
        let n_train = ((fraction * count as f64 + 1e-9).floor() as usize).clamp(1, count - 1);
        let order = partial_fisher_yates(count, count, rng);
        for (rank, i) in order.into_iter().enumerate() {
            let ex = pool[i].clone();
            if rank < n_train {
                train.insert_stored(class, ex);
            } else {
                eval.insert_stored(class, ex);
            }
        }
    }
    Ok((train, eval))
}

/// Attribute co-occurrence graph: `w[i][j]` counts items carrying both `i` and `j`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeGraph {
    nodes: usize,
    weights: Vec<u64>,
}

impl AttributeGraph {
    /// Graph from a dense symmetric weight matrix with zero diagonal.
    pub fn from_weights(weights: Vec<Vec<u64>>) -> Result<Self> {
        let n = weights.len();
        let mut flat = Vec::with_capacity(n * n);
        for (i, row) in weights.iter().enumerate() {
            if row.len() != n {
                return Err(Error::LengthMismatch(row.len(), n));
            }
            for (j, &w) in row.iter().enumerate() {
                if i == j && w != 0 {
                    return Err(Error::config("attribute graph diagonal must be zero"));
                }
                if weights[j][i] != w {
                    return Err(Error::config("attribute graph must be symmetric"));
                }
                flat.push(w);
            }
        }
        Ok(AttributeGraph { nodes: n, weights: flat })
    }

    /// Graph with the given unit- or integer-weighted undirected edges.
    pub fn from_edges(nodes: usize, edges: &[(usize, usize, u64)]) -> Result<Self> {
        let mut w = vec![vec![0u64; nodes]; nodes];
        for &(i, j, x) in edges {
            if i >= nodes || j >= nodes || i == j {
                return Err(Error::config(format!("invalid edge ({i}, {j})")));
            }
            w[i][j] += x;
            w[j][i] += x;
        }
        AttributeGraph::from_weights(w)
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn weight(&self, i: usize, j: usize) -> u64 {
        self.weights[i * self.nodes + j]
    }

    pub fn degree(&self, i: usize) -> u64 {
        (0..self.nodes).map(|j| self.weight(i, j)).sum()
    }

    /// Total weight of edges crossing between `a` and its complement.
    pub fn cut_weight(&self, a: &[usize]) -> u64 {
        let mut in_a = vec![false; self.nodes];
        for &i in a {
            in_a[i] = true;
        }
        let mut cut = 0;
        for i in 0..self.nodes {
            for j in 0..self.nodes {
                if in_a[i] && !in_a[j] {
                    cut += self.weight(i, j);
                }
            }
        }
        cut
    }
}

pub fn build_attribute_graph(catalog: &ItemCatalog) -> AttributeGraph {
    let n = catalog.attribute_count();
    let mut weights = vec![0u64; n * n];
    for item in catalog.items() {
        let attrs: Vec<u32> = item.attributes.iter().collect();
        for &i in &attrs {
            for &j in &attrs {
                if i != j {
                    weights[i as usize * n + j as usize] += 1;
                }
            }
        }
    }
    AttributeGraph { nodes: n, weights }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use crate::universe::{generate_item_catalog, CatalogConfig, Item};

    fn store_with(counts: &[(ClassId, usize)]) -> ExampleStore {
        let mut s = ExampleStore::new(1);
        for &(c, n) in counts {
            s.insert(c, (0..n).map(|i| vec![i as f64]).collect()).unwrap();
        }
        s
    }

    #[test]
    fn empty_partition_keeps_everything_large() {
        let ids: Vec<ClassId> = (0..10).collect();
        let s = random_class_partition(&ids, (0, 0, 0), &mut stream(0, "p", 0)).unwrap();
        assert!(s.base.is_empty() && s.val.is_empty() && s.novel.is_empty());
        assert_eq!(s.large.unwrap(), ids);
    }

    #[test]
    fn full_partition_large_is_union() {
        let ids: Vec<ClassId> = (0..10).collect();
        let s = random_class_partition(&ids, (5, 2, 3), &mut stream(1, "p", 0)).unwrap();
        let mut union: Vec<ClassId> = s.base.iter().chain(&s.val).chain(&s.novel).copied().collect();
        union.sort_unstable();
        assert_eq!(union, s.large.unwrap());
    }

    #[test]
    fn partition_overflow() {
        let ids: Vec<ClassId> = (0..4).collect();
        assert!(random_class_partition(&ids, (2, 2, 1), &mut stream(1, "p", 0)).is_err());
    }

    #[test]
    fn base_membership_frequency() {
        let ids: Vec<ClassId> = (0..12).collect();
        let seeds = 10_000;
        let mut counts = [0usize; 12];
        for seed in 0..seeds {
            let s = random_class_partition(&ids, (4, 2, 3), &mut stream(seed, "p", 0)).unwrap();
            for &c in &s.base {
                counts[c as usize] += 1;
            }
        }
        let p = 4.0 / 12.0;
        let sigma = (p * (1.0 - p) / seeds as f64).sqrt();
        for c in counts {
            assert!((c as f64 / seeds as f64 - p).abs() < 3.5 * sigma);
        }
    }

    #[test]
    fn split_sizes() {
        let s = store_with(&[(0, 100), (1, 5), (2, 2)]);
        let (train, eval) = within_class_example_split(&s, 0.8, &mut stream(0, "s", 0)).unwrap();
        assert_eq!((train.len(0), eval.len(0)), (80, 20));
        assert_eq!((train.len(1), eval.len(1)), (4, 1));
        assert_eq!((train.len(2), eval.len(2)), (1, 1));
    }

    #[test]
    fn split_pools_partition_each_class() {
        let s = store_with(&[(3, 37), (9, 64)]);
        let (train, eval) = within_class_example_split(&s, 0.7, &mut stream(2, "s", 0)).unwrap();
        for c in [3, 9] {
            let t: HashSet<usize> = train.examples(c).unwrap().iter().map(|e| e.index).collect();
            let e: HashSet<usize> = eval.examples(c).unwrap().iter().map(|e| e.index).collect();
            assert!(t.is_disjoint(&e));
            let all: HashSet<usize> = s.examples(c).unwrap().iter().map(|e| e.index).collect();
            assert_eq!(t.union(&e).copied().collect::<HashSet<_>>(), all);
        }
    }

    #[test]
    fn split_errors() {
        let s = store_with(&[(0, 1)]);
        assert!(within_class_example_split(&s, 0.8, &mut stream(0, "s", 0)).is_err());
        let s = store_with(&[(0, 10)]);
        assert!(within_class_example_split(&s, 1.0, &mut stream(0, "s", 0)).is_err());
    }

    #[test]
    fn pooled_draws_are_without_replacement() {
        let s = store_with(&[(0, 6)]);
        let mut rng = stream(0, "d", 0);
        let mut got: Vec<f64> = s.draw(0, 6, &mut rng).unwrap().into_iter().map(|v| v[0]).collect();
        got.sort_by(f64::total_cmp);
        assert_eq!(got, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        assert!(s.draw(0, 7, &mut rng).is_err());
    }

    fn catalog(sets: &[Vec<u32>], n_attr: usize) -> ItemCatalog {
        let items = sets
            .iter()
            .enumerate()
            .map(|(i, s)| Item { item_id: i as u32, attributes: s.iter().copied().collect(), feature: vec![0.0] })
            .collect();
        ItemCatalog::new(1, (0..n_attr).map(|i| i.to_string()).collect(), Vec::new(), items).unwrap()
    }

    #[test]
    fn single_attribute_items_give_empty_graph() {
        let g = build_attribute_graph(&catalog(&[vec![0], vec![1], vec![2]], 3));
        assert!((0..3).all(|i| (0..3).all(|j| g.weight(i, j) == 0)));
    }

    #[test]
    fn shared_pair_weight() {
        let g = build_attribute_graph(&catalog(&vec![vec![1, 2]; 7], 3));
        assert_eq!(g.weight(1, 2), 7);
        assert_eq!(g.weight(2, 1), 7);
        assert_eq!(g.weight(0, 1), 0);
    }

    #[test]
    fn graph_matches_triple_loop() {
        let c = generate_item_catalog(&CatalogConfig { n_items: 300, n_attributes: 10, attrs_per_item: 3, seed: 3, ..Default::default() }).unwrap();
        let g = build_attribute_graph(&c);
        for i in 0..10u32 {
            for j in 0..10u32 {
                let mut expected = 0;
                if i != j {
                    for item in c.items() {
                        if item.attributes.contains(i) && item.attributes.contains(j) {
                            expected += 1;
                        }
                    }
                }
                assert_eq!(g.weight(i as usize, j as usize), expected);
            }
        }
    }

    #[test]
    fn graph_is_relabeling_equivariant() {
        let c = generate_item_catalog(&CatalogConfig { n_items: 200, n_attributes: 8, attrs_per_item: 3, seed: 11, ..Default::default() }).unwrap();
        let perm: Vec<u32> = vec![3, 7, 0, 5, 1, 6, 2, 4];
        let relabeled: Vec<Vec<u32>> = c.items().iter().map(|it| it.attributes.iter().map(|a| perm[a as usize]).collect()).collect();
        let g = build_attribute_graph(&c);
        let h = build_attribute_graph(&catalog(&relabeled, 8));
        for i in 0..8 {
            for j in 0..8 {
                assert_eq!(g.weight(i, j), h.weight(perm[i] as usize, perm[j] as usize));
            }
        }
    }

    #[test]
    fn split_spec_validation() {
        let bad = SplitSpec { base: vec![1, 2], val: vec![2], ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = SplitSpec { base: vec![1], large: Some(vec![2]), ..Default::default() };
        assert!(bad.validate().is_err());
        let ok = SplitSpec { base: vec![1], novel: vec![3], large: Some(vec![1, 2, 3]), ..Default::default() };
        assert_eq!(SplitSpec::from_json(&ok.to_json().unwrap()).unwrap(), ok);
    }
}
