use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::FORMAT_VERSION;
use crate::error::{Error, Result};
use crate::rng::stream;
use crate::sampling::choose_distinct;

/// Bitset over attribute ids. Serialised as a sorted id list.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "Vec<u32>", into = "Vec<u32>")]
pub struct AttributeSet(Vec<u64>);

impl AttributeSet {
    pub fn insert(&mut self, attr: u32) {
        let (word, bit) = (attr as usize / 64, attr % 64);
        if self.0.len() <= word {
            self.0.resize(word + 1, 0);
        }
        self.0[word] |= 1 << bit;
    }

    pub fn contains(&self, attr: u32) -> bool {
        let (word, bit) = (attr as usize / 64, attr % 64);
        self.0.get(word).is_some_and(|w| w & (1 << bit) != 0)
    }

    pub fn len(&self) -> usize {
        self.0.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.0.iter().all(|&w| w == 0)
    }

    pub fn iter(&self) -> impl Iterator<Item = u32> + '_ {
        self.0.iter().enumerate().flat_map(|(wi, &w)| {
            (0..64u32)
                .filter(move |b| w & (1 << b) != 0)
                .map(move |b| wi as u32 * 64 + b)
        })
    }

    /// Largest id plus one, or zero when empty.
    pub fn bound(&self) -> u32 {
        self.iter().last().map_or(0, |a| a + 1)
    }
}

impl FromIterator<u32> for AttributeSet {
    fn from_iter<I: IntoIterator<Item = u32>>(iter: I) -> Self {
        let mut s = AttributeSet::default();
        for a in iter {
            s.insert(a);
        }
        s
    }
}

impl From<Vec<u32>> for AttributeSet {
    fn from(v: Vec<u32>) -> Self {
        v.into_iter().collect()
    }
}

impl From<AttributeSet> for Vec<u32> {
    fn from(s: AttributeSet) -> Self {
        s.iter().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Item {
    pub item_id: u32,
    pub attributes: AttributeSet,
    pub feature: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CatalogFile", into = "CatalogFile")]
pub struct ItemCatalog {
    dim: usize,
    attribute_names: Vec<String>,
    /// Generator block of each attribute (empty for imported catalogs).
    attribute_blocks: Vec<u8>,
    items: Vec<Item>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CatalogFile {
    version: u32,
    dim: usize,
    attribute_names: Vec<String>,
    #[serde(default)]
    attribute_blocks: Vec<u8>,
    items: Vec<Item>,
}

impl TryFrom<CatalogFile> for ItemCatalog {
    type Error = Error;

    fn try_from(f: CatalogFile) -> Result<Self> {
        if f.version != FORMAT_VERSION {
            return Err(Error::config(format!(
                "unsupported catalog format version {}",
                f.version
            )));
        }
        ItemCatalog::new(f.dim, f.attribute_names, f.attribute_blocks, f.items)
    }
}

impl From<ItemCatalog> for CatalogFile {
    fn from(c: ItemCatalog) -> Self {
        CatalogFile {
            version: FORMAT_VERSION,
            dim: c.dim,
            attribute_names: c.attribute_names,
            attribute_blocks: c.attribute_blocks,
            items: c.items,
        }
    }
}

impl ItemCatalog {
    pub fn new(
        dim: usize,
        attribute_names: Vec<String>,
        attribute_blocks: Vec<u8>,
        items: Vec<Item>,
    ) -> Result<Self> {
        let n_attr = attribute_names.len() as u32;
        if !attribute_blocks.is_empty() && attribute_blocks.len() != attribute_names.len() {
            return Err(Error::config("attribute_blocks must match attribute_names"));
        }
        let mut seen = std::collections::HashSet::with_capacity(items.len());
        for item in &items {
            if !seen.insert(item.item_id) {
                return Err(Error::config(format!("duplicate item id {}", item.item_id)));
            }
            if item.attributes.bound() > n_attr {
                return Err(Error::config(format!(
                    "item {} references attribute {} but only {n_attr} exist",
                    item.item_id,
                    item.attributes.bound() - 1
                )));
            }
            if item.feature.len() != dim {
                return Err(Error::config(format!(
                    "item {} feature has {} entries, expected {dim}",
                    item.item_id,
                    item.feature.len()
                )));
            }
        }
        Ok(ItemCatalog {
            dim,
            attribute_names,
            attribute_blocks,
            items,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn items(&self) -> &[Item] {
        &self.items
    }

    pub fn attribute_names(&self) -> &[String] {
        &self.attribute_names
    }

    pub fn attribute_count(&self) -> usize {
        self.attribute_names.len()
    }

    pub fn attribute_blocks(&self) -> &[u8] {
        &self.attribute_blocks
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CatalogConfig {
    pub n_items: usize,
    pub n_attributes: usize,
    pub attrs_per_item: usize,
    pub dim: usize,
    pub seed: u64,
    /// Probability that each attribute of an item comes from the item's home block.
    #[serde(default = "default_affinity")]
    pub block_affinity: f64,
    #[serde(default = "default_noise")]
    pub noise: f64,
}

fn default_affinity() -> f64 {
    0.9
}

fn default_noise() -> f64 {
    0.5
}

impl Default for CatalogConfig {
    fn default() -> Self {
        CatalogConfig {
            n_items: 1500,
            n_attributes: 24,
            attrs_per_item: 4,
            dim: 8,
            seed: 0,
            block_affinity: default_affinity(),
            noise: default_noise(),
        }
    }
}

/// Synthetic attribute-tagged catalog with two seeded attribute blocks.
///
/// Each item picks a home block, then draws `attrs_per_item` distinct
/// attributes, taking each from its home block with probability
/// `block_affinity` (falling back to the other block when one runs out). The
/// item feature is the sum of its attributes' prototype vectors plus
/// isotropic noise.
pub fn generate_item_catalog(config: &CatalogConfig) -> Result<ItemCatalog> {
    let a = config.n_attributes;
    if config.attrs_per_item > a {
        return Err(Error::config(format!(
            "attrs_per_item = {} exceeds n_attributes = {a}",
            config.attrs_per_item
        )));
    }
    if config.dim == 0 {
        return Err(Error::config("catalog dimension must be at least 1"));
    }
    if !(0.0..=1.0).contains(&config.block_affinity) {
        return Err(Error::config("block_affinity must lie in [0, 1]"));
    }
    if !(config.noise >= 0.0) {
        return Err(Error::config("noise must be non-negative"));
    }
    if a > u32::MAX as usize || config.n_items > u32::MAX as usize {
        return Err(Error::config("catalog too large"));
    }

    let mut rng = stream(config.seed, "catalog-blocks", 0);
    let ids: Vec<u32> = (0..a as u32).collect();
    let order = choose_distinct(&ids, a, &mut rng);
    let mut blocks = vec![0u8; a];
    let mut members: [Vec<u32>; 2] = [Vec::new(), Vec::new()];
    for (rank, &attr) in order.iter().enumerate() {
        let b = usize::from(rank >= a.div_ceil(2));
        blocks[attr as usize] = b as u8;
        members[b].push(attr);
    }
    for m in members.iter_mut() {
        m.sort_unstable();
    }

    let mut proto_rng = stream(config.seed, "catalog-prototypes", 0);
    let prototypes: Vec<Vec<f64>> = (0..a)
        .map(|_| (0..config.dim).map(|_| proto_rng.sample(StandardNormal)).collect())
        .collect();

    let names = (0..a).map(|i| format!("attr_{i:02}")).collect();
    let items = (0..config.n_items)
        .map(|i| {
            let mut rng = stream(config.seed, "catalog-item", i as u64);
            let home = usize::from(rng.random_bool(0.5));
            let mut pools = members.clone();
            let mut attrs = AttributeSet::default();
            for _ in 0..config.attrs_per_item {
                let mut b = if rng.random_bool(config.block_affinity) { home } else { 1 - home };
                if pools[b].is_empty() {
                    b = 1 - b;
                }
                let k = rng.random_range(0..pools[b].len());
                attrs.insert(pools[b].swap_remove(k));
            }
            let mut feature = vec![0.0; config.dim];
            for attr in attrs.iter() {
                for (f, p) in feature.iter_mut().zip(&prototypes[attr as usize]) {
                    *f += p;
                }
            }
            for f in feature.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *f += config.noise * z;
            }
            Item {
                item_id: i as u32,
                attributes: attrs,
                feature,
            }
        })
        .collect();
    ItemCatalog::new(config.dim, names, blocks, items)
}

/// Unordered attribute pairs `(a, b)`, `a < b`, carried together by at least
/// `min_items` items. A `min_items` of zero admits every pair.
pub fn feasible_attribute_pairs(catalog: &ItemCatalog, min_items: usize) -> Vec<(u32, u32)> {
    let a = catalog.attribute_count();
    let mut counts = vec![0usize; a * a];
    for item in catalog.items() {
        let attrs: Vec<u32> = item.attributes.iter().collect();
        for (i, &x) in attrs.iter().enumerate() {
            for &y in &attrs[i + 1..] {
                counts[x as usize * a + y as usize] += 1;
            }
        }
    }
    let mut out = Vec::new();
    for x in 0..a {
        for y in x + 1..a {
            if counts[x * a + y] >= min_items {
                out.push((x as u32, y as u32));
            }
        }
    }
    out
}
