//! Index-level sampling primitives shared by the task samplers and the
//! coverage simulator.

use std::collections::HashMap;

use rand::Rng;

/// First `n` entries of a Fisher-Yates shuffle of `0..len`.
///
/// Uniform over all ordered `n`-tuples of distinct indices. Only the swapped
/// positions are materialised, so the cost is O(n) regardless of `len`.
pub fn partial_fisher_yates<R: Rng + ?Sized>(len: usize, n: usize, rng: &mut R) -> Vec<usize> {
    assert!(n <= len, "cannot draw {n} distinct indices from {len}");
    let mut moved: HashMap<usize, usize> = HashMap::with_capacity(2 * n);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let j = rng.random_range(i..len);
        let at_j = *moved.get(&j).unwrap_or(&j);
        let at_i = *moved.get(&i).unwrap_or(&i);
        moved.insert(j, at_i);
        out.push(at_j);
    }
    out
}

/// Uniform ordered draw of `n` distinct elements of `items`.
pub fn choose_distinct<T: Copy, R: Rng + ?Sized>(items: &[T], n: usize, rng: &mut R) -> Vec<T> {
    partial_fisher_yates(items.len(), n, rng)
        .into_iter()
        .map(|i| items[i])
        .collect()
}

/// Binary indexed tree over non-negative weights supporting weighted draws
/// with temporary removal.
#[derive(Debug, Clone)]
pub struct WeightTree {
    tree: Vec<f64>,
    weights: Vec<f64>,
}

impl WeightTree {
    pub fn new(weights: &[f64]) -> Self {
        let mut t = WeightTree {
            tree: vec![0.0; weights.len() + 1],
            weights: vec![0.0; weights.len()],
        };
        for (i, &w) in weights.iter().enumerate() {
            t.set(i, w);
        }
        t
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn set(&mut self, i: usize, w: f64) {
        let delta = w - self.weights[i];
        self.weights[i] = w;
        let mut k = i + 1;
        while k < self.tree.len() {
            self.tree[k] += delta;
            k += k & k.wrapping_neg();
        }
    }

    pub fn total(&self) -> f64 {
        let mut k = self.weights.len();
        let mut s = 0.0;
        while k > 0 {
            s += self.tree[k];
            k &= k - 1;
        }
        s
    }

    /// Index whose cumulative weight interval contains `target`.
    fn find(&self, mut target: f64) -> usize {
        let n = self.weights.len();
        let mut pos = 0usize;
        let mut step = n.next_power_of_two();
        while step > 0 {
            let next = pos + step;
            if next <= n && self.tree[next] <= target {
                target -= self.tree[next];
                pos = next;
            }
            step >>= 1;
        }
        // Rounding can land on a zero-weight slot; walk to the nearest live one.
        let mut idx = pos.min(n - 1);
        if self.weights[idx] <= 0.0 {
            if let Some(j) = (idx..n).chain((0..idx).rev()).find(|&j| self.weights[j] > 0.0) {
                idx = j;
            }
        }
        idx
    }

    /// Weighted draw proportional to the current weights. `None` when all
    /// weights are zero.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<usize> {
        let total = self.total();
        if !(total > 0.0) {
            return None;
        }
        let u: f64 = rng.random::<f64>() * total;
        Some(self.find(u))
    }
}
