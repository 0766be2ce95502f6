//! Prioritized experience replay over a ring buffer.

use rand::Rng;

/// Binary sum tree over a fixed number of leaves. Internal nodes are always
/// recomputed from their children, so the root never drifts from the leaf sum.
#[derive(Debug, Clone, PartialEq)]
pub struct SumTree {
    leaves: usize,
    nodes: Vec<f64>,
}

impl SumTree {
    pub fn new(capacity: usize) -> Self {
        let leaves = capacity.max(1).next_power_of_two();
        Self {
            leaves,
            nodes: vec![0.0; 2 * leaves],
        }
    }

    pub fn total(&self) -> f64 {
        self.nodes[1]
    }

    pub fn get(&self, i: usize) -> f64 {
        self.nodes[self.leaves + i]
    }

    pub fn set(&mut self, i: usize, p: f64) {
        debug_assert!(p >= 0.0 && p.is_finite());
        let mut n = self.leaves + i;
        self.nodes[n] = p;
        while n > 1 {
            n /= 2;
            self.nodes[n] = self.nodes[2 * n] + self.nodes[2 * n + 1];
        }
    }

    /// Leaf whose cumulative range contains `mass`. Never returns a
    /// zero-priority leaf while the total is positive.
    pub fn find(&self, mass: f64) -> usize {
        let mut mass = mass.clamp(0.0, self.total());
        let mut n = 1;
        while n < self.leaves {
            let left = self.nodes[2 * n];
            if mass < left || self.nodes[2 * n + 1] == 0.0 {
                n *= 2;
            } else {
                mass -= left;
                n = 2 * n + 1;
            }
        }
        let mut i = n - self.leaves;
        // rounding can land on an empty leaf at the far right edge
        while self.get(i) == 0.0 && i > 0 {
            i -= 1;
        }
        i
    }
}

/// A sampled minibatch.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub indices: Vec<usize>,
    /// Importance-sampling weights normalized by the batch maximum.
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrioritizedReplay<T> {
    capacity: usize,
    items: Vec<T>,
    next: usize,
    tree: SumTree,
    omega: f64,
    priority_floor: f64,
    max_priority: f64,
}

impl<T> PrioritizedReplay<T> {
    /// `omega` is the priority exponent; `priority_floor` keeps zero-error
    /// entries sampleable.
    pub fn new(capacity: usize, omega: f64, priority_floor: f64) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            items: Vec::with_capacity(capacity.min(1 << 16)),
            next: 0,
            tree: SumTree::new(capacity),
            omega,
            priority_floor,
            max_priority: 1.0,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn get(&self, i: usize) -> &T {
        &self.items[i]
    }

    pub fn tree(&self) -> &SumTree {
        &self.tree
    }

    /// Stored sampling mass of slot `i` (priority raised to `omega`).
    pub fn leaf(&self, i: usize) -> f64 {
        self.tree.get(i)
    }

    pub fn max_priority(&self) -> f64 {
        self.max_priority
    }

    /// Sampling probability of slot `i`.
    pub fn probability(&self, i: usize) -> f64 {
        self.tree.get(i) / self.tree.total()
    }

    /// Inserts with the running maximum priority, evicting the oldest entry
    /// once full. Returns the slot used.
    pub fn push(&mut self, item: T) -> usize {
        let slot = self.next;
        if self.items.len() < self.capacity {
            self.items.push(item);
        } else {
            self.items[slot] = item;
        }
        self.tree.set(slot, self.max_priority.powf(self.omega));
        self.next = (self.next + 1) % self.capacity;
        slot
    }

    /// Sets raw priorities `|error| + floor` for the given slots.
    pub fn update_priorities(&mut self, indices: &[usize], errors: &[f64]) {
        assert_eq!(indices.len(), errors.len());
        for (&i, &e) in indices.iter().zip(errors) {
            assert!(i < self.items.len(), "priority update for empty slot {i}");
            let p = e.abs() + self.priority_floor;
            assert!(p.is_finite(), "non-finite priority");
            self.max_priority = self.max_priority.max(p);
            self.tree.set(i, p.powf(self.omega));
        }
    }

    /// Stratified proportional sampling of `n` slots.
    pub fn sample<R: Rng>(&self, n: usize, beta: f64, rng: &mut R) -> Sample {
        assert!(n > 0 && self.len() >= n, "replay holds {} entries, need {n}", self.len());
        let total = self.tree.total();
        let segment = total / n as f64;
        let count = self.len() as f64;
        let mut indices = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n);
        for k in 0..n {
            let mass = segment * (k as f64 + rng.random::<f64>());
            let i = self.tree.find(mass);
            let p = self.tree.get(i) / total;
            indices.push(i);
            weights.push((count * p).powf(-beta));
        }
        let max = weights.iter().cloned().fold(0.0, f64::max);
        for w in &mut weights {
            *w /= max;
        }
        Sample { indices, weights }
    }
}
