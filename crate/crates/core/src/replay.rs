//! FIFO replay buffer.

use ndarray::Array1;
use rand::Rng;

use crate::zonotope::Zonotope;

#[derive(Debug, Clone, PartialEq)]
pub enum StoredAction {
    Point(Array1<f64>),
    /// Perturbed action set, unclipped.
    Set(Zonotope),
}

impl StoredAction {
    /// The executed point action's pre-clip value (the set center for sets).
    pub fn center(&self) -> &Array1<f64> {
        match self {
            StoredAction::Point(a) => a,
            StoredAction::Set(z) => z.center(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Array1<f64>,
    pub action: StoredAction,
    pub reward: f64,
    pub next_state: Array1<f64>,
    pub terminal: bool,
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    // index of the oldest entry once full
    head: usize,
    inserted: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            items: Vec::with_capacity(capacity.min(1 << 16)),
            head: 0,
            inserted: 0,
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

    /// Total number of pushes, including evicted ones.
    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    pub fn push(&mut self, t: Transition) {
        self.inserted += 1;
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.head] = t;
            self.head = (self.head + 1) % self.capacity;
        }
    }

    /// Entry at a storage index as returned by [`ReplayBuffer::sample_indices`].
    pub fn get(&self, i: usize) -> &Transition {
        &self.items[i]
    }

    /// Entries from oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        let (newer, older) = self.items.split_at(self.head);
        older.iter().chain(newer)
    }

    /// Storage indices of a batch drawn uniformly without replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Vec<usize> {
        rand::seq::index::sample(rng, self.items.len(), batch.min(self.items.len())).into_vec()
    }

    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Vec<&Transition> {
        self.sample_indices(batch, rng)
            .into_iter()
            .map(|i| &self.items[i])
            .collect()
    }
}
