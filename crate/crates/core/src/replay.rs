//! Fixed-capacity FIFO transition store with uniform sampling.
//!
//! One buffer holds the full reward vector of every transition; each
//! objective draws its own minibatch and reads its own reward component.

use std::sync::Arc;

use rand::Rng;

use crate::env::{Observation, RewardVector};
use crate::error::ReplayError;

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Arc<Observation>,
    pub action: usize,
    pub rewards: RewardVector,
    pub next_state: Arc<Observation>,
    pub terminal: bool,
    /// Global environment step that produced this transition.
    pub seq: u64,
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    slots: Vec<Transition>,
    cursor: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self { capacity, slots: Vec::with_capacity(capacity.min(1 << 16)), cursor: 0 }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Appends, overwriting the oldest transition once full.
    pub fn push(&mut self, t: Transition) {
        if self.slots.len() < self.capacity {
            self.slots.push(t);
        } else {
            self.slots[self.cursor] = t;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
    }

    /// Transitions from oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        let (newer, older) = if self.slots.len() < self.capacity {
            (&self.slots[..], &self.slots[..0])
        } else {
            let (a, b) = self.slots.split_at(self.cursor);
            (a, b)
        };
        older.iter().chain(newer.iter())
    }

    /// `batch` independent uniform draws, with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Vec<usize>, ReplayError> {
        if batch == 0 {
            return Err(ReplayError::EmptyBatch);
        }
        if self.slots.len() < batch {
            return Err(ReplayError::Insufficient { available: self.slots.len(), requested: batch });
        }
        Ok((0..batch).map(|_| rng.gen_range(0..self.slots.len())).collect())
    }

    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Vec<&Transition>, ReplayError> {
        Ok(self.sample_indices(batch, rng)?.into_iter().map(|i| &self.slots[i]).collect())
    }
}
