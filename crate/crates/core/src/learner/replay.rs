use std::collections::VecDeque;

use rand::Rng;

use super::Transition;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const DEFAULT_CAPACITY: usize = 100_000;

/// Bounded FIFO experience store; the oldest transition is evicted on overflow.
#[derive(Debug, Clone)]
pub struct ReplayBuffer<T: Scalar> {
    items: VecDeque<Transition<T>>,
    capacity: usize,
}

impl<T: Scalar> ReplayBuffer<T> {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::config("learner.replay_capacity", "must be > 0"));
        }
        Ok(Self {
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
            capacity,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Inserts `t`, returning the evicted transition if the buffer was full.
    pub fn push(&mut self, t: Transition<T>) -> Option<Transition<T>> {
        let evicted = if self.items.len() == self.capacity {
            self.items.pop_front()
        } else {
            None
        };
        self.items.push_back(t);
        evicted
    }

    pub fn get(&self, i: usize) -> Option<&Transition<T>> {
        self.items.get(i)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition<T>> + '_ {
        self.items.iter()
    }

    /// Uniform sample with replacement.
    pub fn sample<'a, R: Rng + ?Sized>(&'a self, n: usize, rng: &mut R) -> Result<Vec<&'a Transition<T>>> {
        if self.items.is_empty() {
            return Err(Error::Empty("replay buffer"));
        }
        Ok((0..n)
            .map(|_| &self.items[rng.random_range(0..self.items.len())])
            .collect())
    }
}
