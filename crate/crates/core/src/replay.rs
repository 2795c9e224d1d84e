//! Fixed-capacity ring buffer with uniform minibatch sampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    /// True environment termination; zeroes the bootstrap.
    pub terminal: bool,
    /// Time-limit cut; the bootstrap is kept.
    pub truncated: bool,
}

/// Column-stacked minibatch.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    /// `[batch, state_dim]`
    pub states: Tensor,
    /// `[batch, action_dim]`
    pub actions: Tensor,
    /// `[batch, 1]`
    pub rewards: Tensor,
    /// `[batch, state_dim]`
    pub next_states: Tensor,
    /// `[batch, 1]`, 1.0 on terminal rows.
    pub terminals: Tensor,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.rewards.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn from_transitions(items: &[&Transition]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::Contract("empty batch".into()))?;
        let (s, a) = (first.state.len(), first.action.len());
        let n = items.len();
        let mut states = Vec::with_capacity(n * s);
        let mut actions = Vec::with_capacity(n * a);
        let mut next_states = Vec::with_capacity(n * s);
        let mut rewards = Vec::with_capacity(n);
        let mut terminals = Vec::with_capacity(n);
        for t in items {
            if t.state.len() != s || t.next_state.len() != s {
                return Err(Error::dimension("batch state", s, t.state.len()));
            }
            if t.action.len() != a {
                return Err(Error::dimension("batch action", a, t.action.len()));
            }
            states.extend_from_slice(&t.state);
            actions.extend_from_slice(&t.action);
            next_states.extend_from_slice(&t.next_state);
            rewards.push(t.reward);
            terminals.push(if t.terminal { 1.0 } else { 0.0 });
        }
        Ok(Self {
            states: Tensor::matrix(n, s, states)?,
            actions: Tensor::matrix(n, a, actions)?,
            rewards: Tensor::matrix(n, 1, rewards)?,
            next_states: Tensor::matrix(n, s, next_states)?,
            terminals: Tensor::matrix(n, 1, terminals)?,
        })
    }
}

#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    state_dim: usize,
    action_dim: usize,
    items: Vec<Transition>,
    cursor: usize,
    rng: ChaCha8Rng,
}

impl ReplayBuffer {
    pub const DEFAULT_CAPACITY: usize = 1_000_000;

    pub fn new(capacity: usize, state_dim: usize, action_dim: usize, seed: u64) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Contract("replay capacity must be positive".into()));
        }
        Ok(Self {
            capacity,
            state_dim,
            action_dim,
            items: Vec::new(),
            cursor: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
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

    pub fn get(&self, slot: usize) -> Option<&Transition> {
        self.items.get(slot)
    }

    pub fn push(&mut self, t: Transition) -> Result<()> {
        if t.state.len() != self.state_dim {
            return Err(Error::dimension("transition state", self.state_dim, t.state.len()));
        }
        if t.next_state.len() != self.state_dim {
            return Err(Error::dimension("transition next state", self.state_dim, t.next_state.len()));
        }
        if t.action.len() != self.action_dim {
            return Err(Error::dimension("transition action", self.action_dim, t.action.len()));
        }
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.cursor] = t;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
        Ok(())
    }

    /// Slots drawn uniformly with replacement from the live records.
    pub fn sample_indices(&mut self, batch_size: usize) -> Result<Vec<usize>> {
        if batch_size == 0 || self.items.len() < batch_size {
            return Err(Error::NotReady {
                have: self.items.len(),
                need: batch_size.max(1),
            });
        }
        let n = self.items.len();
        Ok((0..batch_size).map(|_| self.rng.random_range(0..n)).collect())
    }

    pub fn sample(&mut self, batch_size: usize) -> Result<Batch> {
        let idx = self.sample_indices(batch_size)?;
        let items: Vec<&Transition> = idx.iter().map(|&i| &self.items[i]).collect();
        Batch::from_transitions(&items)
    }
}
