use ndarray::{Array1, Array2};
use rand::Rng;

use crate::agent::Batch;

/// One environment transition.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub cost: f64,
    pub next_state: Vec<f64>,
    /// True only for real terminations; truncated episodes still bootstrap.
    pub terminal: bool,
}

/// Fixed-capacity ring of transitions with uniform sampling.
///
/// Storage grows on demand up to `capacity` and then overwrites the oldest entries.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    state_dim: usize,
    action_dim: usize,
    states: Vec<f64>,
    actions: Vec<f64>,
    rewards: Vec<f64>,
    costs: Vec<f64>,
    next_states: Vec<f64>,
    terminals: Vec<f64>,
    inserted: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, state_dim: usize, action_dim: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            state_dim,
            action_dim,
            states: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            costs: Vec::new(),
            next_states: Vec::new(),
            terminals: Vec::new(),
            inserted: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Total pushes since creation, including overwritten ones.
    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    pub fn push(&mut self, t: &Transition) {
        assert_eq!(t.state.len(), self.state_dim, "state width");
        assert_eq!(t.next_state.len(), self.state_dim, "next state width");
        assert_eq!(t.action.len(), self.action_dim, "action width");
        let terminal = if t.terminal { 1.0 } else { 0.0 };
        if self.len() < self.capacity {
            self.states.extend_from_slice(&t.state);
            self.actions.extend_from_slice(&t.action);
            self.next_states.extend_from_slice(&t.next_state);
            self.rewards.push(t.reward);
            self.costs.push(t.cost);
            self.terminals.push(terminal);
        } else {
            let i = (self.inserted % self.capacity as u64) as usize;
            let (sd, ad) = (self.state_dim, self.action_dim);
            self.states[i * sd..(i + 1) * sd].copy_from_slice(&t.state);
            self.actions[i * ad..(i + 1) * ad].copy_from_slice(&t.action);
            self.next_states[i * sd..(i + 1) * sd].copy_from_slice(&t.next_state);
            self.rewards[i] = t.reward;
            self.costs[i] = t.cost;
            self.terminals[i] = terminal;
        }
        self.inserted += 1;
    }

    pub fn get(&self, i: usize) -> Transition {
        let (sd, ad) = (self.state_dim, self.action_dim);
        Transition {
            state: self.states[i * sd..(i + 1) * sd].to_vec(),
            action: self.actions[i * ad..(i + 1) * ad].to_vec(),
            reward: self.rewards[i],
            cost: self.costs[i],
            next_state: self.next_states[i * sd..(i + 1) * sd].to_vec(),
            terminal: self.terminals[i] != 0.0,
        }
    }

    /// Indices drawn uniformly with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<usize> {
        assert!(!self.is_empty(), "sampling from an empty buffer");
        (0..n).map(|_| rng.random_range(0..self.len())).collect()
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Batch<f64> {
        let idx = self.sample_indices(n, rng);
        self.gather(&idx)
    }

    pub fn gather(&self, idx: &[usize]) -> Batch<f64> {
        let (sd, ad) = (self.state_dim, self.action_dim);
        let n = idx.len();
        let rows = |src: &[f64], w: usize| Array2::from_shape_fn((n, w), |(r, c)| src[idx[r] * w + c]);
        Batch {
            states: rows(&self.states, sd),
            actions: rows(&self.actions, ad),
            rewards: Array1::from_shape_fn(n, |r| self.rewards[idx[r]]),
            costs: Array1::from_shape_fn(n, |r| self.costs[idx[r]]),
            next_states: rows(&self.next_states, sd),
            terminals: Array1::from_shape_fn(n, |r| self.terminals[idx[r]]),
        }
    }
}
