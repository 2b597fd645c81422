use std::collections::VecDeque;

use rand::Rng;

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_state: Vec<f64>,
    /// Terminal or truncated; either way the successor is not bootstrapped.
    pub done: bool,
}

/// Fixed-capacity FIFO replay memory.
#[derive(Debug, Clone)]
pub struct ReplayMemory {
    capacity: usize,
    buffer: VecDeque<Transition>,
    pushed: u64,
}

impl ReplayMemory {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("replay capacity must be positive".into()));
        }
        Ok(Self {
            capacity,
            buffer: VecDeque::with_capacity(capacity.min(1 << 16)),
            pushed: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.buffer.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buffer.is_empty()
    }

    /// Total number of pushes since creation, including evicted ones.
    pub fn total_pushed(&self) -> u64 {
        self.pushed
    }

    pub fn push(&mut self, t: Transition) -> Result<()> {
        if t.state.len() != t.next_state.len() {
            return Err(Error::Usage(format!(
                "transition state lengths differ: {} vs {}",
                t.state.len(),
                t.next_state.len()
            )));
        }
        if let Some(first) = self.buffer.front() {
            if first.state.len() != t.state.len() {
                return Err(Error::Usage(format!(
                    "transition state length {} does not match memory's {}",
                    t.state.len(),
                    first.state.len()
                )));
            }
        }
        if self.buffer.len() == self.capacity {
            self.buffer.pop_front();
        }
        self.buffer.push_back(t);
        self.pushed += 1;
        Ok(())
    }

    /// Oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.buffer.iter()
    }

    /// `k` independent uniform draws with replacement.
    pub fn sample_uniform<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Result<Vec<&Transition>> {
        if self.buffer.is_empty() {
            return Err(Error::Precondition("cannot sample from an empty replay memory".into()));
        }
        let n = self.buffer.len();
        Ok((0..k).map(|_| &self.buffer[rng.random_range(0..n)]).collect())
    }

    /// Successor states of the `min(f, len)` newest transitions, newest last.
    pub fn recent_states(&self, f: usize) -> Result<Vec<Vec<f64>>> {
        if self.buffer.is_empty() {
            return Err(Error::Precondition("replay memory is empty".into()));
        }
        let start = self.buffer.len().saturating_sub(f);
        Ok(self
            .buffer
            .range(start..)
            .map(|t| t.next_state.clone())
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeded_rng;

    fn tr(x: f64) -> Transition {
        Transition {
            state: vec![x - 1.0],
            action: 0,
            reward: 0.0,
            next_state: vec![x],
            done: false,
        }
    }

    fn contents(m: &ReplayMemory) -> Vec<f64> {
        m.iter().map(|t| t.next_state[0]).collect()
    }

    #[test]
    fn evicts_oldest() {
        let mut m = ReplayMemory::new(2).unwrap();
        for x in [1.0, 2.0, 3.0] {
            m.push(tr(x)).unwrap();
        }
        assert_eq!(contents(&m), vec![2.0, 3.0]);

        let mut one = ReplayMemory::new(1).unwrap();
        one.push(tr(1.0)).unwrap();
        one.push(tr(2.0)).unwrap();
        assert_eq!(contents(&one), vec![2.0]);
    }

    #[test]
    fn fills_to_capacity_without_eviction() {
        let mut m = ReplayMemory::new(100_000).unwrap();
        for i in 0..100_000 {
            m.push(tr(i as f64)).unwrap();
        }
        assert_eq!(m.len(), 100_000);
        assert_eq!(m.iter().next().unwrap().next_state[0], 0.0);
    }

    #[test]
    fn rejects_dimension_change() {
        let mut m = ReplayMemory::new(4).unwrap();
        m.push(tr(1.0)).unwrap();
        let bad = Transition {
            state: vec![0.0, 0.0],
            action: 0,
            reward: 0.0,
            next_state: vec![0.0, 0.0],
            done: false,
        };
        assert!(matches!(m.push(bad), Err(Error::Usage(_))));
    }

    #[test]
    fn sampling_single_transition() {
        let mut m = ReplayMemory::new(8).unwrap();
        m.push(tr(4.0)).unwrap();
        let batch = m.sample_uniform(16, &mut seeded_rng(0)).unwrap();
        assert_eq!(batch.len(), 16);
        assert!(batch.iter().all(|t| t.next_state == vec![4.0]));
    }

    #[test]
    fn sampling_is_deterministic() {
        let mut m = ReplayMemory::new(100).unwrap();
        for i in 0..100 {
            m.push(tr(i as f64)).unwrap();
        }
        let a: Vec<_> = m.sample_uniform(16, &mut seeded_rng(3)).unwrap().into_iter().cloned().collect();
        let b: Vec<_> = m.sample_uniform(16, &mut seeded_rng(3)).unwrap().into_iter().cloned().collect();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_memory_errors() {
        let m = ReplayMemory::new(3).unwrap();
        assert!(matches!(m.sample_uniform(1, &mut seeded_rng(0)), Err(Error::Precondition(_))));
        assert!(matches!(m.recent_states(3), Err(Error::Precondition(_))));
    }

    #[test]
    fn recent_states_order_and_truncation() {
        let mut m = ReplayMemory::new(100).unwrap();
        for x in 1..=5 {
            m.push(tr(x as f64)).unwrap();
        }
        assert_eq!(m.recent_states(3).unwrap(), vec![vec![3.0], vec![4.0], vec![5.0]]);
        assert_eq!(m.recent_states(50).unwrap().len(), 5);
    }

    #[test]
    fn recent_states_after_wraparound() {
        let mut m = ReplayMemory::new(3).unwrap();
        for x in 1..=6 {
            m.push(tr(x as f64)).unwrap();
        }
        assert_eq!(m.recent_states(3).unwrap(), vec![vec![4.0], vec![5.0], vec![6.0]]);
        assert_eq!(m.total_pushed(), 6);
    }
}
