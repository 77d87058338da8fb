use rand::{Rng, RngCore};

use crate::env::Transition;
use crate::error::{Error, Result};
use crate::seq::Sequence;

/// One step of B environments.
#[derive(Clone, Debug)]
pub struct RolloutStep {
    pub states: Vec<Sequence>,
    pub actions: Vec<usize>,
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
}

/// On-policy storage for N steps of B environments.
#[derive(Clone, Debug)]
pub struct RolloutBuffer {
    capacity: usize,
    envs: usize,
    steps: Vec<RolloutStep>,
}

impl RolloutBuffer {
    pub fn new(capacity: usize, envs: usize) -> Self {
        Self {
            capacity,
            envs,
            steps: Vec::with_capacity(capacity),
        }
    }

    pub fn push(&mut self, step: RolloutStep) -> Result<()> {
        if self.is_full() {
            return Err(Error::InvalidArgument("rollout buffer is full".into()));
        }
        let b = self.envs;
        if [step.states.len(), step.actions.len(), step.log_probs.len(), step.values.len(), step.rewards.len(), step.dones.len()]
            .iter()
            .any(|&n| n != b)
        {
            return Err(Error::Shape(format!("rollout step does not have {b} entries per field")));
        }
        self.steps.push(step);
        Ok(())
    }

    pub fn is_full(&self) -> bool {
        self.steps.len() == self.capacity
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn clear(&mut self) {
        self.steps.clear();
    }

    pub fn steps(&self) -> &[RolloutStep] {
        &self.steps
    }

    /// Generalized advantage estimates and returns, flattened step-major
    /// (index `t * B + i`). `last_values` bootstrap the state after the final step.
    pub fn advantages(&self, last_values: &[f64], gamma: f64, lambda: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        if last_values.len() != self.envs {
            return Err(Error::LengthMismatch {
                expected: self.envs,
                actual: last_values.len(),
            });
        }
        let n = self.steps.len();
        let b = self.envs;
        let mut adv = vec![0.0; n * b];
        let mut ret = vec![0.0; n * b];
        for i in 0..b {
            let mut running = 0.0;
            for t in (0..n).rev() {
                let step = &self.steps[t];
                let next_value = if t + 1 < n { self.steps[t + 1].values[i] } else { last_values[i] };
                let live = if step.dones[i] { 0.0 } else { 1.0 };
                let delta = step.rewards[i] + gamma * next_value * live - step.values[i];
                running = delta + gamma * lambda * live * running;
                adv[t * b + i] = running;
                ret[t * b + i] = running + step.values[i];
            }
        }
        Ok((adv, ret))
    }
}

/// Fixed-capacity ring of transitions with uniform sampling.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            items: Vec::new(),
            next: 0,
        }
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
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

    pub fn items(&self) -> &[Transition] {
        &self.items
    }

    /// `n` draws with replacement.
    pub fn sample<'a>(&'a self, n: usize, rng: &mut dyn RngCore) -> Vec<&'a Transition> {
        if self.items.is_empty() {
            return Vec::new();
        }
        (0..n).map(|_| &self.items[rng.gen_range(0..self.items.len())]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seq::MutationAction;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn step(reward: f64, value: f64, done: bool) -> RolloutStep {
        RolloutStep {
            states: vec![Sequence::from_indices(vec![0])],
            actions: vec![0],
            log_probs: vec![0.0],
            values: vec![value],
            rewards: vec![reward],
            dones: vec![done],
        }
    }

    #[test]
    fn gae_by_hand() {
        let mut buf = RolloutBuffer::new(2, 1);
        buf.push(step(1.0, 0.5, false)).unwrap();
        buf.push(step(2.0, 0.25, false)).unwrap();
        assert!(buf.is_full());
        let (g, l) = (0.9, 0.8);
        let (adv, ret) = buf.advantages(&[1.0], g, l).unwrap();
        let d1 = 2.0 + g * 1.0 - 0.25;
        let d0 = 1.0 + g * 0.25 - 0.5;
        assert_relative_eq!(adv[1], d1);
        assert_relative_eq!(adv[0], d0 + g * l * d1);
        assert_relative_eq!(ret[0], adv[0] + 0.5);
    }

    #[test]
    fn done_cuts_bootstrap() {
        let mut buf = RolloutBuffer::new(2, 1);
        buf.push(step(1.0, 0.5, true)).unwrap();
        buf.push(step(0.0, 7.0, false)).unwrap();
        let (adv, _) = buf.advantages(&[3.0], 0.99, 0.95).unwrap();
        assert_relative_eq!(adv[0], 0.5);
        assert!(buf.push(step(0.0, 0.0, false)).is_err());
    }

    #[test]
    fn replay_ring_and_uniformity() {
        let mut r = ReplayBuffer::new(4);
        for k in 0..10u8 {
            r.push(Transition {
                state: Sequence::from_indices(vec![k]),
                action: MutationAction::new(0, 0),
                reward: k as f64,
                next_state: Sequence::from_indices(vec![k]),
                done: false,
            });
        }
        assert_eq!(r.len(), 4);
        let mut rewards: Vec<f64> = r.items().iter().map(|t| t.reward).collect();
        rewards.sort_by(f64::total_cmp);
        assert_eq!(rewards, vec![6.0, 7.0, 8.0, 9.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut counts = [0usize; 10];
        for t in r.sample(40_000, &mut rng) {
            counts[t.reward as usize] += 1;
        }
        for c in &counts[6..] {
            assert!((*c as f64 - 10_000.0).abs() < 400.0);
        }
    }
}
