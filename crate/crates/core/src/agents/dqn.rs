//! Deep Q-learning with a replay buffer, a periodically synced target network
//! and linearly decayed ε-greedy exploration.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::buffers::ReplayBuffer;
use super::{check_finite, encode, Agent, Diagnostics, Progress};
use crate::env::{BatchEnv, EnvConfig, Transition};
use crate::error::{Error, Result};
use crate::nn::{argmax, Activation, Adam, DenseNet, Grads};
use crate::seq::{MutationAction, Sequence};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DqnConfig {
    pub gamma: f64,
    pub capacity: usize,
    pub batch_size: usize,
    pub warmup: usize,
    /// Gradient updates between target-network copies.
    pub target_sync: u64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Fraction of the query budget over which ε decays linearly.
    pub epsilon_decay: f64,
    pub lr: f64,
    pub updates_per_step: usize,
    pub huber_delta: f64,
    pub max_grad_norm: f64,
}

impl Default for DqnConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            capacity: 100_000,
            batch_size: 256,
            warmup: 256,
            target_sync: 1000,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay: 0.2,
            lr: 1e-4,
            updates_per_step: 1,
            huber_delta: 1.0,
            max_grad_norm: 10.0,
        }
    }
}

impl DqnConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..=1.0).contains(&self.gamma)
            && self.capacity > 0
            && self.batch_size > 0
            && self.target_sync > 0
            && (0.0..=1.0).contains(&self.epsilon_start)
            && (0.0..=1.0).contains(&self.epsilon_end)
            && self.epsilon_decay >= 0.0
            && self.lr > 0.0
            && self.huber_delta > 0.0
            && self.max_grad_norm > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("bad DQN config {self:?}")))
        }
    }

    pub fn epsilon_at(&self, fraction: f64) -> f64 {
        let t = if self.epsilon_decay > 0.0 {
            (fraction / self.epsilon_decay).min(1.0)
        } else {
            1.0
        };
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * t
    }
}

pub fn huber(e: f64, delta: f64) -> f64 {
    if e.abs() <= delta {
        0.5 * e * e
    } else {
        delta * (e.abs() - 0.5 * delta)
    }
}

/// Mean Huber TD error of `q` on `batch` against `r + γ·max_a' Q_target(s', a')`
/// (no bootstrap after a finite-horizon terminal), with its gradient.
pub fn td_loss_grad(
    q: &DenseNet,
    target: &DenseNet,
    batch: &[&Transition],
    alphabet_size: usize,
    gamma: f64,
    delta: f64,
) -> Result<(f64, Grads)> {
    let mut grads = Grads::zeros_like(q);
    if batch.is_empty() {
        return Ok((0.0, grads));
    }
    let n = batch.len() as f64;
    let outputs = q.output_size();
    let mut loss = 0.0;
    for t in batch {
        let a = t.action.encode(t.state.len(), alphabet_size)?;
        let mut y = t.reward;
        if gamma > 0.0 && !t.done {
            let next = target.forward(&encode(&t.next_state, alphabet_size))?;
            y += gamma * next.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        }
        let trace = q.forward_trace(&encode(&t.state, alphabet_size))?;
        let e = trace.output()[a] - y;
        loss += huber(e, delta) / n;
        let mut upstream = vec![0.0; outputs];
        upstream[a] = e.clamp(-delta, delta) / n;
        q.backward_into(&trace, &upstream, &mut grads)?;
    }
    Ok((loss, grads))
}

pub struct DqnAgent {
    q: DenseNet,
    target: DenseNet,
    opt: Adam,
    replay: ReplayBuffer,
    config: DqnConfig,
    seq_len: usize,
    alphabet_size: usize,
    epsilon: f64,
    updates: u64,
}

impl DqnAgent {
    pub fn new(env: &EnvConfig, hidden: &[usize], config: DqnConfig, _budget: u64, rng: &mut dyn RngCore) -> Result<Self> {
        config.validate()?;
        let mut sizes = vec![env.state_size()];
        sizes.extend_from_slice(hidden);
        sizes.push(env.action_count());
        let q = DenseNet::new(&sizes, Activation::Relu, rng)?;
        Ok(Self {
            target: q.clone(),
            opt: Adam::new(&q, config.lr),
            q,
            replay: ReplayBuffer::new(config.capacity),
            epsilon: config.epsilon_start,
            config,
            seq_len: env.seq_len,
            alphabet_size: env.alphabet_size(),
            updates: 0,
        })
    }

    pub fn q_values(&self, seq: &Sequence) -> Result<Vec<f64>> {
        self.q.forward(&encode(seq, self.alphabet_size))
    }

    pub fn greedy(&self, seq: &Sequence) -> Result<usize> {
        Ok(argmax(&self.q_values(seq)?))
    }

    pub fn replay_mut(&mut self) -> &mut ReplayBuffer {
        &mut self.replay
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// One gradient step on a replay minibatch. Returns the loss.
    pub fn train_step(&mut self, rng: &mut dyn RngCore) -> Result<f64> {
        let batch = self.replay.sample(self.config.batch_size, rng);
        let (loss, mut grads) = td_loss_grad(
            &self.q,
            &self.target,
            &batch,
            self.alphabet_size,
            self.config.gamma,
            self.config.huber_delta,
        )?;
        check_finite(loss, "DQN loss")?;
        grads.clip_norm(self.config.max_grad_norm);
        self.opt.step(&mut self.q, &grads)?;
        self.updates += 1;
        if self.updates % self.config.target_sync == 0 {
            self.target = self.q.clone();
        }
        Ok(loss)
    }
}

impl Agent for DqnAgent {
    fn name(&self) -> &'static str {
        "dqn"
    }

    fn act(&mut self, env: &BatchEnv, rng: &mut dyn RngCore) -> Result<Vec<MutationAction>> {
        let n = self.seq_len * self.alphabet_size;
        env.sequences()
            .iter()
            .map(|s| {
                let a = if rng.gen::<f64>() < self.epsilon {
                    rng.gen_range(0..n)
                } else {
                    self.greedy(s)?
                };
                MutationAction::decode(a, self.seq_len, self.alphabet_size)
            })
            .collect()
    }

    fn observe(
        &mut self,
        transitions: &[Transition],
        _env: &mut BatchEnv,
        progress: Progress,
        rng: &mut dyn RngCore,
    ) -> Result<()> {
        for t in transitions {
            self.replay.push(t.clone());
        }
        self.epsilon = self.config.epsilon_at(progress.fraction());
        if self.replay.len() >= self.config.warmup {
            for _ in 0..self.config.updates_per_step {
                self.train_step(rng)?;
            }
        }
        Ok(())
    }

    fn diagnostics(&self) -> Diagnostics {
        Diagnostics {
            epsilon: Some(self.epsilon),
            ..Diagnostics::default()
        }
    }
}
