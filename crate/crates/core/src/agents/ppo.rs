//! Proximal policy optimization with GAE, optionally with an RND novelty bonus.

use rand::seq::SliceRandom;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::buffers::{RolloutBuffer, RolloutStep};
use super::rnd::RndPair;
use super::{check_finite, encode, Agent, Diagnostics, Progress};
use crate::env::{BatchEnv, EnvConfig, Transition};
use crate::error::{Error, Result};
use crate::nn::{log_softmax, sample_probs, Activation, Adam, DenseNet, Grads};
use crate::seq::{MutationAction, Sequence};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoConfig {
    pub gamma: f64,
    pub lambda: f64,
    pub clip: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    /// Steps per environment between updates.
    pub rollout_steps: usize,
    pub epochs: usize,
    pub minibatches: usize,
    pub lr: f64,
    pub max_grad_norm: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            lambda: 0.95,
            clip: 0.2,
            entropy_coef: 0.01,
            value_coef: 0.5,
            rollout_steps: 128,
            epochs: 4,
            minibatches: 8,
            lr: 3e-4,
            max_grad_norm: 0.5,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..=1.0).contains(&self.gamma)
            && (0.0..=1.0).contains(&self.lambda)
            && self.clip > 0.0
            && self.rollout_steps > 0
            && self.epochs > 0
            && self.minibatches > 0
            && self.lr > 0.0
            && self.max_grad_norm > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("bad PPO config {self:?}")))
        }
    }
}

/// min(r·A, clip(r, 1−ε, 1+ε)·A)
pub fn clipped_surrogate(ratio: f64, advantage: f64, clip: f64) -> f64 {
    (ratio * advantage).min(ratio.clamp(1.0 - clip, 1.0 + clip) * advantage)
}

#[derive(Clone, Copy, Debug)]
pub struct PpoSample<'a> {
    pub state: &'a [f64],
    pub action: usize,
    pub old_log_prob: f64,
    pub advantage: f64,
    pub ret: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PolicyStats {
    pub loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
}

/// Negative clipped surrogate minus the entropy bonus, averaged over samples,
/// with its gradient.
pub fn policy_loss_grad(
    policy: &DenseNet,
    samples: &[PpoSample<'_>],
    clip: f64,
    entropy_coef: f64,
) -> Result<(PolicyStats, Grads)> {
    let mut grads = Grads::zeros_like(policy);
    let mut stats = PolicyStats::default();
    if samples.is_empty() {
        return Ok((stats, grads));
    }
    let n = samples.len() as f64;
    let mut clipped = 0usize;
    for s in samples {
        let trace = policy.forward_trace(s.state)?;
        let logp = log_softmax(trace.output())?;
        let p: Vec<f64> = logp.iter().map(|l| l.exp()).collect();
        let entropy = -p.iter().zip(&logp).map(|(p, l)| p * l).sum::<f64>();
        let ratio = (logp[s.action] - s.old_log_prob).exp();
        let unclipped = ratio * s.advantage;
        let bounded = ratio.clamp(1.0 - clip, 1.0 + clip) * s.advantage;
        let surr = unclipped.min(bounded);
        // Gradient flows through the ratio only when the unclipped branch is the minimum.
        let dsurr_dlogp = if unclipped <= bounded { unclipped } else { 0.0 };
        if unclipped > bounded {
            clipped += 1;
        }
        stats.loss += (-surr - entropy_coef * entropy) / n;
        stats.entropy += entropy / n;
        let upstream: Vec<f64> = (0..p.len())
            .map(|k| {
                let onehot = if k == s.action { 1.0 } else { 0.0 };
                let dsurr = dsurr_dlogp * (onehot - p[k]);
                let dent = -p[k] * (logp[k] + entropy);
                (-dsurr - entropy_coef * dent) / n
            })
            .collect();
        policy.backward_into(&trace, &upstream, &mut grads)?;
    }
    stats.clip_fraction = clipped as f64 / n;
    Ok((stats, grads))
}

/// `value_coef · mean (V(s) − R)²` and its gradient.
pub fn value_loss_grad(value: &DenseNet, samples: &[PpoSample<'_>], value_coef: f64) -> Result<(f64, Grads)> {
    let mut grads = Grads::zeros_like(value);
    if samples.is_empty() {
        return Ok((0.0, grads));
    }
    let n = samples.len() as f64;
    let mut loss = 0.0;
    for s in samples {
        let trace = value.forward_trace(s.state)?;
        let err = trace.output()[0] - s.ret;
        loss += value_coef * err * err / n;
        value.backward_into(&trace, &[2.0 * value_coef * err / n], &mut grads)?;
    }
    Ok((loss, grads))
}

struct Pending {
    actions: Vec<usize>,
    log_probs: Vec<f64>,
    values: Vec<f64>,
}

pub struct PpoAgent {
    policy: DenseNet,
    value: DenseNet,
    policy_opt: Adam,
    value_opt: Adam,
    buffer: RolloutBuffer,
    config: PpoConfig,
    seq_len: usize,
    alphabet_size: usize,
    rnd: Option<RndPair>,
    pending: Option<Pending>,
    last: PolicyStats,
    updates: u64,
}

impl PpoAgent {
    pub fn new(
        env: &EnvConfig,
        hidden: &[usize],
        config: PpoConfig,
        rnd: Option<RndPair>,
        rng: &mut dyn RngCore,
    ) -> Result<Self> {
        config.validate()?;
        let n = env.state_size();
        let mut sizes = vec![n];
        sizes.extend_from_slice(hidden);
        let mut value_sizes = sizes.clone();
        sizes.push(env.action_count());
        value_sizes.push(1);
        let policy = DenseNet::new(&sizes, Activation::Relu, rng)?;
        let value = DenseNet::new(&value_sizes, Activation::Relu, rng)?;
        Ok(Self {
            policy_opt: Adam::new(&policy, config.lr),
            value_opt: Adam::new(&value, config.lr),
            policy,
            value,
            buffer: RolloutBuffer::new(config.rollout_steps, env.batch_size),
            config,
            seq_len: env.seq_len,
            alphabet_size: env.alphabet_size(),
            rnd,
            pending: None,
            last: PolicyStats::default(),
            updates: 0,
        })
    }

    pub fn policy(&self) -> &DenseNet {
        &self.policy
    }

    pub fn value_net(&self) -> &DenseNet {
        &self.value
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn last_stats(&self) -> PolicyStats {
        self.last
    }

    /// Action probabilities in the given state.
    pub fn probabilities(&self, seq: &Sequence) -> Result<Vec<f64>> {
        let logp = log_softmax(&self.policy.forward(&encode(seq, self.alphabet_size))?)?;
        Ok(logp.into_iter().map(f64::exp).collect())
    }

    fn update(&mut self, last_values: &[f64], rng: &mut dyn RngCore) -> Result<()> {
        let (mut adv, ret) = self.buffer.advantages(last_values, self.config.gamma, self.config.lambda)?;
        let n = adv.len() as f64;
        let mean = adv.iter().sum::<f64>() / n;
        let std = (adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt();
        for a in &mut adv {
            *a = (*a - mean) / (std + 1e-8);
        }
        let mut states = Vec::with_capacity(adv.len());
        let mut actions = Vec::with_capacity(adv.len());
        let mut old = Vec::with_capacity(adv.len());
        for step in self.buffer.steps() {
            for i in 0..step.states.len() {
                states.push(encode(&step.states[i], self.alphabet_size));
                actions.push(step.actions[i]);
                old.push(step.log_probs[i]);
            }
        }
        let samples: Vec<PpoSample<'_>> = (0..states.len())
            .map(|j| PpoSample {
                state: &states[j],
                action: actions[j],
                old_log_prob: old[j],
                advantage: adv[j],
                ret: ret[j],
            })
            .collect();
        let mut order: Vec<usize> = (0..samples.len()).collect();
        let mb = samples.len().div_ceil(self.config.minibatches).max(1);
        for _ in 0..self.config.epochs {
            order.shuffle(rng);
            for chunk in order.chunks(mb) {
                let batch: Vec<PpoSample<'_>> = chunk.iter().map(|&j| samples[j]).collect();
                let (stats, mut pg) = policy_loss_grad(&self.policy, &batch, self.config.clip, self.config.entropy_coef)?;
                check_finite(stats.loss, "PPO policy loss")?;
                pg.clip_norm(self.config.max_grad_norm);
                self.policy_opt.step(&mut self.policy, &pg)?;
                let (vloss, mut vg) = value_loss_grad(&self.value, &batch, self.config.value_coef)?;
                check_finite(vloss, "PPO value loss")?;
                vg.clip_norm(self.config.max_grad_norm);
                self.value_opt.step(&mut self.value, &vg)?;
                self.last = stats;
            }
        }
        self.updates += 1;
        log::debug!(
            "ppo update {}: loss {:.4} entropy {:.3} clipped {:.2}",
            self.updates,
            self.last.loss,
            self.last.entropy,
            self.last.clip_fraction
        );
        Ok(())
    }
}

impl Agent for PpoAgent {
    fn name(&self) -> &'static str {
        if self.rnd.is_some() {
            "ppo-rnd"
        } else {
            "ppo"
        }
    }

    fn act(&mut self, env: &BatchEnv, rng: &mut dyn RngCore) -> Result<Vec<MutationAction>> {
        let b = env.sequences().len();
        let mut pending = Pending {
            actions: Vec::with_capacity(b),
            log_probs: Vec::with_capacity(b),
            values: Vec::with_capacity(b),
        };
        let mut out = Vec::with_capacity(b);
        for s in env.sequences() {
            let x = encode(s, self.alphabet_size);
            let logp = log_softmax(&self.policy.forward(&x)?)?;
            let probs: Vec<f64> = logp.iter().map(|l| l.exp()).collect();
            let a = sample_probs(&probs, rng);
            pending.actions.push(a);
            pending.log_probs.push(logp[a]);
            pending.values.push(self.value.forward(&x)?[0]);
            out.push(MutationAction::decode(a, self.seq_len, self.alphabet_size)?);
        }
        self.pending = Some(pending);
        Ok(out)
    }

    fn observe(
        &mut self,
        transitions: &[Transition],
        env: &mut BatchEnv,
        _progress: Progress,
        rng: &mut dyn RngCore,
    ) -> Result<()> {
        let pending = self
            .pending
            .take()
            .ok_or_else(|| Error::InvalidArgument("observe called without a preceding act".into()))?;
        let mut rewards: Vec<f64> = transitions.iter().map(|t| t.reward).collect();
        if let Some(rnd) = self.rnd.as_mut() {
            let next: Vec<Vec<f64>> = transitions.iter().map(|t| encode(&t.next_state, self.alphabet_size)).collect();
            let refs: Vec<&[f64]> = next.iter().map(|v| v.as_slice()).collect();
            let bonus = rnd.intrinsic(&refs)?;
            for (r, b) in rewards.iter_mut().zip(bonus) {
                *r += rnd.config.coef * b;
            }
            rnd.update(&refs)?;
        }
        self.buffer.push(RolloutStep {
            states: transitions.iter().map(|t| t.state.clone()).collect(),
            actions: pending.actions,
            log_probs: pending.log_probs,
            values: pending.values,
            rewards,
            dones: transitions.iter().map(|t| t.done).collect(),
        })?;
        if self.buffer.is_full() {
            let last: Vec<f64> = env
                .sequences()
                .iter()
                .map(|s| Ok(self.value.forward(&encode(s, self.alphabet_size))?[0]))
                .collect::<Result<_>>()?;
            self.update(&last, rng)?;
            self.buffer.clear();
        }
        Ok(())
    }

    fn diagnostics(&self) -> Diagnostics {
        Diagnostics::default()
    }
}
