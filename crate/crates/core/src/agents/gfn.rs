//! Single-step GFlowNet. One network emits the mutation logits and, as an
//! extra output, logZ of the start state; trajectory balance pushes the
//! sampling distribution toward R(x)^β.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::buffers::ReplayBuffer;
use super::{check_finite, encode, Agent, Progress};
use crate::env::{BatchEnv, EnvConfig, Transition};
use crate::error::{Error, Result};
use crate::nn::{log_softmax, sample_probs, Activation, Adam, DenseNet, Grads};
use crate::seq::{MutationAction, Sequence};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GfnConfig {
    /// Reward exponent.
    pub beta: f64,
    pub lr: f64,
    pub replay_capacity: usize,
    /// Replayed transitions added to each update besides the fresh batch.
    pub replay_batch: usize,
    /// Probability of a uniform random action instead of a policy sample.
    pub epsilon: f64,
    pub max_grad_norm: f64,
}

impl Default for GfnConfig {
    fn default() -> Self {
        Self {
            beta: 6.0,
            lr: 1e-3,
            replay_capacity: 10_000,
            replay_batch: 100,
            epsilon: 0.0,
            max_grad_norm: 10.0,
        }
    }
}

impl GfnConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.beta >= 0.0
            && self.beta.is_finite()
            && self.lr > 0.0
            && (0.0..=1.0).contains(&self.epsilon)
            && self.max_grad_norm > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("bad GFlowNet config {self:?}")))
        }
    }
}

/// One sampled step: start state encoding, flat action, child reward.
#[derive(Clone, Copy, Debug)]
pub struct TbSample<'a> {
    pub state: &'a [f64],
    pub action: usize,
    pub reward: f64,
}

/// Mean of `(logZ(s) + log π(a|s) − β·log R(x))²` and its gradient. The last
/// network output is logZ; the rest are action logits.
pub fn tb_loss_grad(net: &DenseNet, samples: &[TbSample<'_>], beta: f64) -> Result<(f64, Grads)> {
    let mut grads = Grads::zeros_like(net);
    if samples.is_empty() {
        return Ok((0.0, grads));
    }
    let n = samples.len() as f64;
    let outputs = net.output_size();
    let mut loss = 0.0;
    for s in samples {
        if !(s.reward > 0.0) {
            return Err(Error::Domain(format!("trajectory balance needs R > 0, got {}", s.reward)));
        }
        let trace = net.forward_trace(s.state)?;
        let out = trace.output();
        let logits = &out[..outputs - 1];
        let log_z = out[outputs - 1];
        let logp = log_softmax(logits)?;
        let resid = log_z + logp[s.action] - beta * s.reward.ln();
        loss += resid * resid / n;
        let mut upstream: Vec<f64> = logp
            .iter()
            .enumerate()
            .map(|(k, l)| {
                let onehot = if k == s.action { 1.0 } else { 0.0 };
                2.0 * resid * (onehot - l.exp()) / n
            })
            .collect();
        upstream.push(2.0 * resid / n);
        net.backward_into(&trace, &upstream, &mut grads)?;
    }
    Ok((loss, grads))
}

pub struct GfnAgent {
    net: DenseNet,
    opt: Adam,
    replay: ReplayBuffer,
    config: GfnConfig,
    seq_len: usize,
    alphabet_size: usize,
    last_loss: f64,
}

impl GfnAgent {
    pub fn new(env: &EnvConfig, hidden: &[usize], config: GfnConfig, rng: &mut dyn RngCore) -> Result<Self> {
        config.validate()?;
        let mut sizes = vec![env.state_size()];
        sizes.extend_from_slice(hidden);
        sizes.push(env.action_count() + 1);
        let net = DenseNet::new(&sizes, Activation::Relu, rng)?;
        Ok(Self {
            opt: Adam::new(&net, config.lr),
            net,
            replay: ReplayBuffer::new(config.replay_capacity),
            config,
            seq_len: env.seq_len,
            alphabet_size: env.alphabet_size(),
            last_loss: f64::NAN,
        })
    }

    pub fn net(&self) -> &DenseNet {
        &self.net
    }

    pub fn last_loss(&self) -> f64 {
        self.last_loss
    }

    /// Action probabilities and logZ at `seq`.
    pub fn policy(&self, seq: &Sequence) -> Result<(Vec<f64>, f64)> {
        let out = self.net.forward(&encode(seq, self.alphabet_size))?;
        let (logits, log_z) = out.split_at(out.len() - 1);
        let probs = log_softmax(logits)?.into_iter().map(f64::exp).collect();
        Ok((probs, log_z[0]))
    }

    pub fn sample_action(&self, seq: &Sequence, rng: &mut dyn RngCore) -> Result<usize> {
        let n = self.seq_len * self.alphabet_size;
        if self.config.epsilon > 0.0 && rng.gen::<f64>() < self.config.epsilon {
            return Ok(rng.gen_range(0..n));
        }
        Ok(sample_probs(&self.policy(seq)?.0, rng))
    }

    /// One optimizer step on `(start, flat action, reward)` triples.
    pub fn train_on(&mut self, batch: &[(Sequence, usize, f64)]) -> Result<f64> {
        let states: Vec<Vec<f64>> = batch.iter().map(|b| encode(&b.0, self.alphabet_size)).collect();
        let samples: Vec<TbSample<'_>> = batch
            .iter()
            .zip(&states)
            .map(|(b, x)| TbSample {
                state: x,
                action: b.1,
                reward: b.2,
            })
            .collect();
        let (loss, mut grads) = tb_loss_grad(&self.net, &samples, self.config.beta)?;
        check_finite(loss, "trajectory balance loss")?;
        grads.clip_norm(self.config.max_grad_norm);
        self.opt.step(&mut self.net, &grads)?;
        self.last_loss = loss;
        Ok(loss)
    }
}

impl Agent for GfnAgent {
    fn name(&self) -> &'static str {
        "gfn"
    }

    fn act(&mut self, env: &BatchEnv, rng: &mut dyn RngCore) -> Result<Vec<MutationAction>> {
        env.sequences()
            .iter()
            .map(|s| MutationAction::decode(self.sample_action(s, rng)?, self.seq_len, self.alphabet_size))
            .collect()
    }

    fn observe(
        &mut self,
        transitions: &[Transition],
        _env: &mut BatchEnv,
        _progress: Progress,
        rng: &mut dyn RngCore,
    ) -> Result<()> {
        let mut batch: Vec<(Sequence, usize, f64)> = Vec::with_capacity(transitions.len() + self.config.replay_batch);
        for t in transitions {
            batch.push((t.state.clone(), t.action.encode(self.seq_len, self.alphabet_size)?, t.reward));
        }
        for t in self.replay.sample(self.config.replay_batch, rng) {
            batch.push((t.state.clone(), t.action.encode(self.seq_len, self.alphabet_size)?, t.reward));
        }
        for t in transitions {
            self.replay.push(t.clone());
        }
        self.train_on(&batch)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::Horizon;
    use crate::seq::Alphabet;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn train_two_children(beta: f64, rewards: [f64; 2], seed: u64) -> (Vec<f64>, f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let env = EnvConfig::new(1, Alphabet::new("AB").unwrap(), 1, Horizon::Infinite).unwrap();
        let cfg = GfnConfig {
            beta,
            lr: 3e-3,
            ..GfnConfig::default()
        };
        let mut agent = GfnAgent::new(&env, &[16], cfg, &mut rng).unwrap();
        let s0 = Sequence::from_indices(vec![0]);
        for _ in 0..3000 {
            let batch: Vec<_> = (0..32)
                .map(|_| {
                    let a = agent.sample_action(&s0, &mut rng).unwrap();
                    (s0.clone(), a, rewards[a])
                })
                .collect();
            agent.train_on(&batch).unwrap();
        }
        agent.policy(&s0).unwrap()
    }

    #[test]
    fn proportional_to_reward() {
        let (p, log_z) = train_two_children(1.0, [1.0, 3.0], 0);
        assert!((p[1] - 0.75).abs() < 0.02, "{p:?}");
        assert!((log_z - 4f64.ln()).abs() < 0.05, "{log_z}");
    }

    #[test]
    fn sharper_with_larger_beta() {
        let (p, _) = train_two_children(2.0, [1.0, 3.0], 1);
        assert!((p[1] - 0.9).abs() < 0.02, "{p:?}");
    }

    #[test]
    fn zero_beta_is_uniform() {
        let (p, log_z) = train_two_children(0.0, [1.0, 3.0], 2);
        assert!((p[1] - 0.5).abs() < 0.02, "{p:?}");
        assert!((log_z - 2f64.ln()).abs() < 0.05);
    }

    #[test]
    fn nonpositive_reward_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = DenseNet::new(&[2, 4, 3], Activation::Relu, &mut rng).unwrap();
        let x = [1.0, 0.0];
        let s = TbSample {
            state: &x,
            action: 0,
            reward: 0.0,
        };
        assert!(matches!(tb_loss_grad(&net, &[s], 1.0), Err(Error::Domain(_))));
    }
}
