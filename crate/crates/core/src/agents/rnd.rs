//! Random network distillation: a frozen random embedding and a predictor
//! trained to match it. Prediction error is the novelty bonus.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Activation, Adam, DenseNet, Grads};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RndConfig {
    pub embedding: usize,
    /// Weight of the normalized bonus added to the extrinsic reward.
    pub coef: f64,
    pub lr: f64,
}

impl Default for RndConfig {
    fn default() -> Self {
        Self {
            embedding: 32,
            coef: 0.05,
            lr: 1e-3,
        }
    }
}

/// Welford running moments.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RunningStats {
    count: u64,
    mean: f64,
    m2: f64,
}

impl RunningStats {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let d = x - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn std(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            (self.m2 / (self.count - 1) as f64).sqrt()
        }
    }
}

#[derive(Clone, Debug)]
pub struct RndPair {
    target: DenseNet,
    predictor: DenseNet,
    opt: Adam,
    stats: RunningStats,
    pub config: RndConfig,
}

/// Mean over states of the mean squared embedding error, and its gradient
/// with respect to the predictor.
pub fn predictor_loss_grad(predictor: &DenseNet, target: &DenseNet, states: &[&[f64]]) -> Result<(f64, Grads)> {
    let mut grads = Grads::zeros_like(predictor);
    if states.is_empty() {
        return Ok((0.0, grads));
    }
    let k = predictor.output_size() as f64;
    let n = states.len() as f64;
    let mut loss = 0.0;
    for x in states {
        let t = target.forward(x)?;
        let trace = predictor.forward_trace(x)?;
        let diff: Vec<f64> = trace.output().iter().zip(&t).map(|(p, t)| p - t).collect();
        loss += diff.iter().map(|d| d * d).sum::<f64>() / k / n;
        let upstream: Vec<f64> = diff.iter().map(|d| 2.0 * d / (k * n)).collect();
        predictor.backward_into(&trace, &upstream, &mut grads)?;
    }
    Ok((loss, grads))
}

impl RndPair {
    pub fn new(inputs: usize, hidden: &[usize], config: RndConfig, rng: &mut dyn RngCore) -> Result<Self> {
        if config.embedding == 0 || !(config.lr > 0.0) || !config.coef.is_finite() {
            return Err(Error::InvalidArgument(format!("bad RND config {config:?}")));
        }
        let mut sizes = vec![inputs];
        sizes.extend_from_slice(hidden);
        sizes.push(config.embedding);
        let target = DenseNet::new(&sizes, Activation::Relu, rng)?;
        let predictor = DenseNet::new(&sizes, Activation::Relu, rng)?;
        let opt = Adam::new(&predictor, config.lr);
        Ok(Self {
            target,
            predictor,
            opt,
            stats: RunningStats::default(),
            config,
        })
    }

    /// Pair whose predictor starts as an exact copy of the target.
    pub fn matched(inputs: usize, hidden: &[usize], config: RndConfig, rng: &mut dyn RngCore) -> Result<Self> {
        let mut pair = Self::new(inputs, hidden, config, rng)?;
        pair.predictor = pair.target.clone();
        pair.opt = Adam::new(&pair.predictor, pair.config.lr);
        Ok(pair)
    }

    pub fn target(&self) -> &DenseNet {
        &self.target
    }

    pub fn predictor(&self) -> &DenseNet {
        &self.predictor
    }

    /// Unnormalized squared prediction error for one state.
    pub fn raw_bonus(&self, x: &[f64]) -> Result<f64> {
        let t = self.target.forward(x)?;
        let p = self.predictor.forward(x)?;
        Ok(t.iter().zip(&p).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / t.len() as f64)
    }

    /// Bonuses scaled by the running standard deviation of all bonuses seen so far.
    pub fn intrinsic(&mut self, states: &[&[f64]]) -> Result<Vec<f64>> {
        let raw: Vec<f64> = states.iter().map(|x| self.raw_bonus(x)).collect::<Result<_>>()?;
        for &r in &raw {
            self.stats.push(r);
        }
        let std = self.stats.std();
        Ok(raw.into_iter().map(|r| if std > 0.0 { r / std } else { r }).collect())
    }

    /// One optimizer step of the predictor toward the target on `states`.
    pub fn update(&mut self, states: &[&[f64]]) -> Result<f64> {
        let (loss, grads) = predictor_loss_grad(&self.predictor, &self.target, states)?;
        if !loss.is_finite() || !grads.is_finite() {
            return Err(Error::NonFinite(format!("RND predictor loss {loss}")));
        }
        self.opt.step(&mut self.predictor, &grads)?;
        Ok(loss)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn state(k: usize, n: usize) -> Vec<f64> {
        let mut v = vec![0.0; n];
        v[k % n] = 1.0;
        v[(k * 7 + 3) % n] = 1.0;
        v
    }

    #[test]
    fn matched_pair_gives_zero_bonus() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut pair = RndPair::matched(20, &[16], RndConfig::default(), &mut rng).unwrap();
        let s = state(3, 20);
        assert_eq!(pair.raw_bonus(&s).unwrap(), 0.0);
        assert_eq!(pair.intrinsic(&[&s]).unwrap(), vec![0.0]);
    }

    #[test]
    fn training_reduces_bonus_on_seen_states() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut pair = RndPair::new(20, &[16], RndConfig::default(), &mut rng).unwrap();
        let states: Vec<Vec<f64>> = (0..5).map(|k| state(k, 20)).collect();
        let refs: Vec<&[f64]> = states.iter().map(|s| s.as_slice()).collect();
        let mut losses = Vec::new();
        for _ in 0..200 {
            losses.push(pair.update(&refs).unwrap());
        }
        // Trend check over windows; single Adam steps may wobble.
        for w in losses.chunks(50).collect::<Vec<_>>().windows(2) {
            let a: f64 = w[0].iter().sum();
            let b: f64 = w[1].iter().sum();
            assert!(b < a);
        }
    }

    #[test]
    fn target_is_frozen() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut pair = RndPair::new(10, &[8], RndConfig::default(), &mut rng).unwrap();
        let before = pair.target().clone();
        let s = state(1, 10);
        for _ in 0..10 {
            pair.update(&[&s]).unwrap();
        }
        assert_eq!(pair.target(), &before);
    }

    #[test]
    fn running_stats() {
        let mut s = RunningStats::default();
        for x in [1.0, 2.0, 3.0, 4.0] {
            s.push(x);
        }
        assert_eq!(s.mean(), 2.5);
        assert!((s.std() - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }
}
