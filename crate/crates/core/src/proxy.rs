//! Distilled proxy reward: a small regressor from one-hot sequences to a score
//! in (0, 1), pretrained on oracle labels and periodically finetuned on the
//! top-ranked candidates of a running optimization.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{sigmoid, Activation, Adam, DenseNet, Grads};
use crate::oracle::{ScoreReport, Scorer};
use crate::seq::{MutationAction, Sequence};

/// Parameter budget for the proxy network.
pub const DEFAULT_PARAM_BUDGET: usize = 15_000;
const SECOND_HIDDEN: usize = 16;

/// Two hidden layers sized so the total parameter count lands near `budget`.
pub fn hidden_sizes_for_budget(inputs: usize, budget: usize) -> (usize, usize) {
    let h2 = SECOND_HIDDEN;
    // params = h1 * (inputs + 1 + h2) + 2 * h2 + 1
    let per_unit = (inputs + 1 + h2) as f64;
    let h1 = ((budget.saturating_sub(2 * h2 + 1)) as f64 / per_unit).round() as usize;
    (h1.max(4), h2)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProxyModel {
    net: DenseNet,
    seq_len: usize,
    alphabet_size: usize,
}

impl ProxyModel {
    pub fn new<R: Rng + ?Sized>(seq_len: usize, alphabet_size: usize, budget: usize, rng: &mut R) -> Result<Self> {
        let inputs = seq_len * alphabet_size;
        let (h1, h2) = hidden_sizes_for_budget(inputs, budget);
        let net = DenseNet::new(&[inputs, h1, h2, 1], Activation::Relu, rng)?;
        Ok(Self {
            net,
            seq_len,
            alphabet_size,
        })
    }

    pub fn from_net(net: DenseNet, seq_len: usize, alphabet_size: usize) -> Result<Self> {
        if net.input_size() != seq_len * alphabet_size || net.output_size() != 1 {
            return Err(Error::Shape(format!(
                "proxy network {:?} does not map {}x{} one-hot inputs to one output",
                net.sizes(),
                seq_len,
                alphabet_size
            )));
        }
        Ok(Self {
            net,
            seq_len,
            alphabet_size,
        })
    }

    pub fn net(&self) -> &DenseNet {
        &self.net
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn parameter_count(&self) -> usize {
        self.net.parameter_count()
    }

    fn encode(&self, seq: &Sequence) -> Result<Vec<f64>> {
        if seq.len() != self.seq_len {
            return Err(Error::LengthMismatch {
                expected: self.seq_len,
                actual: seq.len(),
            });
        }
        if seq.residues().iter().any(|&r| r as usize >= self.alphabet_size) {
            return Err(Error::InvalidArgument("residue outside the alphabet".into()));
        }
        Ok(seq.one_hot(self.alphabet_size).into_vec())
    }

    pub fn predict(&self, seq: &Sequence) -> Result<f64> {
        let x = self.encode(seq)?;
        Ok(sigmoid(self.net.forward(&x)?[0]))
    }

    pub fn predict_batch(&self, seqs: &[Sequence]) -> Result<Vec<f64>> {
        seqs.iter().map(|s| self.predict(s)).collect()
    }

    pub fn mse(&self, data: &[(Sequence, f64)]) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::InvalidArgument("empty dataset".into()));
        }
        let mut total = 0.0;
        for (s, y) in data {
            let p = self.predict(s)?;
            total += (p - y) * (p - y);
        }
        Ok(total / data.len() as f64)
    }

    /// Gradient of the mean squared error over `batch` with respect to the network parameters.
    pub fn mse_gradient(&self, batch: &[&(Sequence, f64)]) -> Result<Grads> {
        let mut grads = Grads::zeros_like(&self.net);
        let n = batch.len() as f64;
        for (s, y) in batch.iter().map(|p| (&p.0, p.1)) {
            let x = self.encode(s)?;
            let trace = self.net.forward_trace(&x)?;
            let p = sigmoid(trace.output()[0]);
            let upstream = 2.0 * (p - y) * p * (1.0 - p) / n;
            self.net.backward_into(&trace, &[upstream], &mut grads)?;
        }
        Ok(grads)
    }

    /// Mini-batch MSE descent. Returns the full-dataset loss after each epoch.
    pub fn fit<R: Rng + ?Sized>(
        &mut self,
        data: &[(Sequence, f64)],
        epochs: usize,
        batch_size: usize,
        opt: &mut Adam,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        if data.is_empty() {
            return Err(Error::InvalidArgument("empty training set".into()));
        }
        let batch_size = batch_size.clamp(1, data.len());
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut losses = Vec::with_capacity(epochs);
        for _ in 0..epochs {
            order.shuffle(rng);
            for chunk in order.chunks(batch_size) {
                let batch: Vec<&(Sequence, f64)> = chunk.iter().map(|&i| &data[i]).collect();
                let grads = self.mse_gradient(&batch)?;
                if !grads.is_finite() {
                    return Err(Error::NonFinite("proxy gradient".into()));
                }
                opt.step(&mut self.net, &grads)?;
            }
            losses.push(self.mse(data)?);
        }
        Ok(losses)
    }

    pub fn write_checkpoint<W: std::io::Write>(&self, writer: W) -> Result<()> {
        self.net.write_checkpoint(writer)
    }
}

impl Scorer for ProxyModel {
    fn score_batch(&self, seqs: &[Sequence]) -> Result<Vec<ScoreReport>> {
        seqs.iter()
            .map(|s| Ok(ScoreReport::new(self.predict(s)?.max(f64::MIN_POSITIVE))))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub uniform_samples: usize,
    pub climb_samples: usize,
    pub elites: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub param_budget: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            uniform_samples: 4000,
            climb_samples: 1000,
            elites: 20,
            epochs: 30,
            batch_size: 32,
            lr: 1e-3,
            param_budget: DEFAULT_PARAM_BUDGET,
        }
    }
}

/// Labeled corpus of uniform sequences plus hill-climbed perturbations of
/// the best ones. Every sequence sent to the oracle ends up in the corpus, so
/// the oracle cost is exactly `corpus.len()`.
pub fn build_corpus<R: Rng + ?Sized>(
    oracle: &dyn Scorer,
    seq_len: usize,
    alphabet_size: usize,
    config: &PretrainConfig,
    rng: &mut R,
) -> Result<Vec<(Sequence, f64)>> {
    const CHUNK: usize = 100;
    let mut corpus: Vec<(Sequence, f64)> = Vec::with_capacity(config.uniform_samples + config.climb_samples);
    let mut remaining = config.uniform_samples;
    while remaining > 0 {
        let n = remaining.min(CHUNK);
        let seqs: Vec<Sequence> = (0..n).map(|_| Sequence::random(seq_len, alphabet_size, rng)).collect();
        let scores = oracle.scores(&seqs)?;
        corpus.extend(seqs.into_iter().zip(scores));
        remaining -= n;
    }
    let mut elites: Vec<(Sequence, f64)> = corpus.clone();
    elites.sort_by(|a, b| b.1.total_cmp(&a.1));
    elites.truncate(config.elites.max(1));
    if elites.is_empty() && config.climb_samples > 0 {
        elites.push({
            let s = Sequence::random(seq_len, alphabet_size, rng);
            let score = oracle.score_one(&s)?.score;
            corpus.push((s.clone(), score));
            (s, score)
        });
    }
    let mut remaining = config.climb_samples;
    while remaining > 0 {
        let n = remaining.min(CHUNK);
        let picks: Vec<usize> = (0..n).map(|_| rng.gen_range(0..elites.len())).collect();
        let proposals: Vec<Sequence> = picks
            .iter()
            .map(|&k| {
                let a = MutationAction::new(rng.gen_range(0..seq_len), rng.gen_range(0..alphabet_size) as u8);
                elites[k].0.apply_mutation(a)
            })
            .collect::<Result<_>>()?;
        let scores = oracle.scores(&proposals)?;
        for ((k, s), score) in picks.into_iter().zip(proposals).zip(scores) {
            if score > elites[k].1 {
                elites[k] = (s.clone(), score);
            }
            corpus.push((s, score));
        }
        remaining -= n;
    }
    Ok(corpus)
}

/// Trains a fresh-optimizer MSE regression on the corpus. Returns per-epoch losses.
pub fn pretrain<R: Rng + ?Sized>(
    model: &mut ProxyModel,
    corpus: &[(Sequence, f64)],
    config: &PretrainConfig,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if corpus.is_empty() {
        return Err(Error::InvalidArgument("pretraining corpus is empty".into()));
    }
    let mut opt = Adam::new(model.net(), config.lr);
    model.fit(corpus, config.epochs, config.batch_size, &mut opt, rng)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FinetuneSchedule {
    /// Environment transitions (proxy queries) between ticks.
    pub interval: u64,
    pub top_k: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
}

impl Default for FinetuneSchedule {
    fn default() -> Self {
        Self {
            interval: 2000,
            top_k: 100,
            epochs: 50,
            lr: 1e-3,
            batch_size: 100,
        }
    }
}

impl FinetuneSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.interval == 0 || self.top_k == 0 || self.epochs == 0 || self.batch_size == 0 || !(self.lr > 0.0) {
            return Err(Error::InvalidArgument(format!("finetune schedule must be positive: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TickReport {
    pub selected: Vec<Sequence>,
    pub oracle_scores: Vec<f64>,
    /// Proxy predictions on the selected set before finetuning.
    pub proxy_scores: Vec<f64>,
    /// Pearson r between `proxy_scores` and `oracle_scores`; `None` when either is constant.
    pub pearson: Option<f64>,
    pub epoch_losses: Vec<f64>,
    pub initial_loss: f64,
}

impl TickReport {
    pub fn oracle_queries(&self) -> usize {
        self.selected.len()
    }

    /// True when no epoch raised the finetune-set loss.
    pub fn loss_non_increasing(&self) -> bool {
        let mut prev = self.initial_loss;
        for &l in &self.epoch_losses {
            if l > prev {
                return false;
            }
            prev = l;
        }
        true
    }
}

/// Ranks the pool by proxy score, labels the top K distinct sequences with
/// the oracle, and finetunes on them. The model is untouched if the oracle fails.
pub fn finetune_tick<R: Rng + ?Sized>(
    model: &mut ProxyModel,
    pool: &[Sequence],
    oracle: &dyn Scorer,
    schedule: &FinetuneSchedule,
    rng: &mut R,
) -> Result<TickReport> {
    schedule.validate()?;
    let mut seen = HashSet::new();
    let distinct: Vec<&Sequence> = pool.iter().filter(|s| seen.insert(*s)).collect();
    if distinct.is_empty() {
        return Err(Error::InvalidArgument("finetune pool is empty".into()));
    }
    let mut ranked: Vec<(f64, &Sequence)> = distinct
        .into_iter()
        .map(|s| Ok((model.predict(s)?, s)))
        .collect::<Result<_>>()?;
    // Stable sort keeps pool order among equal predictions.
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0));
    ranked.truncate(schedule.top_k);
    let selected: Vec<Sequence> = ranked.iter().map(|(_, s)| (*s).clone()).collect();
    let proxy_scores: Vec<f64> = ranked.iter().map(|(p, _)| *p).collect();

    let oracle_scores = oracle.scores(&selected)?;
    if oracle_scores.len() != selected.len() {
        return Err(Error::Scorer("oracle returned the wrong number of scores".into()));
    }
    let pearson = pearson(&proxy_scores, &oracle_scores).ok();

    let data: Vec<(Sequence, f64)> = selected.iter().cloned().zip(oracle_scores.iter().copied()).collect();
    let initial_loss = model.mse(&data)?;
    let mut opt = Adam::new(model.net(), schedule.lr);
    let mut trial = model.clone();
    let epoch_losses = trial.fit(&data, schedule.epochs, schedule.batch_size, &mut opt, rng)?;
    *model = trial;
    Ok(TickReport {
        selected,
        oracle_scores,
        proxy_scores,
        pearson,
        epoch_losses,
        initial_loss,
    })
}

/// Sample Pearson correlation.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::LengthMismatch {
            expected: xs.len(),
            actual: ys.len(),
        });
    }
    if xs.len() < 2 {
        return Err(Error::UndefinedCorrelation("need at least two points".into()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("zero variance".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// (oracle-query count, Pearson r) per finetune tick.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CorrelationLog {
    pub entries: Vec<(u64, Option<f64>)>,
}

impl CorrelationLog {
    pub fn push(&mut self, oracle_queries: u64, r: Option<f64>) {
        self.entries.push((oracle_queries, r));
    }

    pub fn first(&self) -> Option<f64> {
        self.entries.first().and_then(|e| e.1)
    }

    pub fn last(&self) -> Option<f64> {
        self.entries.last().and_then(|e| e.1)
    }
}
