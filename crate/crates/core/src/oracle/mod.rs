//! Scorers: the synthetic Potts landscape, the remote wire client, caching and metering.

mod cache;
mod potts;
pub mod remote;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seq::Sequence;

pub use cache::Cached;
pub use potts::{twin_landscapes, Edge, LandscapeParams, PottsLandscape};
pub use remote::RemoteScorer;

/// A score in (0, 1] with an optional per-residue confidence channel in (0, 100].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub score: f64,
    pub confidence: Option<Vec<f64>>,
}

impl ScoreReport {
    pub fn new(score: f64) -> Self {
        Self {
            score,
            confidence: None,
        }
    }

    pub fn validate(&self, seq_len: Option<usize>) -> Result<()> {
        if !(self.score > 0.0 && self.score <= 1.0) {
            return Err(Error::Scorer(format!("score {} outside (0, 1]", self.score)));
        }
        if let Some(conf) = &self.confidence {
            if let Some(len) = seq_len {
                if conf.len() != len {
                    return Err(Error::LengthMismatch {
                        expected: len,
                        actual: conf.len(),
                    });
                }
            }
            if conf.iter().any(|c| !(*c > 0.0 && *c <= 100.0)) {
                return Err(Error::Scorer("confidence outside (0, 100]".into()));
            }
        }
        Ok(())
    }
}

/// A batch reward model. Implementations are read-only and callable from many threads.
pub trait Scorer: Send + Sync {
    fn score_batch(&self, seqs: &[Sequence]) -> Result<Vec<ScoreReport>>;

    fn score_one(&self, seq: &Sequence) -> Result<ScoreReport> {
        let mut out = self.score_batch(std::slice::from_ref(seq))?;
        out.pop()
            .ok_or_else(|| Error::Scorer("scorer returned an empty batch".into()))
    }

    fn scores(&self, seqs: &[Sequence]) -> Result<Vec<f64>> {
        Ok(self.score_batch(seqs)?.into_iter().map(|r| r.score).collect())
    }
}

impl<S: Scorer + ?Sized> Scorer for &S {
    fn score_batch(&self, seqs: &[Sequence]) -> Result<Vec<ScoreReport>> {
        (**self).score_batch(seqs)
    }
}

impl<S: Scorer + ?Sized> Scorer for Box<S> {
    fn score_batch(&self, seqs: &[Sequence]) -> Result<Vec<ScoreReport>> {
        (**self).score_batch(seqs)
    }
}

impl<S: Scorer + ?Sized> Scorer for Arc<S> {
    fn score_batch(&self, seqs: &[Sequence]) -> Result<Vec<ScoreReport>> {
        (**self).score_batch(seqs)
    }
}

/// Wraps a plain function as a scorer. Mostly a test double.
pub struct FnScorer<F>(pub F);

impl<F> Scorer for FnScorer<F>
where
    F: Fn(&Sequence) -> f64 + Send + Sync,
{
    fn score_batch(&self, seqs: &[Sequence]) -> Result<Vec<ScoreReport>> {
        Ok(seqs.iter().map(|s| ScoreReport::new((self.0)(s))).collect())
    }
}

/// Counts every sequence passed through to the inner scorer.
pub struct Metered<S> {
    inner: S,
    queries: AtomicU64,
}

impl<S: Scorer> Metered<S> {
    pub fn new(inner: S) -> Self {
        Self {
            inner,
            queries: AtomicU64::new(0),
        }
    }

    pub fn queries(&self) -> u64 {
        self.queries.load(Ordering::Relaxed)
    }

    pub fn inner(&self) -> &S {
        &self.inner
    }
}

impl<S: Scorer> Scorer for Metered<S> {
    fn score_batch(&self, seqs: &[Sequence]) -> Result<Vec<ScoreReport>> {
        self.queries.fetch_add(seqs.len() as u64, Ordering::Relaxed);
        self.inner.score_batch(seqs)
    }
}
