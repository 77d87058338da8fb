use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use super::{ScoreReport, Scorer};
use crate::error::{Error, Result};
use crate::seq::Sequence;

/// Memoizing wrapper. Each distinct sequence reaches the inner scorer once;
/// misses within one batch are forwarded together as a single inner batch.
pub struct Cached<S> {
    inner: S,
    table: Mutex<HashMap<Sequence, ScoreReport>>,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl<S: Scorer> Cached<S> {
    pub fn new(inner: S) -> Self {
        Self {
            inner,
            table: Mutex::new(HashMap::new()),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        }
    }

    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> u64 {
        self.misses.load(Ordering::Relaxed)
    }

    pub fn len(&self) -> usize {
        self.table.lock().expect("cache lock poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn inner(&self) -> &S {
        &self.inner
    }
}

impl<S: Scorer> Scorer for Cached<S> {
    fn score_batch(&self, seqs: &[Sequence]) -> Result<Vec<ScoreReport>> {
        let mut pending: Vec<Sequence> = Vec::new();
        {
            let table = self.table.lock().expect("cache lock poisoned");
            let mut queued = std::collections::HashSet::new();
            for s in seqs {
                if table.contains_key(s) || queued.contains(s) {
                    self.hits.fetch_add(1, Ordering::Relaxed);
                } else {
                    self.misses.fetch_add(1, Ordering::Relaxed);
                    queued.insert(s.clone());
                    pending.push(s.clone());
                }
            }
        }
        if !pending.is_empty() {
            let fresh = self.inner.score_batch(&pending)?;
            if fresh.len() != pending.len() {
                return Err(Error::Scorer(format!(
                    "inner scorer returned {} reports for {} sequences",
                    fresh.len(),
                    pending.len()
                )));
            }
            let mut table = self.table.lock().expect("cache lock poisoned");
            for (s, r) in pending.into_iter().zip(fresh) {
                table.insert(s, r);
            }
        }
        let table = self.table.lock().expect("cache lock poisoned");
        Ok(seqs.iter().map(|s| table[s].clone()).collect())
    }
}
