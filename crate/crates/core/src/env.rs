//! The batched mutation environment and the top-K candidate archive.

use std::collections::HashSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::Scorer;
use crate::seq::{Alphabet, MutationAction, Sequence};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode", content = "length")]
pub enum Horizon {
    Infinite,
    Finite(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub seq_len: usize,
    pub alphabet: Alphabet,
    pub batch_size: usize,
    pub horizon: Horizon,
}

impl EnvConfig {
    pub fn new(seq_len: usize, alphabet: Alphabet, batch_size: usize, horizon: Horizon) -> Result<Self> {
        let cfg = Self {
            seq_len,
            alphabet,
            batch_size,
            horizon,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seq_len == 0 {
            return Err(Error::InvalidArgument("sequence length must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be at least 1".into()));
        }
        if self.horizon == Horizon::Finite(0) {
            return Err(Error::InvalidArgument("finite horizon needs T >= 1".into()));
        }
        Ok(())
    }

    pub fn alphabet_size(&self) -> usize {
        self.alphabet.len()
    }

    pub fn action_count(&self) -> usize {
        self.seq_len * self.alphabet.len()
    }

    pub fn state_size(&self) -> usize {
        self.seq_len * self.alphabet.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub state: Sequence,
    pub action: MutationAction,
    pub reward: f64,
    pub next_state: Sequence,
    pub done: bool,
}

/// B independent copies of the mutation MDP stepped in lockstep.
#[derive(Clone, Debug)]
pub struct BatchEnv {
    config: EnvConfig,
    sequences: Vec<Sequence>,
    steps: Vec<usize>,
    queries: u64,
}

impl BatchEnv {
    /// Fresh environment with uniformly random starting sequences.
    pub fn reset<R: Rng + ?Sized>(config: EnvConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let la = config.alphabet_size();
        let sequences = (0..config.batch_size)
            .map(|_| Sequence::random(config.seq_len, la, rng))
            .collect();
        Ok(Self {
            steps: vec![0; config.batch_size],
            config,
            sequences,
            queries: 0,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn sequences(&self) -> &[Sequence] {
        &self.sequences
    }

    pub fn step_counters(&self) -> &[usize] {
        &self.steps
    }

    /// Total sequences sent to scorers by this environment.
    pub fn queries(&self) -> u64 {
        self.queries
    }

    /// Replaces the current batch, e.g. when an optimizer rejects proposals.
    pub fn set_sequences(&mut self, sequences: Vec<Sequence>) -> Result<()> {
        if sequences.len() != self.config.batch_size {
            return Err(Error::LengthMismatch {
                expected: self.config.batch_size,
                actual: sequences.len(),
            });
        }
        let la = self.config.alphabet_size();
        for s in &sequences {
            if s.len() != self.config.seq_len {
                return Err(Error::LengthMismatch {
                    expected: self.config.seq_len,
                    actual: s.len(),
                });
            }
            if s.residues().iter().any(|&r| r as usize >= la) {
                return Err(Error::InvalidArgument("residue outside the alphabet".into()));
            }
        }
        self.sequences = sequences;
        Ok(())
    }

    /// Applies one action per environment and scores every mutated sequence
    /// in a single batch. Finished finite-horizon episodes restart from a new
    /// random sequence; the returned transitions still carry the terminal state.
    pub fn step<R: Rng + ?Sized>(
        &mut self,
        actions: &[MutationAction],
        scorer: &dyn Scorer,
        rng: &mut R,
    ) -> Result<Vec<Transition>> {
        if actions.len() != self.config.batch_size {
            return Err(Error::LengthMismatch {
                expected: self.config.batch_size,
                actual: actions.len(),
            });
        }
        let la = self.config.alphabet_size();
        let next: Vec<Sequence> = self
            .sequences
            .iter()
            .zip(actions)
            .map(|(s, &a)| {
                if a.residue as usize >= la {
                    return Err(Error::OutOfRange {
                        index: a.residue as usize,
                        limit: la,
                    });
                }
                s.apply_mutation(a)
            })
            .collect::<Result<_>>()?;
        let reports = scorer.score_batch(&next)?;
        if reports.len() != next.len() {
            return Err(Error::Scorer(format!(
                "scorer returned {} reports for {} sequences",
                reports.len(),
                next.len()
            )));
        }
        for r in &reports {
            r.validate(None)?;
        }
        self.queries += next.len() as u64;

        let mut transitions = Vec::with_capacity(next.len());
        for (i, (next_state, report)) in next.into_iter().zip(reports).enumerate() {
            self.steps[i] += 1;
            let done = matches!(self.config.horizon, Horizon::Finite(t) if self.steps[i] >= t);
            let state = if done {
                self.steps[i] = 0;
                std::mem::replace(
                    &mut self.sequences[i],
                    Sequence::random(self.config.seq_len, la, rng),
                )
            } else {
                std::mem::replace(&mut self.sequences[i], next_state.clone())
            };
            transitions.push(Transition {
                state,
                action: actions[i],
                reward: report.score,
                next_state,
                done,
            });
        }
        Ok(transitions)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchiveEntry {
    pub sequence: Sequence,
    pub score: f64,
    /// Insertion order; earlier discoveries win ties.
    pub discovered: u64,
}

/// Top-K distinct sequences by score, best first.
#[derive(Clone, Debug)]
pub struct CandidateArchive {
    capacity: usize,
    entries: Vec<ArchiveEntry>,
    members: HashSet<Sequence>,
    counter: u64,
}

impl CandidateArchive {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            entries: Vec::with_capacity(capacity + 1),
            members: HashSet::new(),
            counter: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ArchiveEntry] {
        &self.entries
    }

    pub fn best(&self) -> Option<&ArchiveEntry> {
        self.entries.first()
    }

    pub fn sequences(&self) -> Vec<Sequence> {
        self.entries.iter().map(|e| e.sequence.clone()).collect()
    }

    pub fn insert(&mut self, sequence: &Sequence, score: f64) -> bool {
        if self.capacity == 0 || self.members.contains(sequence) {
            return false;
        }
        let discovered = self.counter;
        self.counter += 1;
        if self.entries.len() == self.capacity {
            let worst = self.entries.last().expect("archive is full");
            if score <= worst.score {
                return false;
            }
            let evicted = self.entries.pop().expect("archive is full");
            self.members.remove(&evicted.sequence);
        }
        // Entries are ordered by score descending, then discovery ascending.
        let pos = self.entries.partition_point(|e| e.score >= score);
        self.entries.insert(
            pos,
            ArchiveEntry {
                sequence: sequence.clone(),
                score,
                discovered,
            },
        );
        self.members.insert(sequence.clone());
        true
    }

    pub fn update<'a>(&mut self, batch: impl IntoIterator<Item = (&'a Sequence, f64)>) {
        for (s, score) in batch {
            self.insert(s, score);
        }
    }
}
