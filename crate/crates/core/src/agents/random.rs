use rand::{Rng, RngCore};

use super::{Agent, Progress};
use crate::env::{BatchEnv, EnvConfig, Transition};
use crate::error::Result;
use crate::seq::MutationAction;

/// Uniform random mutations; the reference point for every learned agent.
pub struct RandomAgent {
    seq_len: usize,
    alphabet_size: usize,
}

impl RandomAgent {
    pub fn new(env: &EnvConfig) -> Self {
        Self {
            seq_len: env.seq_len,
            alphabet_size: env.alphabet_size(),
        }
    }
}

impl Agent for RandomAgent {
    fn name(&self) -> &'static str {
        "random"
    }

    fn act(&mut self, env: &BatchEnv, rng: &mut dyn RngCore) -> Result<Vec<MutationAction>> {
        Ok((0..env.sequences().len())
            .map(|_| MutationAction::new(rng.gen_range(0..self.seq_len), rng.gen_range(0..self.alphabet_size) as u8))
            .collect())
    }

    fn observe(&mut self, _: &[Transition], _: &mut BatchEnv, _: Progress, _: &mut dyn RngCore) -> Result<()> {
        Ok(())
    }
}
