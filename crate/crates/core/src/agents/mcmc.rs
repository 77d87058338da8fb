//! Metropolis–Hastings with simulated annealing, one chain per environment slot.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::{Agent, Diagnostics, Progress};
use crate::env::{BatchEnv, EnvConfig, Transition};
use crate::error::{Error, Result};
use crate::oracle::Scorer;
use crate::seq::{MutationAction, Sequence};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct McmcConfig {
    pub initial_temperature: f64,
    /// Temperature reached when the budget runs out; sets the decay factor.
    pub final_temperature: f64,
    /// Explicit per-step decay factor, overriding the budget-derived one.
    pub alpha: Option<f64>,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            initial_temperature: 1.0,
            final_temperature: 1e-2,
            alpha: None,
        }
    }
}

/// Metropolis acceptance probability for a score change `delta` at temperature `t`.
pub fn accept_probability(delta: f64, t: f64) -> f64 {
    if delta >= 0.0 {
        1.0
    } else {
        (delta / t).exp()
    }
}

fn accept(delta: f64, t: f64, rng: &mut dyn RngCore) -> bool {
    delta >= 0.0 || rng.gen::<f64>() < accept_probability(delta, t)
}

fn propose(seq: &Sequence, alphabet_size: usize, rng: &mut dyn RngCore) -> MutationAction {
    MutationAction::new(rng.gen_range(0..seq.len()), rng.gen_range(0..alphabet_size) as u8)
}

/// A single annealed chain.
#[derive(Clone, Debug, PartialEq)]
pub struct AnnealState {
    pub sequence: Sequence,
    pub score: f64,
    pub temperature: f64,
    pub alpha: f64,
}

/// Proposes a uniform single-site mutation, accepts it by the Metropolis
/// rule, then cools the temperature.
pub fn mcmc_step(
    chain: &AnnealState,
    scorer: &dyn Scorer,
    alphabet_size: usize,
    rng: &mut dyn RngCore,
) -> Result<AnnealState> {
    if !(chain.temperature > 0.0) {
        return Err(Error::InvalidArgument(format!("temperature must be positive, got {}", chain.temperature)));
    }
    let proposal = chain.sequence.apply_mutation(propose(&chain.sequence, alphabet_size, rng))?;
    let score = scorer.score_one(&proposal)?.score;
    let mut next = chain.clone();
    if accept(score - chain.score, chain.temperature, rng) {
        next.sequence = proposal;
        next.score = score;
    }
    next.temperature *= chain.alpha;
    Ok(next)
}

pub struct McmcAgent {
    chains: Vec<Sequence>,
    scores: Option<Vec<f64>>,
    temperature: f64,
    alpha: f64,
    alphabet_size: usize,
    accepted: u64,
    proposed: u64,
}

impl McmcAgent {
    pub fn new(env: &EnvConfig, config: McmcConfig, budget: u64) -> Result<Self> {
        if !(config.initial_temperature > 0.0) || !(config.final_temperature > 0.0) {
            return Err(Error::InvalidArgument(format!("bad MCMC config {config:?}")));
        }
        let steps = budget / env.batch_size as u64;
        let alpha = match config.alpha {
            Some(a) => a,
            None if steps > 0 => (config.final_temperature / config.initial_temperature).powf(1.0 / steps as f64),
            None => 1.0,
        };
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::InvalidArgument(format!("decay factor {alpha} outside (0, 1]")));
        }
        Ok(Self {
            chains: Vec::new(),
            scores: None,
            temperature: config.initial_temperature,
            alpha,
            alphabet_size: env.alphabet_size(),
            accepted: 0,
            proposed: 0,
        })
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn chains(&self) -> &[Sequence] {
        &self.chains
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }
}

impl Agent for McmcAgent {
    fn name(&self) -> &'static str {
        "mcmc"
    }

    fn act(&mut self, env: &BatchEnv, rng: &mut dyn RngCore) -> Result<Vec<MutationAction>> {
        if self.scores.is_none() {
            // The starting states have no scores yet; a self-mutation scores them in place.
            return Ok(env.sequences().iter().map(|s| MutationAction::identity_at(s, 0)).collect());
        }
        Ok(env
            .sequences()
            .iter()
            .map(|s| propose(s, self.alphabet_size, rng))
            .collect())
    }

    fn observe(
        &mut self,
        transitions: &[Transition],
        env: &mut BatchEnv,
        _progress: Progress,
        rng: &mut dyn RngCore,
    ) -> Result<()> {
        match self.scores.as_mut() {
            None => {
                self.chains = transitions.iter().map(|t| t.next_state.clone()).collect();
                self.scores = Some(transitions.iter().map(|t| t.reward).collect());
            }
            Some(scores) => {
                for (i, t) in transitions.iter().enumerate() {
                    self.proposed += 1;
                    if accept(t.reward - scores[i], self.temperature, rng) {
                        self.accepted += 1;
                        self.chains[i] = t.next_state.clone();
                        scores[i] = t.reward;
                    }
                }
                self.temperature *= self.alpha;
            }
        }
        env.set_sequences(self.chains.clone())
    }

    fn diagnostics(&self) -> Diagnostics {
        Diagnostics {
            temperature: Some(self.temperature),
            ..Diagnostics::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::Horizon;
    use crate::oracle::{FnScorer, Metered};
    use crate::seq::Alphabet;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn acceptance_rule() {
        assert_eq!(accept_probability(0.1, 0.5), 1.0);
        assert_relative_eq!(accept_probability(-1.0, 1.0), (-1.0f64).exp());
        assert!((accept_probability(-1.0, 1.0) - 0.3679).abs() < 1e-4);
        assert_eq!(accept_probability(-1e-3, 1e-9), 0.0);
    }

    #[test]
    fn temperature_decays_to_target() {
        let env = EnvConfig::new(4, Alphabet::new("ACDE").unwrap(), 100, Horizon::Infinite).unwrap();
        let agent = McmcAgent::new(&env, McmcConfig::default(), 10_000).unwrap();
        assert_relative_eq!(agent.alpha().powi(100), 1e-2, max_relative = 1e-10);
    }

    #[test]
    fn single_chain_step_cools_and_charges_one_query() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let scorer = Metered::new(FnScorer(|s: &Sequence| 0.1 + 0.2 * s.residues()[0] as f64));
        let chain = AnnealState {
            sequence: Sequence::from_indices(vec![0, 0]),
            score: 0.1,
            temperature: 1.0,
            alpha: 0.5,
        };
        let next = mcmc_step(&chain, &scorer, 4, &mut rng).unwrap();
        assert_eq!(next.temperature, 0.5);
        assert_eq!(scorer.queries(), 1);
        assert!(mcmc_step(&AnnealState { temperature: 0.0, ..chain }, &scorer, 4, &mut rng).is_err());
    }

    #[test]
    fn zero_temperature_limit_only_climbs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let scorer = FnScorer(|s: &Sequence| 0.05 + 0.1 * s.residues().iter().map(|&r| r as f64).sum::<f64>() / 3.0);
        let mut chain = AnnealState {
            sequence: Sequence::from_indices(vec![1, 1, 1]),
            score: 0.0,
            temperature: 1e-12,
            alpha: 1.0,
        };
        chain.score = scorer.score_one(&chain.sequence).unwrap().score;
        for _ in 0..500 {
            let next = mcmc_step(&chain, &scorer, 4, &mut rng).unwrap();
            assert!(next.score >= chain.score);
            chain = next;
        }
    }

    #[test]
    fn first_step_scores_start_states() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cfg = EnvConfig::new(3, Alphabet::new("ACDE").unwrap(), 5, Horizon::Infinite).unwrap();
        let mut env = BatchEnv::reset(cfg.clone(), &mut rng).unwrap();
        let start = env.sequences().to_vec();
        let mut agent = McmcAgent::new(&cfg, McmcConfig::default(), 50).unwrap();
        let actions = agent.act(&env, &mut rng).unwrap();
        let scorer = FnScorer(|_: &Sequence| 0.5);
        let t = env.step(&actions, &scorer, &mut rng).unwrap();
        agent
            .observe(&t, &mut env, Progress { queries: 5, budget: 50 }, &mut rng)
            .unwrap();
        assert_eq!(env.sequences(), &start[..]);
        assert_eq!(agent.chains(), &start[..]);
    }

    #[test]
    fn stationary_odds_two_states() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let r = [0.3, 0.7];
        let t = 0.5;
        let scorer = FnScorer(move |s: &Sequence| r[s.residues()[0] as usize]);
        let mut chains: Vec<AnnealState> = (0..1000)
            .map(|i| AnnealState {
                sequence: Sequence::from_indices(vec![(i % 2) as u8]),
                score: r[i % 2],
                temperature: t,
                alpha: 1.0,
            })
            .collect();
        let mut counts = [0u64; 2];
        for _ in 0..1000 {
            for c in chains.iter_mut() {
                *c = mcmc_step(c, &scorer, 2, &mut rng).unwrap();
                counts[c.sequence.residues()[0] as usize] += 1;
            }
        }
        let odds = counts[1] as f64 / counts[0] as f64;
        let expected = ((r[1] - r[0]) / t).exp();
        assert!((odds / expected - 1.0).abs() < 0.05, "odds {odds} vs {expected}");
    }
}
