//! Optimizers over the batched mutation environment and the loop that drives
//! them against a scorer under a fixed query budget.

use std::fmt;
use std::str::FromStr;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::env::{BatchEnv, CandidateArchive, EnvConfig, Transition};
use crate::error::{Error, Result};
use crate::oracle::Scorer;
use crate::seq::{MutationAction, Sequence};

pub mod buffers;
pub mod dqn;
pub mod gfn;
pub mod mcmc;
pub mod ppo;
pub mod random;
pub mod rnd;

pub use buffers::{ReplayBuffer, RolloutBuffer};
pub use dqn::{DqnAgent, DqnConfig};
pub use gfn::{GfnAgent, GfnConfig};
pub use mcmc::{McmcAgent, McmcConfig};
pub use ppo::{PpoAgent, PpoConfig};
pub use random::RandomAgent;
pub use rnd::{RndConfig, RndPair};

/// Position of the run within its query budget.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Progress {
    pub queries: u64,
    pub budget: u64,
}

impl Progress {
    pub fn fraction(&self) -> f64 {
        if self.budget == 0 {
            1.0
        } else {
            (self.queries as f64 / self.budget as f64).min(1.0)
        }
    }
}

/// Schedule values worth logging next to the learning curve.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Diagnostics {
    pub temperature: Option<f64>,
    pub epsilon: Option<f64>,
}

pub trait Agent: Send {
    fn name(&self) -> &'static str;

    /// One action per environment slot for the current batch.
    fn act(&mut self, env: &BatchEnv, rng: &mut dyn RngCore) -> Result<Vec<MutationAction>>;

    /// Consumes the transitions of the last step. Agents that keep their own
    /// chain states may rewrite the environment's sequences here.
    fn observe(
        &mut self,
        transitions: &[Transition],
        env: &mut BatchEnv,
        progress: Progress,
        rng: &mut dyn RngCore,
    ) -> Result<()>;

    fn diagnostics(&self) -> Diagnostics {
        Diagnostics::default()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AgentKind {
    Ppo,
    PpoRnd,
    Dqn,
    Gfn,
    Mcmc,
    Random,
}

impl AgentKind {
    pub const ALL: [AgentKind; 6] = [
        AgentKind::Ppo,
        AgentKind::PpoRnd,
        AgentKind::Dqn,
        AgentKind::Gfn,
        AgentKind::Mcmc,
        AgentKind::Random,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            AgentKind::Ppo => "ppo",
            AgentKind::PpoRnd => "ppo-rnd",
            AgentKind::Dqn => "dqn",
            AgentKind::Gfn => "gfn",
            AgentKind::Mcmc => "mcmc",
            AgentKind::Random => "random",
        }
    }
}

impl fmt::Display for AgentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AgentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AgentKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown agent '{s}'")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    /// Hidden layer widths shared by every agent network.
    pub hidden: Vec<usize>,
    pub ppo: PpoConfig,
    pub rnd: RndConfig,
    pub dqn: DqnConfig,
    pub gfn: GfnConfig,
    pub mcmc: McmcConfig,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            ppo: PpoConfig::default(),
            rnd: RndConfig::default(),
            dqn: DqnConfig::default(),
            gfn: GfnConfig::default(),
            mcmc: McmcConfig::default(),
        }
    }
}

pub fn build_agent(
    kind: AgentKind,
    config: &AgentConfig,
    env: &EnvConfig,
    budget: u64,
    rng: &mut dyn RngCore,
) -> Result<Box<dyn Agent>> {
    Ok(match kind {
        AgentKind::Ppo => Box::new(PpoAgent::new(env, &config.hidden, config.ppo.clone(), None, rng)?),
        AgentKind::PpoRnd => {
            let rnd = RndPair::new(env.state_size(), &config.hidden, config.rnd.clone(), rng)?;
            Box::new(PpoAgent::new(env, &config.hidden, config.ppo.clone(), Some(rnd), rng)?)
        }
        AgentKind::Dqn => Box::new(DqnAgent::new(env, &config.hidden, config.dqn.clone(), budget, rng)?),
        AgentKind::Gfn => Box::new(GfnAgent::new(env, &config.hidden, config.gfn.clone(), rng)?),
        AgentKind::Mcmc => Box::new(McmcAgent::new(env, config.mcmc.clone(), budget)?),
        AgentKind::Random => Box::new(RandomAgent::new(env)),
    })
}

/// Dense network input for a sequence.
pub(crate) fn encode(seq: &Sequence, alphabet_size: usize) -> Vec<f64> {
    seq.one_hot(alphabet_size).into_vec()
}

pub(crate) fn check_finite(value: f64, what: &str) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("{what} = {value}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CurvePoint {
    pub queries: u64,
    pub mean_score: f64,
    pub best_score: f64,
    pub mean_oracle_score: Option<f64>,
    pub temperature: Option<f64>,
    pub epsilon: Option<f64>,
}

/// What a step hook gets to see after each environment step.
pub struct StepView<'a> {
    pub queries: u64,
    pub transitions: &'a [Transition],
    pub env: &'a BatchEnv,
}

/// Called after every step; may return an oracle mean score for the curve.
pub type StepHook<'a> = dyn FnMut(&StepView<'_>) -> Result<Option<f64>> + 'a;

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub archive: CandidateArchive,
    pub curve: Vec<CurvePoint>,
    /// Sequences reached by the last step, with the scores the run saw.
    pub final_batch: Vec<(Sequence, f64)>,
    pub queries: u64,
    /// Set when the run stopped early; everything above is still valid up to that point.
    pub error: Option<String>,
}

impl RunOutcome {
    pub fn completed(&self) -> bool {
        self.error.is_none()
    }
}

/// Steps `agent` until `budget` scorer queries have been spent. The budget
/// must be a positive multiple of the batch size. Failures after the first
/// step are reported in [`RunOutcome::error`] alongside the partial results.
pub fn run_agent(
    agent: &mut dyn Agent,
    env: &mut BatchEnv,
    scorer: &dyn Scorer,
    budget: u64,
    archive_capacity: usize,
    rng: &mut dyn RngCore,
    mut hook: Option<&mut StepHook<'_>>,
) -> Result<RunOutcome> {
    let b = env.config().batch_size as u64;
    if budget == 0 || budget % b != 0 {
        return Err(Error::InvalidArgument(format!(
            "query budget {budget} is not a positive multiple of the batch size {b}"
        )));
    }
    let mut outcome = RunOutcome {
        archive: CandidateArchive::new(archive_capacity),
        curve: Vec::new(),
        final_batch: Vec::new(),
        queries: 0,
        error: None,
    };
    let start = env.queries();
    let mut best = f64::NEG_INFINITY;
    while env.queries() - start < budget {
        let result = (|| -> Result<()> {
            let actions = agent.act(env, rng)?;
            let transitions = env.step(&actions, scorer, rng)?;
            let queries = env.queries() - start;
            outcome.queries = queries;
            outcome.archive.update(transitions.iter().map(|t| (&t.next_state, t.reward)));
            outcome.final_batch = transitions.iter().map(|t| (t.next_state.clone(), t.reward)).collect();
            let mean = transitions.iter().map(|t| t.reward).sum::<f64>() / transitions.len() as f64;
            best = transitions.iter().map(|t| t.reward).fold(best, f64::max);
            let progress = Progress { queries, budget };
            agent.observe(&transitions, env, progress, rng)?;
            let oracle = match hook.as_mut() {
                Some(h) => h(&StepView {
                    queries,
                    transitions: &transitions,
                    env,
                })?,
                None => None,
            };
            let d = agent.diagnostics();
            outcome.curve.push(CurvePoint {
                queries,
                mean_score: mean,
                best_score: best,
                mean_oracle_score: oracle,
                temperature: d.temperature,
                epsilon: d.epsilon,
            });
            Ok(())
        })();
        if let Err(e) = result {
            log::error!("{} run stopped after {} queries: {e}", agent.name(), outcome.queries);
            outcome.error = Some(e.to_string());
            break;
        }
    }
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::Horizon;
    use crate::oracle::{FnScorer, Metered, PottsLandscape};
    use crate::seq::Alphabet;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_env(rng: &mut ChaCha8Rng) -> BatchEnv {
        let cfg = EnvConfig::new(6, Alphabet::new("ACDE").unwrap(), 100, Horizon::Infinite).unwrap();
        BatchEnv::reset(cfg, rng).unwrap()
    }

    #[test]
    fn kind_names_roundtrip() {
        for k in AgentKind::ALL {
            assert_eq!(k.as_str().parse::<AgentKind>().unwrap(), k);
        }
        assert!("sac".parse::<AgentKind>().is_err());
    }

    #[test]
    fn random_on_flat_landscape_is_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut env = small_env(&mut rng);
        let mut agent = RandomAgent::new(env.config());
        let flat = PottsLandscape::flat(6, 4).unwrap();
        let out = run_agent(&mut agent, &mut env, &flat, 500, 50, &mut rng, None).unwrap();
        assert_eq!(out.curve.len(), 5);
        assert!(out.curve.iter().all(|c| c.mean_score == 0.5));
        assert_eq!(out.queries, 500);
    }

    #[test]
    fn every_agent_spends_exactly_the_budget() {
        for kind in AgentKind::ALL {
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let mut env = small_env(&mut rng);
            let scorer = Metered::new(PottsLandscape::generate(6, 4, 3, &Default::default()).unwrap());
            let mut cfg = AgentConfig::default();
            cfg.ppo.rollout_steps = 2;
            cfg.dqn.warmup = 100;
            cfg.dqn.batch_size = 32;
            let mut agent = build_agent(kind, &cfg, env.config(), 1000, &mut rng).unwrap();
            let out = run_agent(agent.as_mut(), &mut env, &scorer, 1000, 10, &mut rng, None).unwrap();
            assert!(out.completed(), "{kind}: {:?}", out.error);
            assert_eq!(scorer.queries(), 1000, "{kind}");
            assert_eq!(out.curve.len(), 10);
        }
    }

    #[test]
    fn budget_must_be_a_batch_multiple() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut env = small_env(&mut rng);
        let mut agent = RandomAgent::new(env.config());
        let flat = PottsLandscape::flat(6, 4).unwrap();
        assert!(run_agent(&mut agent, &mut env, &flat, 150, 10, &mut rng, None).is_err());
        assert!(run_agent(&mut agent, &mut env, &flat, 0, 10, &mut rng, None).is_err());
    }

    #[test]
    fn scorer_failure_keeps_partial_results() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut env = small_env(&mut rng);
        let mut agent = RandomAgent::new(env.config());
        let calls = std::sync::atomic::AtomicUsize::new(0);
        let flaky = FnScorer(|_: &Sequence| {
            if calls.fetch_add(1, std::sync::atomic::Ordering::Relaxed) >= 200 {
                f64::NAN
            } else {
                0.5
            }
        });
        let out = run_agent(&mut agent, &mut env, &flaky, 1000, 10, &mut rng, None).unwrap();
        assert!(!out.completed());
        assert_eq!(out.curve.len(), 2);
        assert_eq!(out.queries, 200);
    }

    #[test]
    fn hook_values_land_in_the_curve() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut env = small_env(&mut rng);
        let mut agent = RandomAgent::new(env.config());
        let flat = PottsLandscape::flat(6, 4).unwrap();
        let mut hook = |v: &StepView<'_>| -> Result<Option<f64>> { Ok((v.queries % 200 == 0).then_some(0.25)) };
        let out = run_agent(&mut agent, &mut env, &flat, 400, 10, &mut rng, Some(&mut hook)).unwrap();
        let oracle: Vec<_> = out.curve.iter().map(|c| c.mean_oracle_score).collect();
        assert_eq!(oracle, vec![None, Some(0.25), None, Some(0.25)]);
    }
}
