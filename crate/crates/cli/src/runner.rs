//! Per-seed training loops for oracle mode and proxy-finetune mode.

use std::sync::{Arc, RwLock};

use anyhow::{bail, Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use seqopt::agents::{build_agent, run_agent, AgentKind, RunOutcome, StepView};
use seqopt::oracle::remote::{ChildTransport, TcpTransport};
use seqopt::oracle::{Metered, PottsLandscape, RemoteScorer, ScoreReport, Scorer};
use seqopt::proxy::{build_corpus, finetune_tick, hidden_sizes_for_budget, pretrain, CorrelationLog, ProxyModel};
use seqopt::{BatchEnv, CandidateArchive, EnvConfig, Sequence};

use crate::config::{Mode, OracleSpec, RunConfig};

/// Random streams carved out of one seed so that adding a consumer to one
/// stage never shifts the draws of another.
const STREAM_AGENT: u64 = 0;
const STREAM_PROXY: u64 = 1;
const STREAM_PRETRAIN: u64 = 2;

pub fn seeded(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn build_oracle(cfg: &RunConfig) -> Result<Arc<dyn Scorer>> {
    let alphabet = cfg.env.alphabet.clone();
    Ok(match &cfg.oracle {
        OracleSpec::Synthetic(seed) => Arc::new(PottsLandscape::generate(
            cfg.env.seq_len,
            alphabet.len(),
            *seed,
            &cfg.landscape,
        )?),
        OracleSpec::Remote(addr) => Arc::new(RemoteScorer::new(
            Box::new(TcpTransport::new(addr.clone())),
            alphabet,
            cfg.remote.policy(),
        )),
        OracleSpec::Exec(argv) => Arc::new(RemoteScorer::new(
            Box::new(ChildTransport::new(argv[0].clone(), argv[1..].to_vec())),
            alphabet,
            cfg.remote.policy(),
        )),
    })
}

/// Read-locked view of a proxy that the finetune hook may replace between steps.
struct SharedProxy<'a>(&'a RwLock<ProxyModel>);

impl Scorer for SharedProxy<'_> {
    fn score_batch(&self, seqs: &[Sequence]) -> seqopt::Result<Vec<ScoreReport>> {
        self.0
            .read()
            .map_err(|_| seqopt::Error::Scorer("proxy lock poisoned".into()))?
            .score_batch(seqs)
    }
}

/// Itemized scorer usage for one seed.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct BudgetLedger {
    /// Queries answered by whatever scorer the agent trains on.
    pub agent_queries: u64,
    pub proxy_queries: u64,
    pub oracle_pretrain: u64,
    pub oracle_finetune: u64,
    /// Oracle scoring of the final batch at tick boundaries.
    pub oracle_snapshot: u64,
    /// Oracle queries made by the agent itself (oracle mode).
    pub oracle_training: u64,
}

impl BudgetLedger {
    /// Oracle queries spent while the agent trains; excludes pretraining.
    pub fn oracle_in_loop(&self) -> u64 {
        self.oracle_training + self.oracle_finetune + self.oracle_snapshot
    }

    pub fn oracle_total(&self) -> u64 {
        self.oracle_in_loop() + self.oracle_pretrain
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TickRecord {
    pub queries: u64,
    pub oracle_queries: u64,
    pub pearson: Option<f64>,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub snapshot_mean: f64,
}

#[derive(Debug)]
pub struct SeedRun {
    pub seed: u64,
    pub agent: AgentKind,
    pub outcome: RunOutcome,
    /// Oracle scores of the final batch when training used another scorer.
    pub final_oracle: Option<Vec<f64>>,
    pub ledger: BudgetLedger,
    pub ticks: Vec<TickRecord>,
    pub correlation: CorrelationLog,
    pub derived: serde_json::Value,
}

impl SeedRun {
    pub fn final_sequences(&self) -> Vec<Sequence> {
        self.outcome.final_batch.iter().map(|(s, _)| s.clone()).collect()
    }

    /// Scores the final batch received from its training scorer.
    pub fn final_training_scores(&self) -> Vec<f64> {
        self.outcome.final_batch.iter().map(|(_, r)| *r).collect()
    }

    /// Oracle view of the final batch: snapshot scores when available, else the rewards.
    pub fn final_scores(&self) -> Vec<f64> {
        self.final_oracle.clone().unwrap_or_else(|| self.final_training_scores())
    }

    pub fn final_mean_score(&self) -> f64 {
        mean(&self.final_scores())
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        f64::NAN
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

fn agent_derived(cfg: &RunConfig, env: &EnvConfig) -> serde_json::Value {
    let steps = cfg.budget / env.batch_size as u64;
    let mut d = serde_json::json!({
        "env_steps": steps,
        "state_size": env.state_size(),
        "action_count": env.action_count(),
        "long_range_edges": cfg.landscape.long_range_edges.unwrap_or(2 * env.seq_len),
    });
    if cfg.agent == AgentKind::Mcmc {
        let m = &cfg.agents.mcmc;
        let alpha = m
            .alpha
            .unwrap_or_else(|| (m.final_temperature / m.initial_temperature).powf(1.0 / steps.max(1) as f64));
        d["mcmc_alpha"] = alpha.into();
    }
    d
}

/// Trains one agent for one seed. Errors before the first step are returned;
/// later failures are recorded in the outcome with partial results kept.
pub fn run_seed(cfg: &RunConfig, seed: u64, oracle: &dyn Scorer) -> Result<SeedRun> {
    match cfg.mode {
        Mode::Oracle => run_oracle_seed(cfg, seed, oracle),
        Mode::Proxy => run_proxy_seed(cfg, seed, oracle),
    }
}

fn run_oracle_seed(cfg: &RunConfig, seed: u64, oracle: &dyn Scorer) -> Result<SeedRun> {
    let env_cfg = cfg.env.to_env()?;
    let mut rng = seeded(seed, STREAM_AGENT);
    let mut env = BatchEnv::reset(env_cfg.clone(), &mut rng)?;
    let mut agent = build_agent(cfg.agent, &cfg.agents, &env_cfg, cfg.budget, &mut rng)?;
    let metered = Metered::new(oracle);
    let outcome = run_agent(
        agent.as_mut(),
        &mut env,
        &metered,
        cfg.budget,
        cfg.archive_size,
        &mut rng,
        None,
    )?;
    let ledger = BudgetLedger {
        agent_queries: outcome.queries,
        oracle_training: metered.queries(),
        ..BudgetLedger::default()
    };
    Ok(SeedRun {
        seed,
        agent: cfg.agent,
        derived: agent_derived(cfg, &env_cfg),
        outcome,
        final_oracle: None,
        ledger,
        ticks: Vec::new(),
        correlation: CorrelationLog::default(),
    })
}

fn run_proxy_seed(cfg: &RunConfig, seed: u64, oracle: &dyn Scorer) -> Result<SeedRun> {
    let env_cfg = cfg.env.to_env()?;
    let (l, la) = (env_cfg.seq_len, env_cfg.alphabet_size());
    let pcfg = &cfg.proxy.pretrain;
    let sched = &cfg.proxy.finetune;

    let oracle = Metered::new(oracle);
    let mut prng = seeded(seed, STREAM_PRETRAIN);
    let corpus = build_corpus(&oracle, l, la, pcfg, &mut prng).context("building the pretraining corpus")?;
    let pretrain_queries = oracle.queries();
    let mut model = ProxyModel::new(l, la, pcfg.param_budget, &mut prng)?;
    let losses = pretrain(&mut model, &corpus, pcfg, &mut prng)?;
    log::info!(
        "seed {seed}: proxy pretrained on {} sequences, final loss {:.3e}",
        corpus.len(),
        losses.last().copied().unwrap_or(f64::NAN)
    );
    let (h1, h2) = hidden_sizes_for_budget(l * la, pcfg.param_budget);
    let mut derived = agent_derived(cfg, &env_cfg);
    derived["proxy_hidden"] = serde_json::json!([h1, h2]);
    derived["proxy_parameters"] = model.parameter_count().into();
    derived["pretrain_final_loss"] = losses.last().copied().into();
    derived["snapshot_policy"] = "final batch oracle-scored once at each finetune tick boundary".into();

    let shared = RwLock::new(model);
    let proxy = Metered::new(SharedProxy(&shared));
    let mut rng = seeded(seed, STREAM_AGENT);
    let mut hook_rng = seeded(seed, STREAM_PROXY);
    let mut env = BatchEnv::reset(env_cfg.clone(), &mut rng)?;
    let mut agent = build_agent(cfg.agent, &cfg.agents, &env_cfg, cfg.budget, &mut rng)?;

    // The finetune pool is the archive so far plus the states visited since the last tick.
    let mut archive = CandidateArchive::new(cfg.archive_size);
    let mut pool: Vec<Sequence> = Vec::new();
    let mut ticks: Vec<TickRecord> = Vec::new();
    let mut correlation = CorrelationLog::default();
    let mut finetune_queries = 0u64;
    let mut snapshot_queries = 0u64;
    let mut last_snapshot: Option<(u64, Vec<f64>)> = None;
    let mut hook = |view: &StepView<'_>| -> seqopt::Result<Option<f64>> {
        archive.update(view.transitions.iter().map(|t| (&t.next_state, t.reward)));
        pool.extend(view.transitions.iter().map(|t| t.next_state.clone()));
        if view.queries % sched.interval != 0 {
            return Ok(None);
        }
        pool.extend(archive.sequences());
        let report = {
            let mut model = shared
                .write()
                .map_err(|_| seqopt::Error::Scorer("proxy lock poisoned".into()))?;
            finetune_tick(&mut model, &pool, &oracle, sched, &mut hook_rng)?
        };
        pool.clear();
        finetune_queries += report.oracle_queries() as u64;
        correlation.push(finetune_queries + snapshot_queries, report.pearson);
        let batch: Vec<Sequence> = view.transitions.iter().map(|t| t.next_state.clone()).collect();
        let scores = oracle.scores(&batch)?;
        snapshot_queries += batch.len() as u64;
        let snapshot_mean = mean(&scores);
        ticks.push(TickRecord {
            queries: view.queries,
            oracle_queries: report.oracle_queries() as u64,
            pearson: report.pearson,
            initial_loss: report.initial_loss,
            final_loss: report.epoch_losses.last().copied().unwrap_or(report.initial_loss),
            snapshot_mean,
        });
        last_snapshot = Some((view.queries, scores));
        Ok(Some(snapshot_mean))
    };
    let outcome = run_agent(
        agent.as_mut(),
        &mut env,
        &proxy,
        cfg.budget,
        cfg.archive_size,
        &mut rng,
        Some(&mut hook),
    )?;
    drop(hook);

    let final_oracle = match last_snapshot {
        Some((q, scores)) if q == outcome.queries => scores,
        _ => {
            // The run did not end on a tick; score the final batch once more.
            let seqs: Vec<Sequence> = outcome.final_batch.iter().map(|(s, _)| s.clone()).collect();
            let scores = if seqs.is_empty() { Vec::new() } else { oracle.scores(&seqs)? };
            snapshot_queries += seqs.len() as u64;
            scores
        }
    };
    let ledger = BudgetLedger {
        agent_queries: outcome.queries,
        proxy_queries: proxy.queries(),
        oracle_pretrain: pretrain_queries,
        oracle_finetune: finetune_queries,
        oracle_snapshot: snapshot_queries,
        oracle_training: 0,
    };
    if ledger.oracle_total() != oracle.queries() {
        bail!(
            "oracle ledger does not balance: itemized {} vs metered {}",
            ledger.oracle_total(),
            oracle.queries()
        );
    }
    Ok(SeedRun {
        seed,
        agent: cfg.agent,
        outcome,
        final_oracle: Some(final_oracle),
        ledger,
        ticks,
        correlation,
        derived,
    })
}

/// Runs every configured seed on its own thread, returning results in seed order.
pub fn run_seeds(cfg: &RunConfig, oracle: &dyn Scorer) -> Vec<Result<SeedRun>> {
    std::thread::scope(|scope| {
        let handles: Vec<_> = cfg
            .seeds
            .iter()
            .map(|&seed| scope.spawn(move || run_seed(cfg, seed, oracle)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(anyhow::anyhow!("seed worker panicked"))))
            .collect()
    })
}

/// Trains on `train` while oracle-scoring every batch with `monitor`, as in
/// the twin-landscape experiment. Monitor queries count as snapshots.
pub fn run_monitored_seed(cfg: &RunConfig, seed: u64, train: &dyn Scorer, monitor: &dyn Scorer) -> Result<SeedRun> {
    let env_cfg = cfg.env.to_env()?;
    let mut rng = seeded(seed, STREAM_AGENT);
    let mut env = BatchEnv::reset(env_cfg.clone(), &mut rng)?;
    let mut agent = build_agent(cfg.agent, &cfg.agents, &env_cfg, cfg.budget, &mut rng)?;
    let train = Metered::new(train);
    let monitor = Metered::new(monitor);
    let mut last: Vec<f64> = Vec::new();
    let mut hook = |view: &StepView<'_>| -> seqopt::Result<Option<f64>> {
        let batch: Vec<Sequence> = view.transitions.iter().map(|t| t.next_state.clone()).collect();
        last = monitor.scores(&batch)?;
        Ok(Some(mean(&last)))
    };
    let outcome = run_agent(
        agent.as_mut(),
        &mut env,
        &train,
        cfg.budget,
        cfg.archive_size,
        &mut rng,
        Some(&mut hook),
    )?;
    drop(hook);
    let ledger = BudgetLedger {
        agent_queries: outcome.queries,
        proxy_queries: train.queries(),
        oracle_snapshot: monitor.queries(),
        ..BudgetLedger::default()
    };
    Ok(SeedRun {
        seed,
        agent: cfg.agent,
        derived: agent_derived(cfg, &env_cfg),
        outcome,
        final_oracle: Some(last),
        ledger,
        ticks: Vec::new(),
        correlation: CorrelationLog::default(),
    })
}
