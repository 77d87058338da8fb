//! The `run`, `ablate-horizon` and `mismatch` subcommands.

use std::path::Path;

use anyhow::{bail, Result};
use serde_json::json;
use seqopt::agents::AgentKind;
use seqopt::io::{run_manifest, write_csv, Cell};
use seqopt::metrics::{mp_hd, Direction, ParetoPoint};
use seqopt::oracle::{twin_landscapes, Scorer};
use seqopt::Horizon;

use crate::config::{OracleSpec, RunConfig};
use crate::report::{self, Metric, References};
use crate::runner::{self, mean, SeedRun};

/// Results of every seed that got past setup, plus the ones that did not.
#[derive(Debug, Default)]
pub struct RunReport {
    pub runs: Vec<SeedRun>,
    pub failures: Vec<(u64, String)>,
}

impl RunReport {
    pub fn ok(&self) -> bool {
        self.failures.is_empty() && self.runs.iter().all(|r| r.outcome.completed())
    }

    pub fn errors(&self) -> Vec<String> {
        let mut out: Vec<String> = self.failures.iter().map(|(s, e)| format!("seed {s}: {e}")).collect();
        for r in &self.runs {
            if let Some(e) = &r.outcome.error {
                out.push(format!("seed {}: {e}", r.seed));
            }
        }
        out
    }
}

fn collect(cfg: &RunConfig, results: Vec<Result<SeedRun>>) -> RunReport {
    let mut report = RunReport::default();
    for (seed, r) in cfg.seeds.iter().zip(results) {
        match r {
            Ok(run) => report.runs.push(run),
            Err(e) => {
                log::error!("seed {seed} failed: {e:#}");
                report.failures.push((*seed, format!("{e:#}")));
            }
        }
    }
    report
}

fn final_mp_hd(run: &SeedRun) -> f64 {
    let seqs = run.final_sequences();
    if seqs.len() < 2 {
        f64::NAN
    } else {
        mp_hd(&seqs).unwrap_or(f64::NAN)
    }
}

/// Per-seed directories plus `aggregate/` for a finished set of seeds.
pub fn write_run_outputs(dir: &Path, cfg: &RunConfig, report: &RunReport, refs: &References) -> Result<()> {
    report::ensure_dir(dir)?;
    let mut all_metrics: Vec<Vec<Metric>> = Vec::new();
    let mut seeds_json = Vec::new();
    for run in &report.runs {
        let sdir = dir.join(format!("seed_{}", run.seed));
        report::ensure_dir(&sdir)?;
        report::write_curves(&sdir.join("curves.csv"), run)?;
        let metrics = report::seed_metrics(run, cfg, refs)?;
        report::write_metrics(&sdir.join("metrics.csv"), &metrics)?;
        if !run.ticks.is_empty() {
            report::write_ticks(&sdir.join("ticks.csv"), run)?;
        }
        let point = ParetoPoint::new(run.final_mean_score(), final_mp_hd(run), run.agent.as_str());
        report::write_pareto(&sdir, "mp_hd", &[point], cfg.threshold, Direction::HigherBetter)?;
        let summary = json!({
            "derived": run.derived,
            "ledger": run.ledger,
            "ticks": run.ticks,
            "status": run.outcome.error.clone().unwrap_or_else(|| "completed".into()),
        });
        let mut manifest = run_manifest(cfg, run.seed)?;
        manifest["run"] = summary.clone();
        report::write_manifest(&sdir.join("manifest.json"), &manifest)?;
        seeds_json.push(json!({"seed": run.seed, "run": summary}));
        all_metrics.push(metrics);
    }

    let adir = dir.join("aggregate");
    report::ensure_dir(&adir)?;
    let runs: Vec<&SeedRun> = report.runs.iter().collect();
    report::write_aggregate_curves(&adir.join("curves.csv"), &runs)?;
    report::write_aggregate_metrics(&adir.join("metrics.csv"), &all_metrics)?;
    let label = report.runs.first().map(|r| r.agent.as_str()).unwrap_or(cfg.agent.as_str());
    let points = if runs.is_empty() {
        Vec::new()
    } else {
        let score = mean(&runs.iter().map(|r| r.final_mean_score()).collect::<Vec<_>>());
        let div = mean(&runs.iter().map(|r| final_mp_hd(r)).collect::<Vec<_>>());
        vec![ParetoPoint::new(score, div, label)]
    };
    report::write_pareto(&adir, "mp_hd", &points, cfg.threshold, Direction::HigherBetter)?;
    report::write_manifest(
        &adir.join("manifest.json"),
        &json!({
            "config": cfg,
            "seeds": seeds_json,
            "failures": report.failures.iter().map(|(s, e)| json!({"seed": s, "error": e})).collect::<Vec<_>>(),
        }),
    )?;
    Ok(())
}

pub fn run(cfg: &RunConfig) -> Result<RunReport> {
    cfg.validate()?;
    let refs = References::load(cfg)?;
    let oracle = runner::build_oracle(cfg)?;
    let report = collect(cfg, runner::run_seeds(cfg, oracle.as_ref()));
    write_run_outputs(&cfg.out, cfg, &report, &refs)?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub setting: String,
    pub horizon: Horizon,
    pub seed: u64,
    pub final_mean_score: f64,
    pub mp_hd: f64,
    pub queries: u64,
}

#[derive(Debug, Default)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
    pub settings: Vec<(String, RunReport)>,
}

impl AblationReport {
    pub fn ok(&self) -> bool {
        self.settings.iter().all(|(_, r)| r.ok())
    }

    pub fn row(&self, setting: &str, seed: u64) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.setting == setting && r.seed == seed)
    }
}

/// Setting labels and horizons, finite ones first.
pub fn ablation_settings(cfg: &RunConfig) -> Vec<(String, Horizon)> {
    let l = cfg.env.seq_len;
    let mut out: Vec<(String, Horizon)> = cfg
        .ablation
        .length_factors
        .iter()
        .map(|&f| {
            let label = if f == 1 { "T=L_s".to_string() } else { format!("T={f}L_s") };
            (label, Horizon::Finite(f * l))
        })
        .collect();
    if cfg.ablation.include_infinite {
        out.push(("infinite".into(), Horizon::Infinite));
    }
    out
}

fn setting_dir(label: &str) -> String {
    label.replace('=', "_").to_lowercase()
}

pub fn run_ablation(cfg: &RunConfig) -> Result<AblationReport> {
    cfg.validate()?;
    let refs = References::load(cfg)?;
    let oracle = runner::build_oracle(cfg)?;
    let mut report = AblationReport::default();
    for (label, horizon) in ablation_settings(cfg) {
        let mut scfg = cfg.clone();
        scfg.env.horizon = horizon;
        scfg.out = cfg.out.join(setting_dir(&label));
        log::info!("ablation setting {label}");
        let r = collect(&scfg, runner::run_seeds(&scfg, oracle.as_ref()));
        write_run_outputs(&scfg.out, &scfg, &r, &refs)?;
        for run in &r.runs {
            report.rows.push(AblationRow {
                setting: label.clone(),
                horizon,
                seed: run.seed,
                final_mean_score: run.final_mean_score(),
                mp_hd: final_mp_hd(run),
                queries: run.ledger.agent_queries,
            });
        }
        report.settings.push((label, r));
    }
    let rows: Vec<Vec<Cell>> = report
        .rows
        .iter()
        .map(|r| {
            let t = match r.horizon {
                Horizon::Finite(t) => Cell::Int(t as i64),
                Horizon::Infinite => Cell::Text("inf".into()),
            };
            vec![
                r.setting.clone().into(),
                t,
                r.seed.into(),
                r.final_mean_score.into(),
                r.mp_hd.into(),
                r.queries.into(),
            ]
        })
        .collect();
    write_csv(
        &["setting", "horizon", "seed", "final_mean_score", "mp_hd", "queries"],
        &rows,
        std::fs::File::create(cfg.out.join("ablation.csv"))?,
    )?;
    let budgets: Vec<u64> = report.rows.iter().map(|r| r.queries).collect();
    let equal = budgets.iter().all(|&q| q == cfg.budget);
    report::write_manifest(
        &cfg.out.join("manifest.json"),
        &json!({
            "config": cfg,
            "settings": ablation_settings(cfg).iter().map(|(l, h)| json!({"setting": l, "horizon": h})).collect::<Vec<_>>(),
            "budget_per_run": cfg.budget,
            "equal_budgets": equal,
        }),
    )?;
    if !equal {
        log::warn!("ablation runs spent unequal budgets: {budgets:?}");
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MismatchRow {
    pub agent: AgentKind,
    pub seed: u64,
    pub final_decoy_score: f64,
    pub final_oracle_score: f64,
    /// Oracle score of the best sequence the agent found on the decoy.
    pub best_found_oracle_score: f64,
    pub best_found_decoy_score: f64,
}

impl MismatchRow {
    pub fn gap(&self) -> f64 {
        self.final_decoy_score - self.final_oracle_score
    }
}

#[derive(Debug, Default)]
pub struct MismatchReport {
    pub rows: Vec<MismatchRow>,
    pub runs: Vec<(AgentKind, RunReport)>,
}

impl MismatchReport {
    pub fn ok(&self) -> bool {
        self.runs.iter().all(|(_, r)| r.ok())
    }

    pub fn mean_oracle(&self, agent: AgentKind) -> f64 {
        mean(&self.rows.iter().filter(|r| r.agent == agent).map(|r| r.final_oracle_score).collect::<Vec<_>>())
    }

    pub fn mean_gap(&self, agent: AgentKind) -> f64 {
        mean(&self.rows.iter().filter(|r| r.agent == agent).map(|r| r.gap()).collect::<Vec<_>>())
    }
}

/// Trains each configured agent on the decoy of a twin-landscape pair while
/// logging true-oracle scores, then compares the two at the end.
pub fn run_mismatch(cfg: &RunConfig) -> Result<MismatchReport> {
    cfg.validate()?;
    let OracleSpec::Synthetic(landscape_seed) = cfg.oracle else {
        bail!("mismatch needs a synthetic oracle, got {}", cfg.oracle);
    };
    let refs = References::load(cfg)?;
    let (oracle, decoy) = twin_landscapes(
        cfg.env.seq_len,
        cfg.env.alphabet.len(),
        landscape_seed,
        &cfg.landscape,
    )?;
    let mut report = MismatchReport::default();
    for &agent in &cfg.mismatch.agents {
        let mut acfg = cfg.clone();
        acfg.agent = agent;
        acfg.out = cfg.out.join(agent.as_str());
        let results: Vec<Result<SeedRun>> = std::thread::scope(|scope| {
            let handles: Vec<_> = acfg
                .seeds
                .iter()
                .map(|&seed| {
                    let (acfg, oracle, decoy) = (&acfg, &oracle, &decoy);
                    scope.spawn(move || runner::run_monitored_seed(acfg, seed, decoy, oracle))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|_| Err(anyhow::anyhow!("seed worker panicked"))))
                .collect()
        });
        let r = collect(&acfg, results);
        write_run_outputs(&acfg.out, &acfg, &r, &refs)?;
        for run in &r.runs {
            let best = run.outcome.archive.best();
            let best_oracle = match best {
                Some(e) => oracle.score_one(&e.sequence)?.score,
                None => f64::NAN,
            };
            report.rows.push(MismatchRow {
                agent,
                seed: run.seed,
                final_decoy_score: mean(&run.final_training_scores()),
                final_oracle_score: run.final_mean_score(),
                best_found_oracle_score: best_oracle,
                best_found_decoy_score: best.map(|e| e.score).unwrap_or(f64::NAN),
            });
        }
        report.runs.push((agent, r));
    }
    let rows: Vec<Vec<Cell>> = report
        .rows
        .iter()
        .map(|r| {
            vec![
                r.agent.as_str().into(),
                r.seed.into(),
                r.final_decoy_score.into(),
                r.final_oracle_score.into(),
                r.gap().into(),
                r.best_found_decoy_score.into(),
                r.best_found_oracle_score.into(),
            ]
        })
        .collect();
    write_csv(
        &[
            "agent",
            "seed",
            "final_decoy_score",
            "final_oracle_score",
            "gap",
            "best_found_decoy_score",
            "best_found_oracle_score",
        ],
        &rows,
        std::fs::File::create(cfg.out.join("mismatch.csv"))?,
    )?;
    let summary: Vec<_> = cfg
        .mismatch
        .agents
        .iter()
        .map(|&a| json!({"agent": a, "mean_final_oracle": report.mean_oracle(a), "mean_gap": report.mean_gap(a)}))
        .collect();
    let mut pairwise = Vec::new();
    for (i, &a) in cfg.mismatch.agents.iter().enumerate() {
        for &b in &cfg.mismatch.agents[i + 1..] {
            pairwise.push(json!({
                "agents": [a, b],
                "oracle_score_difference": report.mean_oracle(a) - report.mean_oracle(b),
            }));
        }
    }
    report::write_manifest(
        &cfg.out.join("manifest.json"),
        &json!({"config": cfg, "agents": summary, "oracle_gaps": pairwise}),
    )?;
    Ok(report)
}
