//! Candidate-set metrics and the CSV/JSON files written for every run.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use anyhow::{Context, Result};
use seqopt::biophys::{self, BiophysReport};
use seqopt::io::{read_fasta, write_csv, write_json, Cell, FastaMode};
use seqopt::metrics::{aa_frequency, distribution_mae, mp_hd, pareto_front, Direction, ParetoPoint};
use seqopt::{Alphabet, Sequence};

use crate::config::RunConfig;
use crate::runner::{mean, SeedRun};

/// Reference data loaded once per invocation.
#[derive(Clone, Debug, Default)]
pub struct References {
    pub biophys: Option<Vec<BiophysReport>>,
    pub aa_frequency: Option<Vec<f64>>,
}

impl References {
    pub fn load(cfg: &RunConfig) -> Result<Self> {
        let mut refs = References::default();
        if let Some(path) = &cfg.reference.biophys_csv {
            let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
            refs.biophys = Some(biophys::read_reference_csv(f)?);
        }
        if let Some(path) = &cfg.reference.sequences_fasta {
            refs.aa_frequency = Some(reference_frequency(path, &cfg.env.alphabet)?);
        }
        Ok(refs)
    }
}

pub fn reference_frequency(path: &Path, alphabet: &Alphabet) -> Result<Vec<f64>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let records = read_fasta(
        std::io::BufReader::new(f),
        alphabet,
        FastaMode::Lenient { substitute: None },
    )?;
    let seqs: Vec<Sequence> = records
        .iter()
        .map(|r| alphabet.parse(&r.sequence))
        .collect::<seqopt::Result<_>>()?;
    Ok(aa_frequency(&seqs, alphabet.len())?)
}

/// One named value computed over a candidate set.
#[derive(Clone, Debug, PartialEq)]
pub struct Metric {
    pub set: String,
    pub name: String,
    pub value: f64,
}

impl Metric {
    pub fn new(set: &str, name: &str, value: f64) -> Self {
        Self {
            set: set.into(),
            name: name.into(),
            value,
        }
    }
}

/// Score, diversity and composition metrics of a candidate set.
pub fn set_metrics(
    set: &str,
    seqs: &[Sequence],
    scores: &[f64],
    alphabet: &Alphabet,
    refs: &References,
) -> Result<Vec<Metric>> {
    let mut out = vec![
        Metric::new(set, "count", seqs.len() as f64),
        Metric::new(set, "mean_score", mean(scores)),
        Metric::new(set, "max_score", scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max)),
    ];
    if seqs.len() >= 2 {
        out.push(Metric::new(set, "mp_hd", mp_hd(seqs)?));
    }
    let freq = aa_frequency(seqs, alphabet.len())?;
    if let Some(reference) = &refs.aa_frequency {
        out.push(Metric::new(set, "aa_frequency_mae", distribution_mae(&freq, reference)?));
    }
    let rendered: Vec<String> = seqs.iter().map(|s| alphabet.render(s)).collect();
    match rendered.iter().map(|s| biophys::report(s)).collect::<seqopt::Result<Vec<_>>>() {
        Ok(panel) if !panel.is_empty() => {
            let n = panel.len() as f64;
            let avg = |f: fn(&BiophysReport) -> f64| panel.iter().map(f).sum::<f64>() / n;
            out.push(Metric::new(set, "w_mol", avg(|r| r.molecular_weight)));
            out.push(Metric::new(set, "instability", avg(|r| r.instability_index)));
            out.push(Metric::new(set, "pI", avg(|r| r.isoelectric_point)));
            out.push(Metric::new(set, "gravy", avg(|r| r.gravy)));
            if let Some(reference) = &refs.biophys {
                match biophys::dcs(&panel, reference) {
                    Ok(v) => out.push(Metric::new(set, "dcs", v)),
                    Err(e) => log::warn!("DCS skipped for {set}: {e}"),
                }
            }
        }
        Ok(_) => {}
        Err(e) => log::debug!("biophysical panel skipped for {set}: {e}"),
    }
    Ok(out)
}

/// Metrics of a finished seed: final batch, archive, and run bookkeeping.
pub fn seed_metrics(run: &SeedRun, cfg: &RunConfig, refs: &References) -> Result<Vec<Metric>> {
    let alphabet = &cfg.env.alphabet;
    let mut out = Vec::new();
    let final_seqs = run.final_sequences();
    if !final_seqs.is_empty() {
        out.extend(set_metrics("final_batch", &final_seqs, &run.final_scores(), alphabet, refs)?);
        if run.final_oracle.is_some() {
            out.push(Metric::new("final_batch", "mean_training_score", mean(&run.final_training_scores())));
        }
    }
    let archive = run.outcome.archive.entries();
    if !archive.is_empty() {
        let seqs: Vec<Sequence> = archive.iter().map(|e| e.sequence.clone()).collect();
        let scores: Vec<f64> = archive.iter().map(|e| e.score).collect();
        out.extend(set_metrics("archive", &seqs, &scores, alphabet, refs)?);
    }
    let l = &run.ledger;
    for (name, v) in [
        ("agent_queries", l.agent_queries),
        ("proxy_queries", l.proxy_queries),
        ("oracle_pretrain", l.oracle_pretrain),
        ("oracle_finetune", l.oracle_finetune),
        ("oracle_snapshot", l.oracle_snapshot),
        ("oracle_training", l.oracle_training),
        ("oracle_in_loop", l.oracle_in_loop()),
        ("oracle_total", l.oracle_total()),
    ] {
        out.push(Metric::new("run", name, v as f64));
    }
    if let Some(r) = run.correlation.first() {
        out.push(Metric::new("run", "pearson_first", r));
    }
    if let Some(r) = run.correlation.last() {
        out.push(Metric::new("run", "pearson_last", r));
    }
    Ok(out)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn opt(v: Option<f64>) -> Cell {
    match v {
        Some(x) => Cell::Float(x),
        None => Cell::Text(String::new()),
    }
}

pub fn write_curves(path: &Path, run: &SeedRun) -> Result<()> {
    let rows: Vec<Vec<Cell>> = run
        .outcome
        .curve
        .iter()
        .map(|c| {
            vec![
                c.queries.into(),
                c.mean_score.into(),
                c.best_score.into(),
                opt(c.mean_oracle_score),
                opt(c.temperature),
                opt(c.epsilon),
            ]
        })
        .collect();
    write_csv(
        &["queries", "mean_score", "best_score", "mean_oracle_score", "temperature", "epsilon"],
        &rows,
        create(path)?,
    )?;
    Ok(())
}

pub fn write_metrics(path: &Path, metrics: &[Metric]) -> Result<()> {
    let rows: Vec<Vec<Cell>> = metrics
        .iter()
        .map(|m| vec![m.set.clone().into(), m.name.clone().into(), m.value.into()])
        .collect();
    write_csv(&["set", "metric", "value"], &rows, create(path)?)?;
    Ok(())
}

pub fn write_ticks(path: &Path, run: &SeedRun) -> Result<()> {
    let rows: Vec<Vec<Cell>> = run
        .ticks
        .iter()
        .enumerate()
        .map(|(i, t)| {
            vec![
                i.into(),
                t.queries.into(),
                t.oracle_queries.into(),
                opt(t.pearson),
                t.initial_loss.into(),
                t.final_loss.into(),
                t.snapshot_mean.into(),
            ]
        })
        .collect();
    write_csv(
        &["tick", "queries", "oracle_queries", "pearson", "initial_loss", "final_loss", "snapshot_mean"],
        &rows,
        create(path)?,
    )?;
    Ok(())
}

/// Writes `pareto_<metric>.csv`: every point with its front membership.
pub fn write_pareto(dir: &Path, metric: &str, points: &[ParetoPoint], threshold: f64, direction: Direction) -> Result<()> {
    let front = pareto_front(points, threshold, direction);
    let rows: Vec<Vec<Cell>> = points
        .iter()
        .map(|p| {
            let on = front.contains(p);
            vec![
                p.label.clone().into(),
                p.score.into(),
                p.diversity.into(),
                Cell::Int((p.score >= threshold) as i64),
                Cell::Int(on as i64),
            ]
        })
        .collect();
    write_csv(
        &["label", "score", "diversity", "above_threshold", "on_front"],
        &rows,
        create(&dir.join(format!("pareto_{metric}.csv")))?,
    )?;
    Ok(())
}

pub fn write_manifest(path: &Path, value: &serde_json::Value) -> Result<()> {
    write_json(value, create(path)?)?;
    Ok(())
}

pub fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let m = mean(xs);
    if xs.len() < 2 {
        return (m, 0.0);
    }
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64;
    (m, var.sqrt())
}

/// Mean and sample standard deviation across seeds, row by row.
pub fn write_aggregate_curves(path: &Path, runs: &[&SeedRun]) -> Result<()> {
    let rows_n = runs.iter().map(|r| r.outcome.curve.len()).max().unwrap_or(0);
    let mut rows = Vec::with_capacity(rows_n);
    for i in 0..rows_n {
        let points: Vec<_> = runs.iter().filter_map(|r| r.outcome.curve.get(i)).collect();
        let (ms, ss) = mean_std(&points.iter().map(|p| p.mean_score).collect::<Vec<_>>());
        let (mb, sb) = mean_std(&points.iter().map(|p| p.best_score).collect::<Vec<_>>());
        let oracle: Vec<f64> = points.iter().filter_map(|p| p.mean_oracle_score).collect();
        let (mo, so) = if oracle.len() == points.len() && !oracle.is_empty() {
            let (m, s) = mean_std(&oracle);
            (Some(m), Some(s))
        } else {
            (None, None)
        };
        rows.push(vec![
            points[0].queries.into(),
            points.len().into(),
            ms.into(),
            ss.into(),
            mb.into(),
            sb.into(),
            opt(mo),
            opt(so),
        ]);
    }
    write_csv(
        &[
            "queries",
            "seeds",
            "mean_score_mean",
            "mean_score_std",
            "best_score_mean",
            "best_score_std",
            "mean_oracle_score_mean",
            "mean_oracle_score_std",
        ],
        &rows,
        create(path)?,
    )?;
    Ok(())
}

/// Aggregates per-seed metric lists keyed by (set, metric), in first-seen order.
pub fn aggregate_metrics(per_seed: &[Vec<Metric>]) -> Vec<(String, String, f64, f64, usize)> {
    let mut keys: Vec<(String, String)> = Vec::new();
    for ms in per_seed {
        for m in ms {
            let k = (m.set.clone(), m.name.clone());
            if !keys.contains(&k) {
                keys.push(k);
            }
        }
    }
    keys.into_iter()
        .map(|(set, name)| {
            let vals: Vec<f64> = per_seed
                .iter()
                .flat_map(|ms| ms.iter().filter(|m| m.set == set && m.name == name).map(|m| m.value))
                .collect();
            let (m, s) = mean_std(&vals);
            (set, name, m, s, vals.len())
        })
        .collect()
}

pub fn write_aggregate_metrics(path: &Path, per_seed: &[Vec<Metric>]) -> Result<()> {
    let rows: Vec<Vec<Cell>> = aggregate_metrics(per_seed)
        .into_iter()
        .map(|(set, name, m, s, n)| vec![set.into(), name.into(), m.into(), s.into(), n.into()])
        .collect();
    write_csv(&["set", "metric", "mean", "std", "seeds"], &rows, create(path)?)?;
    Ok(())
}
