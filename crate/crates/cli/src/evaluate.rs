//! The `evaluate` subcommand: metrics and Pareto data for finished candidate sets.

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde_json::json;
use seqopt::io::{read_fasta, read_pdb_ca, FastaMode, FastaRecord};
use seqopt::metrics::{mp_rmsd, mp_tm, Direction, ParetoPoint, StructureTrace};
use seqopt::oracle::Scorer;
use seqopt::{Alphabet, Sequence};

use crate::report::{self, set_metrics, Metric, References};

/// One labeled candidate set.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalInput {
    pub label: String,
    pub path: PathBuf,
}

impl EvalInput {
    /// `LABEL=PATH`, or a bare path labeled by its file stem.
    pub fn parse(s: &str) -> Result<Self> {
        let (label, path) = match s.split_once('=') {
            Some((l, p)) if !l.is_empty() && !p.is_empty() => (l.to_string(), PathBuf::from(p)),
            Some(_) => bail!("expected LABEL=PATH, got '{s}'"),
            None => {
                let path = PathBuf::from(s);
                let stem = path
                    .file_stem()
                    .and_then(|x| x.to_str())
                    .with_context(|| format!("cannot derive a label from '{s}'"))?
                    .to_string();
                (stem, path)
            }
        };
        Ok(Self { label, path })
    }
}

pub struct EvalOptions<'a> {
    pub inputs: Vec<EvalInput>,
    /// Directory holding `<record name>.pdb` for every sequence.
    pub traces: Option<PathBuf>,
    pub threshold: f64,
    pub alphabet: Alphabet,
    pub refs: References,
    /// Scores sequences whose headers carry no `score=` field.
    pub oracle: Option<&'a dyn Fn(usize) -> Result<Box<dyn Scorer>>>,
    pub out: PathBuf,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MethodEval {
    pub label: String,
    pub count: usize,
    pub mean_score: f64,
    pub metrics: Vec<Metric>,
}

impl MethodEval {
    pub fn metric(&self, name: &str) -> Option<f64> {
        self.metrics.iter().find(|m| m.name == name).map(|m| m.value)
    }
}

fn read_set(path: &Path, alphabet: &Alphabet) -> Result<Vec<FastaRecord>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(read_fasta(BufReader::new(f), alphabet, FastaMode::Strict)
        .with_context(|| format!("reading {}", path.display()))?)
}

fn header_scores(records: &[FastaRecord]) -> Result<Option<Vec<f64>>> {
    let fields: Vec<Option<&str>> = records.iter().map(|r| r.header_field("score")).collect();
    if fields.iter().all(Option::is_none) {
        return Ok(None);
    }
    fields
        .iter()
        .zip(records)
        .map(|(f, r)| {
            let v = f.with_context(|| format!("record '{}' has no score= field", r.name()))?;
            v.parse::<f64>()
                .with_context(|| format!("bad score '{v}' on record '{}'", r.name()))
        })
        .collect::<Result<Vec<_>>>()
        .map(Some)
}

fn load_traces(dir: &Path, records: &[FastaRecord]) -> Result<Vec<StructureTrace>> {
    records
        .iter()
        .map(|r| {
            let path = dir.join(format!("{}.pdb", r.name()));
            let f = File::open(&path).with_context(|| format!("missing trace for '{}': {}", r.name(), path.display()))?;
            let trace = read_pdb_ca(BufReader::new(f), None).with_context(|| format!("reading {}", path.display()))?;
            Ok(trace.to_structure()?)
        })
        .collect()
}

pub fn evaluate_set(input: &EvalInput, opts: &EvalOptions<'_>) -> Result<MethodEval> {
    let records = read_set(&input.path, &opts.alphabet)?;
    if records.len() < 2 {
        bail!("{} needs at least 2 sequences, has {}", input.path.display(), records.len());
    }
    let seqs: Vec<Sequence> = records
        .iter()
        .map(|r| opts.alphabet.parse(&r.sequence))
        .collect::<seqopt::Result<_>>()?;
    let scores = match header_scores(&records)? {
        Some(s) => s,
        None => {
            let Some(make) = opts.oracle else {
                bail!("{} has no score= headers and no oracle was given", input.path.display());
            };
            let len = seqs[0].len();
            if seqs.iter().any(|s| s.len() != len) {
                bail!("oracle scoring needs equal-length sequences in {}", input.path.display());
            }
            make(len)?.scores(&seqs)?
        }
    };
    let mut metrics = set_metrics(&input.label, &seqs, &scores, &opts.alphabet, &opts.refs)?;
    if let Some(dir) = &opts.traces {
        let traces = load_traces(dir, &records)?;
        metrics.push(Metric::new(&input.label, "mp_tm", mp_tm(&traces)?));
        metrics.push(Metric::new(&input.label, "mp_rmsd", mp_rmsd(&traces)?));
    }
    Ok(MethodEval {
        label: input.label.clone(),
        count: seqs.len(),
        mean_score: crate::runner::mean(&scores),
        metrics,
    })
}

pub fn evaluate(opts: &EvalOptions<'_>) -> Result<Vec<MethodEval>> {
    if opts.inputs.is_empty() {
        bail!("no sequence files given");
    }
    let evals: Vec<MethodEval> = opts.inputs.iter().map(|i| evaluate_set(i, opts)).collect::<Result<_>>()?;
    report::ensure_dir(&opts.out)?;
    let all: Vec<Metric> = evals.iter().flat_map(|e| e.metrics.iter().cloned()).collect();
    report::write_metrics(&opts.out.join("metrics.csv"), &all)?;
    let mut written = Vec::new();
    for (metric, direction) in [
        ("mp_hd", Direction::HigherBetter),
        ("mp_tm", Direction::LowerBetter),
        ("mp_rmsd", Direction::HigherBetter),
    ] {
        let points: Vec<ParetoPoint> = evals
            .iter()
            .filter_map(|e| e.metric(metric).map(|d| ParetoPoint::new(e.mean_score, d, e.label.clone())))
            .collect();
        if points.is_empty() {
            continue;
        }
        report::write_pareto(&opts.out, metric, &points, opts.threshold, direction)?;
        written.push(metric);
    }
    report::write_manifest(
        &opts.out.join("manifest.json"),
        &json!({
            "inputs": opts.inputs.iter().map(|i| json!({"label": i.label, "path": i.path})).collect::<Vec<_>>(),
            "traces": opts.traces,
            "threshold": opts.threshold,
            "alphabet": opts.alphabet,
            "oracle_scoring": opts.oracle.is_some(),
            "reference_biophys": opts.refs.biophys.is_some(),
            "reference_frequency": opts.refs.aa_frequency.is_some(),
            "pareto_metrics": written,
        }),
    )?;
    Ok(evals)
}
