use std::io::{self, BufReader, Write};
use std::net::TcpListener;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use seqopt::agents::AgentKind;
use seqopt::oracle::remote::{constant_handler, scorer_handler, serve_lines, serve_tcp, Handler};
use seqopt::oracle::{PottsLandscape, Scorer};
use seqopt_cli::config::{Mode, OracleSpec, Overrides, RunConfig};
use seqopt_cli::evaluate::{evaluate, EvalInput, EvalOptions};
use seqopt_cli::report::References;
use seqopt_cli::{experiments, runner};

#[derive(Parser)]
#[command(name = "seqopt", version, about = "Mutation-policy sequence optimization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train an agent against the oracle or a finetuned proxy.
    Run(Common),
    /// Same agent at T = L_s, 5 L_s and infinite horizon under equal budget.
    AblateHorizon(Common),
    /// Train on the decoy of a twin-landscape pair while logging the oracle.
    Mismatch(Common),
    /// Metrics and Pareto data for finished candidate sets.
    Evaluate(EvaluateArgs),
    /// Line-protocol scorer for testing remote oracles.
    ServeEchoOracle(ServeArgs),
}

#[derive(Args, Clone, Debug, Default)]
struct Common {
    /// TOML config, or a manifest.json from an earlier run.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Repeat for several seeds.
    #[arg(long = "seed")]
    seeds: Vec<u64>,
    #[arg(long)]
    budget: Option<u64>,
    #[arg(long)]
    agent: Option<AgentKind>,
    /// GFlowNet reward exponent.
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// synthetic:SEED or remote:ADDR
    #[arg(long)]
    oracle: Option<OracleSpec>,
    #[arg(long)]
    threshold: Option<f64>,
    /// oracle or proxy
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    seq_len: Option<usize>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        cfg.apply(&Overrides {
            seeds: self.seeds.clone(),
            budget: self.budget,
            agent: self.agent,
            beta: self.beta,
            out: self.out.clone(),
            oracle: self.oracle.clone(),
            threshold: self.threshold,
            mode: self.mode,
            seq_len: self.seq_len,
        });
        Ok(cfg)
    }
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    common: Common,
    /// LABEL=PATH to a FASTA file; repeat once per method.
    #[arg(long = "sequences", required = true)]
    sequences: Vec<String>,
    /// Directory of <record name>.pdb alpha-carbon traces.
    #[arg(long)]
    traces: Option<PathBuf>,
    /// Biophysical reference panel for DCS.
    #[arg(long)]
    reference_csv: Option<PathBuf>,
    /// Reference sequences for the amino-acid frequency MAE.
    #[arg(long)]
    reference_fasta: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    #[command(flatten)]
    common: Common,
    /// Address to bind; the bound address is printed on stdout.
    #[arg(long, conflicts_with = "stdio")]
    listen: Option<String>,
    /// Serve one client on stdin/stdout.
    #[arg(long)]
    stdio: bool,
    /// Constant score returned when no --oracle is given.
    #[arg(long, default_value_t = 0.5)]
    score: f64,
}

fn report_errors(errors: Vec<String>) -> Result<()> {
    if errors.is_empty() {
        return Ok(());
    }
    for e in &errors {
        log::error!("{e}");
    }
    bail!("{} run(s) did not complete; partial outputs were written", errors.len())
}

fn cmd_evaluate(args: &EvaluateArgs) -> Result<()> {
    let mut cfg = args.common.resolve()?;
    if args.reference_csv.is_some() {
        cfg.reference.biophys_csv = args.reference_csv.clone();
    }
    if args.reference_fasta.is_some() {
        cfg.reference.sequences_fasta = args.reference_fasta.clone();
    }
    let inputs = args.sequences.iter().map(|s| EvalInput::parse(s)).collect::<Result<Vec<_>>>()?;
    let make = |len: usize| -> Result<Box<dyn Scorer>> {
        let mut c = cfg.clone();
        c.env.seq_len = len;
        Ok(Box::new(runner::build_oracle(&c)?))
    };
    let opts = EvalOptions {
        inputs,
        traces: args.traces.clone(),
        threshold: cfg.threshold,
        alphabet: cfg.env.alphabet.clone(),
        refs: References::load(&cfg)?,
        oracle: args.common.oracle.is_some().then_some(&make as &dyn Fn(usize) -> Result<Box<dyn Scorer>>),
        out: cfg.out.clone(),
    };
    for e in evaluate(&opts)? {
        log::info!("{}: {} sequences, mean score {:.4}", e.label, e.count, e.mean_score);
    }
    Ok(())
}

fn cmd_serve(args: &ServeArgs) -> Result<()> {
    let cfg = args.common.resolve()?;
    let handler: std::sync::Arc<Handler> = match &args.common.oracle {
        Some(OracleSpec::Synthetic(seed)) => {
            let l = PottsLandscape::generate(cfg.env.seq_len, cfg.env.alphabet.len(), *seed, &cfg.landscape)?;
            scorer_handler(l, cfg.env.alphabet.clone())
        }
        Some(other) => bail!("can only serve a synthetic oracle, got {other}"),
        None => constant_handler(args.score),
    };
    if args.stdio {
        let stdin = io::stdin();
        serve_lines(BufReader::new(stdin.lock()), io::stdout().lock(), handler.as_ref())?;
        return Ok(());
    }
    let addr = args.listen.clone().unwrap_or_else(|| "127.0.0.1:0".into());
    let listener = TcpListener::bind(&addr).with_context(|| format!("binding {addr}"))?;
    let bound = listener.local_addr()?;
    let mut out = io::stdout().lock();
    writeln!(out, "{bound}")?;
    out.flush()?;
    drop(out);
    serve_tcp(listener, handler)?;
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(c) => {
            let cfg = c.resolve()?;
            let report = experiments::run(&cfg)?;
            report_errors(report.errors())
        }
        Command::AblateHorizon(c) => {
            let cfg = c.resolve()?;
            let report = experiments::run_ablation(&cfg)?;
            report_errors(report.settings.iter().flat_map(|(_, r)| r.errors()).collect())
        }
        Command::Mismatch(c) => {
            let cfg = c.resolve()?;
            let report = experiments::run_mismatch(&cfg)?;
            for &a in &cfg.mismatch.agents {
                log::info!(
                    "{a}: mean final oracle {:.4}, decoy-minus-oracle gap {:.4}",
                    report.mean_oracle(a),
                    report.mean_gap(a)
                );
            }
            report_errors(report.runs.iter().flat_map(|(_, r)| r.errors()).collect())
        }
        Command::Evaluate(a) => cmd_evaluate(&a),
        Command::ServeEchoOracle(a) => cmd_serve(&a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e:#}");
            ExitCode::FAILURE
        }
    }
}
