//! Run configuration: TOML file, command-line overrides, validation.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use seqopt::agents::{AgentConfig, AgentKind};
use seqopt::oracle::remote::RetryPolicy;
use seqopt::oracle::LandscapeParams;
use seqopt::proxy::{FinetuneSchedule, PretrainConfig};
use seqopt::{Alphabet, EnvConfig, Horizon};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Agent trained directly on oracle scores.
    Oracle,
    /// Agent trained on a periodically finetuned proxy.
    Proxy,
}

impl FromStr for Mode {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oracle" => Ok(Mode::Oracle),
            "proxy" => Ok(Mode::Proxy),
            _ => bail!("unknown mode '{s}' (expected oracle or proxy)"),
        }
    }
}

/// Where oracle scores come from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum OracleSpec {
    /// Potts landscape generated from this seed.
    Synthetic(u64),
    /// Line-protocol server at `host:port`.
    Remote(String),
    /// Child process speaking the line protocol on stdio.
    Exec(Vec<String>),
}

impl FromStr for OracleSpec {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Some(seed) = s.strip_prefix("synthetic:") {
            let seed = seed.parse().with_context(|| format!("bad synthetic seed in '{s}'"))?;
            return Ok(OracleSpec::Synthetic(seed));
        }
        if let Some(rest) = s.strip_prefix("remote:") {
            if let Some(cmd) = rest.strip_prefix("exec:") {
                let argv: Vec<String> = cmd.split_whitespace().map(String::from).collect();
                if argv.is_empty() {
                    bail!("empty command in '{s}'");
                }
                return Ok(OracleSpec::Exec(argv));
            }
            if rest.is_empty() {
                bail!("missing address in '{s}'");
            }
            return Ok(OracleSpec::Remote(rest.to_string()));
        }
        bail!("oracle must be synthetic:SEED or remote:ADDR, got '{s}'")
    }
}

impl TryFrom<String> for OracleSpec {
    type Error = anyhow::Error;

    fn try_from(value: String) -> Result<Self> {
        value.parse()
    }
}

impl From<OracleSpec> for String {
    fn from(value: OracleSpec) -> Self {
        value.to_string()
    }
}

impl fmt::Display for OracleSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OracleSpec::Synthetic(seed) => write!(f, "synthetic:{seed}"),
            OracleSpec::Remote(addr) => write!(f, "remote:{addr}"),
            OracleSpec::Exec(argv) => write!(f, "remote:exec:{}", argv.join(" ")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvSection {
    pub seq_len: usize,
    pub alphabet: Alphabet,
    pub batch_size: usize,
    pub horizon: Horizon,
}

impl Default for EnvSection {
    fn default() -> Self {
        Self {
            seq_len: 50,
            alphabet: Alphabet::protein(),
            batch_size: 100,
            horizon: Horizon::Infinite,
        }
    }
}

impl EnvSection {
    pub fn to_env(&self) -> Result<EnvConfig> {
        Ok(EnvConfig::new(
            self.seq_len,
            self.alphabet.clone(),
            self.batch_size,
            self.horizon,
        )?)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProxySection {
    pub pretrain: PretrainConfig,
    pub finetune: FinetuneSchedule,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationSection {
    /// Finite horizons as multiples of the sequence length.
    pub length_factors: Vec<usize>,
    pub include_infinite: bool,
}

impl Default for AblationSection {
    fn default() -> Self {
        Self {
            length_factors: vec![1, 5],
            include_infinite: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MismatchSection {
    pub agents: Vec<AgentKind>,
}

impl Default for MismatchSection {
    fn default() -> Self {
        Self {
            agents: vec![AgentKind::Mcmc, AgentKind::Ppo],
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReferenceSection {
    /// Biophysical reference panel (w_mol, instability, pI, gravy) for DCS.
    pub biophys_csv: Option<PathBuf>,
    /// Reference sequences for the amino-acid frequency MAE.
    pub sequences_fasta: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RemoteSection {
    pub timeout_ms: u64,
    pub attempts: usize,
    pub backoff_ms: u64,
}

impl Default for RemoteSection {
    fn default() -> Self {
        let p = RetryPolicy::default();
        Self {
            timeout_ms: p.timeout.as_millis() as u64,
            attempts: p.attempts,
            backoff_ms: p.backoff.as_millis() as u64,
        }
    }
}

impl RemoteSection {
    pub fn policy(&self) -> RetryPolicy {
        RetryPolicy {
            timeout: Duration::from_millis(self.timeout_ms),
            attempts: self.attempts,
            backoff: Duration::from_millis(self.backoff_ms),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    pub agent: AgentKind,
    pub seeds: Vec<u64>,
    /// Scorer queries spent by the agent, per seed.
    pub budget: u64,
    pub out: PathBuf,
    /// Minimum score for a method to enter the Pareto output.
    pub threshold: f64,
    pub archive_size: usize,
    pub oracle: OracleSpec,
    pub env: EnvSection,
    pub landscape: LandscapeParams,
    pub agents: AgentConfig,
    pub proxy: ProxySection,
    pub ablation: AblationSection,
    pub mismatch: MismatchSection,
    pub reference: ReferenceSection,
    pub remote: RemoteSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Oracle,
            agent: AgentKind::Ppo,
            seeds: vec![1, 2, 3],
            budget: 20_000,
            out: PathBuf::from("out"),
            threshold: 0.5,
            archive_size: 100,
            oracle: OracleSpec::Synthetic(0),
            env: EnvSection::default(),
            landscape: LandscapeParams::default(),
            agents: AgentConfig::default(),
            proxy: ProxySection::default(),
            ablation: AblationSection::default(),
            mismatch: MismatchSection::default(),
            reference: ReferenceSection::default(),
            remote: RemoteSection::default(),
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seeds: Vec<u64>,
    pub budget: Option<u64>,
    pub agent: Option<AgentKind>,
    pub beta: Option<f64>,
    pub out: Option<PathBuf>,
    pub oracle: Option<OracleSpec>,
    pub threshold: Option<f64>,
    pub mode: Option<Mode>,
    pub seq_len: Option<usize>,
}

impl RunConfig {
    /// Reads a TOML config, or the `config` object of a JSON run manifest.
    /// A per-seed manifest pins the seed list to its own seed.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let is_json = path.extension().is_some_and(|e| e == "json");
        if is_json {
            let mut value: serde_json::Value =
                serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
            let seed = value.get("seed").and_then(|s| s.as_u64());
            let config = value
                .get_mut("config")
                .map(serde_json::Value::take)
                .with_context(|| format!("{} has no \"config\" object", path.display()))?;
            let mut cfg: RunConfig =
                serde_json::from_value(config).with_context(|| format!("bad config in {}", path.display()))?;
            if let Some(seed) = seed {
                cfg.seeds = vec![seed];
            }
            Ok(cfg)
        } else {
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
        }
    }

    pub fn apply(&mut self, o: &Overrides) {
        if !o.seeds.is_empty() {
            self.seeds = o.seeds.clone();
        }
        if let Some(b) = o.budget {
            self.budget = b;
        }
        if let Some(a) = o.agent {
            self.agent = a;
        }
        if let Some(beta) = o.beta {
            self.agents.gfn.beta = beta;
        }
        if let Some(out) = &o.out {
            self.out = out.clone();
        }
        if let Some(oracle) = &o.oracle {
            self.oracle = oracle.clone();
        }
        if let Some(t) = o.threshold {
            self.threshold = t;
        }
        if let Some(m) = o.mode {
            self.mode = m;
        }
        if let Some(l) = o.seq_len {
            self.env.seq_len = l;
        }
    }

    pub fn validate(&self) -> Result<()> {
        let env = self.env.to_env()?;
        let b = env.batch_size as u64;
        if self.budget == 0 || self.budget % b != 0 {
            bail!("budget {} must be a positive multiple of the batch size {b}", self.budget);
        }
        if self.seeds.is_empty() {
            bail!("no seeds given");
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = self.seeds.iter().find(|s| !seen.insert(**s)) {
            bail!("seed {dup} listed twice");
        }
        if self.archive_size == 0 {
            bail!("archive_size must be positive");
        }
        if !self.threshold.is_finite() {
            bail!("threshold must be finite");
        }
        if self.mode == Mode::Proxy {
            self.proxy.finetune.validate()?;
            if self.proxy.finetune.interval % b != 0 {
                bail!(
                    "finetune interval {} must be a multiple of the batch size {b}",
                    self.proxy.finetune.interval
                );
            }
        }
        if self.mismatch.agents.is_empty() {
            bail!("mismatch.agents is empty");
        }
        if self.ablation.length_factors.contains(&0) {
            bail!("ablation length factors must be positive");
        }
        for path in [&self.reference.biophys_csv, &self.reference.sequences_fasta].into_iter().flatten() {
            if !path.is_file() {
                bail!("reference file {} does not exist", path.display());
            }
        }
        Ok(())
    }
}
