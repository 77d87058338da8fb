//! Discrete black-box sequence optimization with mutation policies.
//!
//! The crate is organized around a batched mutation environment ([`env`])
//! driven by optimizers ([`agents`]) against a pluggable [`oracle::Scorer`],
//! optionally through a distilled [`proxy`] reward model. Candidate sets are
//! evaluated with sequence/structure diversity [`metrics`] and a [`biophys`]
//! property panel; [`io`] handles FASTA, PDB alpha-carbon traces and CSV/JSON
//! outputs.

pub mod agents;
pub mod biophys;
pub mod env;
pub mod error;
pub mod nn;
pub mod io;
pub mod metrics;
pub mod oracle;
pub mod proxy;
pub mod seq;

pub use error::{Error, Result};
pub use seq::{Alphabet, MutationAction, OneHotState, Sequence};
pub use env::{BatchEnv, CandidateArchive, EnvConfig, Horizon, Transition};
