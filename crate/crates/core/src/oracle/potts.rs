use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{ScoreReport, Scorer};
use crate::error::{Error, Result};
use crate::nn::sigmoid;
use crate::seq::Sequence;

/// Pairwise coupling between sites `i < j`, stored row-major as `coupling[a * L_a + b]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub long_range: bool,
    pub coupling: Vec<f64>,
}

/// Standard deviations of the Gaussian draws used to build a landscape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LandscapeParams {
    pub field_scale: f64,
    pub adjacent_scale: f64,
    pub long_range_scale: f64,
    /// Number of random non-adjacent edges; `None` means `2 * L_s`.
    pub long_range_edges: Option<usize>,
}

impl Default for LandscapeParams {
    fn default() -> Self {
        Self {
            field_scale: 0.5,
            adjacent_scale: 0.5,
            long_range_scale: 1.0,
            long_range_edges: None,
        }
    }
}

/// Synthetic fitness landscape: site fields plus pairwise couplings, squashed
/// into (0, 1) through a logistic of the standardized energy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PottsLandscape {
    seq_len: usize,
    alphabet_size: usize,
    seed: u64,
    fields: Vec<f64>,
    edges: Vec<Edge>,
    mean: f64,
    std: f64,
}

impl PottsLandscape {
    pub fn generate(seq_len: usize, alphabet_size: usize, seed: u64, params: &LandscapeParams) -> Result<Self> {
        if seq_len < 2 || alphabet_size < 2 {
            return Err(Error::InvalidArgument(format!(
                "landscape needs L_s >= 2 and L_a >= 2, got {seq_len} and {alphabet_size}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gauss = |scale: f64, n: usize, rng: &mut ChaCha8Rng| -> Vec<f64> {
            (0..n)
                .map(|_| scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
                .collect()
        };
        let pair = alphabet_size * alphabet_size;
        let fields = gauss(params.field_scale, seq_len * alphabet_size, &mut rng);
        let mut edges: Vec<Edge> = (0..seq_len - 1)
            .map(|i| Edge {
                i,
                j: i + 1,
                long_range: false,
                coupling: gauss(params.adjacent_scale, pair, &mut rng),
            })
            .collect();

        let mut candidates: Vec<(usize, usize)> = (0..seq_len)
            .flat_map(|i| (i + 2..seq_len).map(move |j| (i, j)))
            .collect();
        candidates.shuffle(&mut rng);
        let wanted = params.long_range_edges.unwrap_or(2 * seq_len);
        let mut chosen: Vec<(usize, usize)> = candidates.into_iter().take(wanted).collect();
        chosen.sort_unstable();
        for (i, j) in chosen {
            edges.push(Edge {
                i,
                j,
                long_range: true,
                coupling: gauss(params.long_range_scale, pair, &mut rng),
            });
        }
        Self::from_parts(seq_len, alphabet_size, seed, fields, edges)
    }

    /// Builds a landscape from explicit parameters and computes its exact energy moments.
    pub fn from_parts(
        seq_len: usize,
        alphabet_size: usize,
        seed: u64,
        fields: Vec<f64>,
        edges: Vec<Edge>,
    ) -> Result<Self> {
        if fields.len() != seq_len * alphabet_size {
            return Err(Error::LengthMismatch {
                expected: seq_len * alphabet_size,
                actual: fields.len(),
            });
        }
        let mut seen = std::collections::BTreeSet::new();
        for e in &edges {
            if e.i >= e.j || e.j >= seq_len {
                return Err(Error::InvalidArgument(format!("bad edge ({}, {})", e.i, e.j)));
            }
            if e.coupling.len() != alphabet_size * alphabet_size {
                return Err(Error::LengthMismatch {
                    expected: alphabet_size * alphabet_size,
                    actual: e.coupling.len(),
                });
            }
            if !seen.insert((e.i, e.j)) {
                return Err(Error::InvalidArgument(format!("duplicate edge ({}, {})", e.i, e.j)));
            }
        }
        let mut landscape = Self {
            seq_len,
            alphabet_size,
            seed,
            fields,
            edges,
            mean: 0.0,
            std: 0.0,
        };
        landscape.compute_moments();
        Ok(landscape)
    }

    /// All-zero fields and couplings on the adjacent chain: every sequence scores 0.5.
    pub fn flat(seq_len: usize, alphabet_size: usize) -> Result<Self> {
        let edges = (0..seq_len.saturating_sub(1))
            .map(|i| Edge {
                i,
                j: i + 1,
                long_range: false,
                coupling: vec![0.0; alphabet_size * alphabet_size],
            })
            .collect();
        Self::from_parts(seq_len, alphabet_size, 0, vec![0.0; seq_len * alphabet_size], edges)
    }

    // Exact mean and variance of the energy under uniform i.i.d. residues. The
    // energy is split into orthogonal main effects per site and pure
    // interaction terms per edge, so the variance is a sum of squares.
    fn compute_moments(&mut self) {
        let la = self.alphabet_size;
        let laf = la as f64;
        let mut mean = 0.0;
        let mut main = vec![0.0; self.seq_len * la];
        for i in 0..self.seq_len {
            let h = &self.fields[i * la..(i + 1) * la];
            let hbar = h.iter().sum::<f64>() / laf;
            mean += hbar;
            for a in 0..la {
                main[i * la + a] += h[a] - hbar;
            }
        }
        let mut interaction_var = 0.0;
        for e in &self.edges {
            let j = &e.coupling;
            let jbar = j.iter().sum::<f64>() / (laf * laf);
            mean += jbar;
            let rows: Vec<f64> = (0..la)
                .map(|a| j[a * la..(a + 1) * la].iter().sum::<f64>() / laf)
                .collect();
            let cols: Vec<f64> = (0..la)
                .map(|b| (0..la).map(|a| j[a * la + b]).sum::<f64>() / laf)
                .collect();
            for a in 0..la {
                main[e.i * la + a] += rows[a] - jbar;
                main[e.j * la + a] += cols[a] - jbar;
                for b in 0..la {
                    let g = j[a * la + b] - rows[a] - cols[b] + jbar;
                    interaction_var += g * g;
                }
            }
        }
        let main_var = main.iter().map(|m| m * m).sum::<f64>() / laf;
        let var = main_var + interaction_var / (laf * laf);
        self.mean = mean;
        self.std = var.max(0.0).sqrt();
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn alphabet_size(&self) -> usize {
        self.alphabet_size
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn fields(&self) -> &[f64] {
        &self.fields
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Exact mean of the energy under uniform random sequences.
    pub fn energy_mean(&self) -> f64 {
        self.mean
    }

    /// Exact standard deviation of the energy under uniform random sequences.
    pub fn energy_std(&self) -> f64 {
        self.std
    }

    fn check(&self, seq: &Sequence) -> Result<()> {
        if seq.len() != self.seq_len {
            return Err(Error::LengthMismatch {
                expected: self.seq_len,
                actual: seq.len(),
            });
        }
        if let Some(&r) = seq.residues().iter().find(|&&r| r as usize >= self.alphabet_size) {
            return Err(Error::OutOfRange {
                index: r as usize,
                limit: self.alphabet_size,
            });
        }
        Ok(())
    }

    pub fn energy(&self, seq: &Sequence) -> Result<f64> {
        self.check(seq)?;
        Ok(self.energy_unchecked(seq.residues()))
    }

    fn energy_unchecked(&self, x: &[u8]) -> f64 {
        let la = self.alphabet_size;
        let mut e: f64 = x
            .iter()
            .enumerate()
            .map(|(i, &a)| self.fields[i * la + a as usize])
            .sum();
        for edge in &self.edges {
            e += edge.coupling[x[edge.i] as usize * la + x[edge.j] as usize];
        }
        e
    }

    pub fn standardize(&self, energy: f64) -> f64 {
        if self.std > 0.0 {
            (energy - self.mean) / self.std
        } else {
            0.0
        }
    }

    /// Logistic of the standardized energy, clamped away from 0 so it stays in (0, 1].
    pub fn score_energy(&self, energy: f64) -> f64 {
        sigmoid(self.standardize(energy)).max(f64::MIN_POSITIVE)
    }

    pub fn score(&self, seq: &Sequence) -> Result<ScoreReport> {
        self.check(seq)?;
        let x = seq.residues();
        let energy = self.energy_unchecked(x);
        Ok(ScoreReport {
            score: self.score_energy(energy),
            confidence: Some(self.confidence(x)),
        })
    }

    // Per-site share of the energy (field plus half of each incident coupling),
    // standardized against the per-site share of the landscape moments.
    fn confidence(&self, x: &[u8]) -> Vec<f64> {
        let la = self.alphabet_size;
        let mut site: Vec<f64> = x
            .iter()
            .enumerate()
            .map(|(i, &a)| self.fields[i * la + a as usize])
            .collect();
        for edge in &self.edges {
            let half = 0.5 * edge.coupling[x[edge.i] as usize * la + x[edge.j] as usize];
            site[edge.i] += half;
            site[edge.j] += half;
        }
        let n = self.seq_len as f64;
        let center = self.mean / n;
        let spread = if self.std > 0.0 { self.std / n.sqrt() } else { 1.0 };
        site.into_iter()
            .map(|c| (100.0 * sigmoid((c - center) / spread)).clamp(1e-6, 100.0))
            .collect()
    }
}

impl Scorer for PottsLandscape {
    fn score_batch(&self, seqs: &[Sequence]) -> Result<Vec<ScoreReport>> {
        seqs.iter().map(|s| self.score(s)).collect()
    }
}

/// An oracle landscape and a decoy sharing its fields and adjacent couplings
/// but with every long-range coupling negated.
pub fn twin_landscapes(
    seq_len: usize,
    alphabet_size: usize,
    seed: u64,
    params: &LandscapeParams,
) -> Result<(PottsLandscape, PottsLandscape)> {
    let oracle = PottsLandscape::generate(seq_len, alphabet_size, seed, params)?;
    let edges = oracle
        .edges
        .iter()
        .map(|e| {
            let mut e = e.clone();
            if e.long_range {
                e.coupling.iter_mut().for_each(|c| *c = -*c);
            }
            e
        })
        .collect();
    let decoy = PottsLandscape::from_parts(seq_len, alphabet_size, seed, oracle.fields.clone(), edges)?;
    Ok((oracle, decoy))
}
