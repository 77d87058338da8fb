//! Sequence-derived biophysical properties and a conformity score comparing
//! a generated set's property distribution against a reference set.

use std::collections::HashMap;
use std::io::Read;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Average mass of water lost per peptide bond (Da).
pub const WATER_MASS: f64 = 18.0153;

const RESIDUES_CSV: &str = include_str!("../data/residues.csv");
const DIWV_CSV: &str = include_str!("../data/diwv.csv");
const PKA_CSV: &str = include_str!("../data/pka.csv");

#[derive(Clone, Debug, PartialEq)]
pub struct PkaTable {
    pub n_term: f64,
    pub c_term: f64,
    /// Side-chain pKa and charge sign (+1 basic, -1 acidic).
    pub side_chains: HashMap<char, (f64, i8)>,
}

#[derive(Deserialize)]
struct PkaRow {
    group: String,
    pka: f64,
    charge: i8,
}

impl PkaTable {
    /// Reads `group,pka,charge` rows; groups are `Nterm`, `Cterm` or a one-letter residue code.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let (mut n_term, mut c_term) = (None, None);
        let mut side_chains = HashMap::new();
        for row in rdr.deserialize() {
            let row: PkaRow = row?;
            if !row.pka.is_finite() || !(row.charge == 1 || row.charge == -1) {
                return Err(Error::InvalidArgument(format!("bad pKa row for {}", row.group)));
            }
            match row.group.as_str() {
                "Nterm" => n_term = Some(row.pka),
                "Cterm" => c_term = Some(row.pka),
                g if g.chars().count() == 1 => {
                    side_chains.insert(g.chars().next().unwrap(), (row.pka, row.charge));
                }
                g => return Err(Error::InvalidArgument(format!("unknown pKa group {g}"))),
            }
        }
        Ok(Self {
            n_term: n_term.ok_or_else(|| Error::InvalidArgument("pKa table lacks Nterm".into()))?,
            c_term: c_term.ok_or_else(|| Error::InvalidArgument("pKa table lacks Cterm".into()))?,
            side_chains,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResidueTables {
    mass: HashMap<char, f64>,
    kd: HashMap<char, f64>,
    diwv: HashMap<(char, char), f64>,
    pub pka: PkaTable,
}

#[derive(Deserialize)]
struct ResidueRow {
    residue: char,
    mass: f64,
    kd: f64,
}

impl ResidueTables {
    pub fn bundled() -> &'static ResidueTables {
        static TABLES: OnceLock<ResidueTables> = OnceLock::new();
        TABLES.get_or_init(|| Self::parse(RESIDUES_CSV, DIWV_CSV, PKA_CSV).expect("bundled residue tables are valid"))
    }

    pub fn parse(residues: &str, diwv: &str, pka: &str) -> Result<Self> {
        let mut mass = HashMap::new();
        let mut kd = HashMap::new();
        for row in csv::Reader::from_reader(residues.as_bytes()).deserialize() {
            let row: ResidueRow = row?;
            mass.insert(row.residue, row.mass);
            kd.insert(row.residue, row.kd);
        }
        let mut rdr = csv::Reader::from_reader(diwv.as_bytes());
        let cols: Vec<char> = rdr
            .headers()?
            .iter()
            .skip(1)
            .map(|h| h.chars().next().ok_or_else(|| Error::InvalidArgument("empty DIWV header".into())))
            .collect::<Result<_>>()?;
        let mut table = HashMap::new();
        for rec in rdr.records() {
            let rec = rec?;
            let first = rec
                .get(0)
                .and_then(|f| f.chars().next())
                .ok_or_else(|| Error::InvalidArgument("empty DIWV row".into()))?;
            for (c, v) in cols.iter().zip(rec.iter().skip(1)) {
                let v: f64 = v
                    .trim()
                    .parse()
                    .map_err(|_| Error::InvalidArgument(format!("bad DIWV value {v}")))?;
                table.insert((first, *c), v);
            }
        }
        let t = Self {
            mass,
            kd,
            diwv: table,
            pka: PkaTable::from_csv(pka.as_bytes())?,
        };
        for c in t.mass.keys() {
            for d in t.mass.keys() {
                if !t.diwv.contains_key(&(*c, *d)) {
                    return Err(Error::InvalidArgument(format!("DIWV table lacks {c}{d}")));
                }
            }
        }
        Ok(t)
    }

    pub fn with_pka(mut self, pka: PkaTable) -> Self {
        self.pka = pka;
        self
    }

    fn lookup(table: &HashMap<char, f64>, c: char) -> Result<f64> {
        table.get(&c).copied().ok_or(Error::UnknownResidue(c))
    }

    pub fn molecular_weight(&self, seq: &str) -> Result<f64> {
        if seq.is_empty() {
            return Err(Error::InvalidArgument("empty sequence".into()));
        }
        let mut total = 0.0;
        for c in seq.chars() {
            total += Self::lookup(&self.mass, c)?;
        }
        Ok(total - (seq.chars().count() - 1) as f64 * WATER_MASS)
    }

    pub fn gravy(&self, seq: &str) -> Result<f64> {
        if seq.is_empty() {
            return Err(Error::InvalidArgument("empty sequence".into()));
        }
        let mut total = 0.0;
        for c in seq.chars() {
            total += Self::lookup(&self.kd, c)?;
        }
        Ok(total / seq.chars().count() as f64)
    }

    pub fn instability_index(&self, seq: &str) -> Result<f64> {
        let chars: Vec<char> = seq.chars().collect();
        if chars.len() < 2 {
            return Err(Error::InvalidArgument("instability index needs at least 2 residues".into()));
        }
        let mut total = 0.0;
        for w in chars.windows(2) {
            total += self.diwv.get(&(w[0], w[1])).copied().ok_or_else(|| {
                let bad = if self.mass.contains_key(&w[0]) { w[1] } else { w[0] };
                Error::UnknownResidue(bad)
            })?;
        }
        Ok(10.0 / chars.len() as f64 * total)
    }

    /// Net charge at `ph`.
    pub fn charge(&self, seq: &str, ph: f64) -> Result<f64> {
        let pos = |pka: f64| 1.0 / (1.0 + 10f64.powf(ph - pka));
        let neg = |pka: f64| 1.0 / (1.0 + 10f64.powf(pka - ph));
        let mut z = pos(self.pka.n_term) - neg(self.pka.c_term);
        for c in seq.chars() {
            if !self.mass.contains_key(&c) {
                return Err(Error::UnknownResidue(c));
            }
            if let Some(&(pka, sign)) = self.pka.side_chains.get(&c) {
                z += if sign > 0 { pos(pka) } else { -neg(pka) };
            }
        }
        Ok(z)
    }

    /// pH of zero net charge, by bisection on [0, 14].
    pub fn isoelectric_point(&self, seq: &str) -> Result<f64> {
        if seq.is_empty() {
            return Err(Error::InvalidArgument("empty sequence".into()));
        }
        let (mut lo, mut hi) = (0.0f64, 14.0f64);
        while hi - lo > 1e-7 {
            let mid = 0.5 * (lo + hi);
            if self.charge(seq, mid)? > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    pub fn report(&self, seq: &str) -> Result<BiophysReport> {
        Ok(BiophysReport {
            molecular_weight: self.molecular_weight(seq)?,
            instability_index: self.instability_index(seq)?,
            isoelectric_point: self.isoelectric_point(seq)?,
            gravy: self.gravy(seq)?,
        })
    }
}

pub fn molecular_weight(seq: &str) -> Result<f64> {
    ResidueTables::bundled().molecular_weight(seq)
}

pub fn gravy(seq: &str) -> Result<f64> {
    ResidueTables::bundled().gravy(seq)
}

pub fn instability_index(seq: &str) -> Result<f64> {
    ResidueTables::bundled().instability_index(seq)
}

pub fn isoelectric_point(seq: &str) -> Result<f64> {
    ResidueTables::bundled().isoelectric_point(seq)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiophysReport {
    #[serde(rename = "w_mol")]
    pub molecular_weight: f64,
    #[serde(rename = "instability")]
    pub instability_index: f64,
    #[serde(rename = "pI")]
    pub isoelectric_point: f64,
    pub gravy: f64,
}

impl BiophysReport {
    pub fn features(&self) -> [f64; 4] {
        [self.molecular_weight, self.instability_index, self.isoelectric_point, self.gravy]
    }
}

pub fn report(seq: &str) -> Result<BiophysReport> {
    ResidueTables::bundled().report(seq)
}

/// Reads a reference feature set with header `w_mol,instability,pI,gravy`.
pub fn read_reference_csv<R: Read>(reader: R) -> Result<Vec<BiophysReport>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        let r: BiophysReport = row?;
        if r.features().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("reference row {}", out.len() + 1)));
        }
        out.push(r);
    }
    Ok(out)
}

/// Gaussian kernel density estimate with Scott's bandwidth factor.
struct Kde {
    points: Vec<DVector<f64>>,
    precision: DMatrix<f64>,
    log_norm: f64,
}

impl Kde {
    fn fit(points: Vec<DVector<f64>>) -> Result<Self> {
        let n = points.len();
        let d = points[0].len();
        let mean = points.iter().fold(DVector::zeros(d), |acc, p| acc + p) / n as f64;
        let mut cov = DMatrix::zeros(d, d);
        for p in &points {
            let c = p - &mean;
            cov += &c * c.transpose();
        }
        cov /= (n - 1) as f64;
        let factor = (n as f64).powf(-1.0 / (d as f64 + 4.0));
        let kernel_cov = cov * factor * factor;
        let chol = kernel_cov
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Domain("reference features are linearly dependent".into()))?;
        let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let precision = chol.inverse();
        let log_norm = -0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + log_det) - (n as f64).ln();
        Ok(Self {
            points,
            precision,
            log_norm,
        })
    }

    fn log_density(&self, x: &DVector<f64>) -> f64 {
        let exps: Vec<f64> = self
            .points
            .iter()
            .map(|p| {
                let diff = x - p;
                -0.5 * (diff.transpose() * &self.precision * &diff)[(0, 0)]
            })
            .collect();
        let m = exps.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        m + exps.iter().map(|e| (e - m).exp()).sum::<f64>().ln() + self.log_norm
    }
}

/// Minimum reference-set size accepted by [`dcs`].
pub const DCS_MIN_REFERENCE: usize = 20;

/// Distributional Conformity Score: the mean conformal p-value of the
/// generated samples, with nonconformity the negative log KDE density fitted
/// on the standardized reference features. Lies in [1/(N+1), 1].
pub fn dcs(generated: &[BiophysReport], reference: &[BiophysReport]) -> Result<f64> {
    if reference.len() < DCS_MIN_REFERENCE {
        return Err(Error::InvalidArgument(format!(
            "reference set has {} entries, need at least {DCS_MIN_REFERENCE}",
            reference.len()
        )));
    }
    if generated.is_empty() {
        return Err(Error::InvalidArgument("no generated samples".into()));
    }
    let n = reference.len() as f64;
    let mut kept = Vec::new();
    let mut stats = Vec::new();
    for k in 0..4 {
        let vals: Vec<f64> = reference.iter().map(|r| r.features()[k]).collect();
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        if var > 0.0 {
            kept.push(k);
            stats.push((mean, var.sqrt()));
        } else {
            log::warn!("dropping constant reference feature {k} from the conformity score");
        }
    }
    if kept.is_empty() {
        return Err(Error::Domain("every reference feature is constant".into()));
    }
    let standardize = |r: &BiophysReport| -> DVector<f64> {
        let f = r.features();
        DVector::from_iterator(kept.len(), kept.iter().zip(&stats).map(|(&k, (m, s))| (f[k] - m) / s))
    };
    let kde = Kde::fit(reference.iter().map(standardize).collect())?;
    let ref_nc: Vec<f64> = kde.points.iter().map(|p| -kde.log_density(p)).collect();
    let mut total = 0.0;
    for g in generated {
        let nc = -kde.log_density(&standardize(g));
        let at_least = ref_nc.iter().filter(|&&r| r >= nc).count();
        total += (1 + at_least) as f64 / (n + 1.0);
    }
    Ok(total / generated.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn weights() {
        assert!((molecular_weight("G").unwrap() - 75.07).abs() < 0.005);
        assert!((molecular_weight("GG").unwrap() - 132.12).abs() < 0.005);
        assert_relative_eq!(
            molecular_weight("GAW").unwrap(),
            molecular_weight("G").unwrap() + molecular_weight("AW").unwrap() - WATER_MASS,
            max_relative = 1e-14
        );
        assert!(molecular_weight("GA").unwrap() > molecular_weight("G").unwrap());
        assert!(matches!(molecular_weight("GX"), Err(Error::UnknownResidue('X'))));
    }

    #[test]
    fn hydropathy() {
        assert_eq!(gravy("I").unwrap(), 4.5);
        assert_eq!(gravy("R").unwrap(), -4.5);
        assert_eq!(gravy("IR").unwrap(), 0.0);
    }

    #[test]
    fn instability() {
        assert_relative_eq!(instability_index("AA").unwrap(), 5.0);
        assert_relative_eq!(instability_index("AAAAA").unwrap(), 10.0 * 4.0 / 5.0);
        assert!(instability_index("A").is_err());
    }

    #[test]
    fn isoelectric_two_group() {
        let mut pka = ResidueTables::bundled().pka.clone();
        pka.n_term = 9.6;
        pka.c_term = 2.34;
        let t = ResidueTables::bundled().clone().with_pka(pka);
        // Closed form when only the termini ionize: pI is their midpoint.
        assert!((t.isoelectric_point("GG").unwrap() - (9.6 + 2.34) / 2.0).abs() < 1e-4);
        assert!((t.isoelectric_point("GG").unwrap() - 5.97).abs() < 0.005);
    }

    #[test]
    fn isoelectric_signs() {
        assert!(isoelectric_point("KKKKKKKK").unwrap() > 9.0);
        assert!(isoelectric_point("DDDDDDDD").unwrap() < 4.0);
        let seq = "MKTAYIAKQRQISFVKSHFSRQ";
        let pi = isoelectric_point(seq).unwrap();
        let t = ResidueTables::bundled();
        assert!(t.charge(seq, pi).unwrap().abs() < 1e-3);
        let mut prev = f64::INFINITY;
        for i in 0..=140 {
            let z = t.charge(seq, i as f64 / 10.0).unwrap();
            assert!(z < prev);
            prev = z;
        }
    }

    fn gaussian_reports(n: usize, shift: f64, seed: u64) -> Vec<BiophysReport> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = Normal::new(0.0, 1.0).unwrap();
        (0..n)
            .map(|_| BiophysReport {
                molecular_weight: 5500.0 + 300.0 * (g.sample(&mut rng) + shift),
                instability_index: 40.0 + 10.0 * g.sample(&mut rng),
                isoelectric_point: 7.0 + 1.5 * g.sample(&mut rng),
                gravy: -0.3 + 0.4 * g.sample(&mut rng),
            })
            .collect()
    }

    #[test]
    fn dcs_self_is_half() {
        let r = gaussian_reports(200, 0.0, 1);
        let v = dcs(&r, &r).unwrap();
        assert!((v - 0.5).abs() < 0.05, "dcs {v}");
    }

    #[test]
    fn dcs_far_away_is_minimal() {
        let r = gaussian_reports(100, 0.0, 2);
        let far = gaussian_reports(10, 50.0, 3);
        assert_relative_eq!(dcs(&far, &r).unwrap(), 1.0 / 101.0, max_relative = 1e-12);
    }

    #[test]
    fn dcs_affine_invariant_and_drops_constants() {
        let r = gaussian_reports(60, 0.0, 4);
        let g = gaussian_reports(30, 0.5, 5);
        let base = dcs(&g, &r).unwrap();
        let rescale = |v: &[BiophysReport]| -> Vec<BiophysReport> {
            v.iter()
                .map(|x| BiophysReport {
                    gravy: 3.0 * x.gravy - 7.0,
                    ..*x
                })
                .collect()
        };
        assert_relative_eq!(dcs(&rescale(&g), &rescale(&r)).unwrap(), base, max_relative = 1e-12);
        let flatten = |v: &[BiophysReport]| -> Vec<BiophysReport> {
            v.iter()
                .map(|x| BiophysReport {
                    isoelectric_point: 7.0,
                    ..*x
                })
                .collect()
        };
        let v = dcs(&flatten(&g), &flatten(&r)).unwrap();
        assert!((1.0 / 61.0..=1.0).contains(&v));
        assert!(dcs(&g, &r[..19]).is_err());
    }
}
