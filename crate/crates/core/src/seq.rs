//! Residue alphabets, sequences, one-hot states and the flat mutation action space.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The 20 canonical amino acids in one-letter alphabetical order.
pub const AMINO_ACIDS: &str = "ACDEFGHIKLMNPQRSTVWY";

/// Ordered set of residue symbols. `index` is a bijection onto `0..len()`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Alphabet {
    symbols: Vec<char>,
    lookup: [Option<u8>; 128],
}

impl TryFrom<String> for Alphabet {
    type Error = Error;

    fn try_from(value: String) -> Result<Self> {
        Self::new(&value)
    }
}

impl From<Alphabet> for String {
    fn from(value: Alphabet) -> Self {
        value.as_string()
    }
}

impl Default for Alphabet {
    fn default() -> Self {
        Self::protein()
    }
}

impl Alphabet {
    pub fn new(symbols: &str) -> Result<Self> {
        let symbols: Vec<char> = symbols.chars().collect();
        if symbols.len() < 2 {
            return Err(Error::Alphabet(format!(
                "need at least 2 symbols, got {}",
                symbols.len()
            )));
        }
        if symbols.len() > u8::MAX as usize {
            return Err(Error::Alphabet("more than 255 symbols".into()));
        }
        let mut lookup = [None; 128];
        for (i, &c) in symbols.iter().enumerate() {
            if !c.is_ascii() {
                return Err(Error::Alphabet(format!("non-ASCII symbol '{c}'")));
            }
            let slot = &mut lookup[c as usize];
            if slot.is_some() {
                return Err(Error::Alphabet(format!("duplicate symbol '{c}'")));
            }
            *slot = Some(i as u8);
        }
        Ok(Self { symbols, lookup })
    }

    pub fn protein() -> Self {
        Self::new(AMINO_ACIDS).expect("canonical alphabet is valid")
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbols(&self) -> &[char] {
        &self.symbols
    }

    pub fn as_string(&self) -> String {
        self.symbols.iter().collect()
    }

    pub fn index(&self, symbol: char) -> Option<u8> {
        if symbol.is_ascii() {
            self.lookup[symbol as usize]
        } else {
            None
        }
    }

    pub fn symbol(&self, index: u8) -> Option<char> {
        self.symbols.get(index as usize).copied()
    }

    pub fn contains(&self, symbol: char) -> bool {
        self.index(symbol).is_some()
    }

    /// Parses a residue string into a [`Sequence`].
    pub fn parse(&self, text: &str) -> Result<Sequence> {
        let residues = text
            .chars()
            .map(|c| self.index(c).ok_or(Error::UnknownResidue(c)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Sequence::from_indices(residues))
    }

    pub fn render(&self, seq: &Sequence) -> String {
        seq.residues()
            .iter()
            .map(|&r| self.symbols[r as usize])
            .collect()
    }
}

/// A fixed-length list of alphabet indices.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Sequence(Vec<u8>);

impl Sequence {
    pub fn from_indices(residues: Vec<u8>) -> Self {
        Self(residues)
    }

    /// Builds a sequence, checking every index against the alphabet size.
    pub fn checked(residues: Vec<u8>, alphabet_size: usize) -> Result<Self> {
        if let Some(&bad) = residues.iter().find(|&&r| r as usize >= alphabet_size) {
            return Err(Error::OutOfRange {
                index: bad as usize,
                limit: alphabet_size,
            });
        }
        Ok(Self(residues))
    }

    pub fn residues(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<u8> {
        self.0
    }

    /// Uniform i.i.d. residues.
    pub fn random<R: rand::Rng + ?Sized>(len: usize, alphabet_size: usize, rng: &mut R) -> Self {
        Self(
            (0..len)
                .map(|_| rng.gen_range(0..alphabet_size) as u8)
                .collect(),
        )
    }

    /// Substitutes one residue. Self-substitution is allowed and returns an equal sequence.
    pub fn apply_mutation(&self, action: MutationAction) -> Result<Sequence> {
        if action.position >= self.0.len() {
            return Err(Error::OutOfRange {
                index: action.position,
                limit: self.0.len(),
            });
        }
        let mut next = self.0.clone();
        next[action.position] = action.residue;
        Ok(Self(next))
    }

    /// Row-major one-hot matrix, `len()` rows by `alphabet_size` columns.
    pub fn one_hot(&self, alphabet_size: usize) -> OneHotState {
        OneHotState::encode(self, alphabet_size)
    }
}

impl fmt::Display for Sequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, r) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{r}")?;
        }
        Ok(())
    }
}

/// A single-site substitution. `flat = position * alphabet_size + residue`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MutationAction {
    pub position: usize,
    pub residue: u8,
}

impl MutationAction {
    pub fn new(position: usize, residue: u8) -> Self {
        Self { position, residue }
    }

    pub fn decode(flat: usize, seq_len: usize, alphabet_size: usize) -> Result<Self> {
        let limit = seq_len * alphabet_size;
        if flat >= limit {
            return Err(Error::OutOfRange { index: flat, limit });
        }
        Ok(Self {
            position: flat / alphabet_size,
            residue: (flat % alphabet_size) as u8,
        })
    }

    pub fn encode(&self, seq_len: usize, alphabet_size: usize) -> Result<usize> {
        if self.position >= seq_len {
            return Err(Error::OutOfRange {
                index: self.position,
                limit: seq_len,
            });
        }
        if self.residue as usize >= alphabet_size {
            return Err(Error::OutOfRange {
                index: self.residue as usize,
                limit: alphabet_size,
            });
        }
        Ok(self.position * alphabet_size + self.residue as usize)
    }

    /// The action that leaves `seq` unchanged at `position`.
    pub fn identity_at(seq: &Sequence, position: usize) -> Self {
        Self {
            position,
            residue: seq.residues()[position],
        }
    }
}

/// Row-major 0/1 matrix of shape `rows x cols`; each row has exactly one 1.
#[derive(Clone, Debug, PartialEq)]
pub struct OneHotState {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl OneHotState {
    pub fn encode(seq: &Sequence, alphabet_size: usize) -> Self {
        let rows = seq.len();
        let mut data = vec![0.0; rows * alphabet_size];
        for (i, &r) in seq.residues().iter().enumerate() {
            data[i * alphabet_size + r as usize] = 1.0;
        }
        Self {
            rows,
            cols: alphabet_size,
            data,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.cols..(row + 1) * self.cols]
    }

    /// Flattened row-major view, the input layout for every network.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }
}

/// Number of positions at which two equal-length sequences differ.
pub fn hamming(a: &Sequence, b: &Sequence) -> Result<usize> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    Ok(a
        .residues()
        .iter()
        .zip(b.residues())
        .filter(|(x, y)| x != y)
        .count())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn one_hot_small_cases() {
        let s = Sequence::from_indices(vec![0, 1]);
        let oh = s.one_hot(3);
        assert_eq!(oh.as_slice(), &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let s = Sequence::from_indices(vec![2, 2]);
        assert_eq!(s.one_hot(3).as_slice(), &[0.0, 0.0, 1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn apply_mutation_examples() {
        let ab = Alphabet::protein();
        let s = ab.parse("ACD").unwrap();
        let g = ab.index('G').unwrap();
        let m = s.apply_mutation(MutationAction::new(1, g)).unwrap();
        assert_eq!(ab.render(&m), "AGD");
        let same = s
            .apply_mutation(MutationAction::new(0, ab.index('A').unwrap()))
            .unwrap();
        assert_eq!(same, s);
        assert!(s.apply_mutation(MutationAction::new(3, 0)).is_err());
    }

    #[test]
    fn flat_decode_examples() {
        assert_eq!(
            MutationAction::decode(999, 50, 20).unwrap(),
            MutationAction::new(49, 19)
        );
        assert_eq!(
            MutationAction::decode(0, 50, 20).unwrap(),
            MutationAction::new(0, 0)
        );
        assert_eq!(
            MutationAction::decode(21, 50, 20).unwrap(),
            MutationAction::new(1, 1)
        );
        assert!(MutationAction::decode(1000, 50, 20).is_err());
        assert!(MutationAction::new(0, 20).encode(50, 20).is_err());
    }

    #[test]
    fn flat_roundtrip_exhaustive() {
        for flat in 0..12 {
            let a = MutationAction::decode(flat, 3, 4).unwrap();
            assert_eq!(a.encode(3, 4).unwrap(), flat);
        }
    }

    #[test]
    fn alphabet_rejects_bad_input() {
        assert!(Alphabet::new("A").is_err());
        assert!(Alphabet::new("AA").is_err());
        let ab = Alphabet::new("XYZ").unwrap();
        assert_eq!(ab.index('Z'), Some(2));
        assert!(matches!(ab.parse("XQ"), Err(Error::UnknownResidue('Q'))));
        assert!(Sequence::checked(vec![0, 3], 3).is_err());
    }

    proptest! {
        #[test]
        fn mutation_changes_at_most_one_site(
            seed in any::<u64>(), len in 2usize..40, pos in 0usize..40, res in 0u8..20
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = Sequence::random(len, 20, &mut rng);
            let a = MutationAction::new(pos % len, res);
            let m = s.apply_mutation(a).unwrap();
            prop_assert!(hamming(&s, &m).unwrap() <= 1);
            prop_assert_eq!(m.residues()[a.position], res);
            let oh = m.one_hot(20);
            for i in 0..len {
                prop_assert_eq!(oh.row(i).iter().sum::<f64>(), 1.0);
            }
        }

        #[test]
        fn flat_roundtrip(len in 1usize..60, l_a in 2usize..25, raw in any::<usize>()) {
            let flat = raw % (len * l_a);
            let a = MutationAction::decode(flat, len, l_a).unwrap();
            prop_assert_eq!(a.encode(len, l_a).unwrap(), flat);
        }
    }
}
