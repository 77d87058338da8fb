//! FASTA and PDB alpha-carbon readers, CSV and JSON result writers.

use std::io::{BufRead, Write};

use serde::Serialize;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::metrics::StructureTrace;
use crate::seq::Alphabet;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FastaRecord {
    /// Header text after `>`.
    pub id: String,
    pub sequence: String,
}

impl FastaRecord {
    pub fn new(id: impl Into<String>, sequence: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            sequence: sequence.into(),
        }
    }

    /// First whitespace-delimited token of the header.
    pub fn name(&self) -> &str {
        self.id.split_whitespace().next().unwrap_or("")
    }

    /// Value of a `key=value` token in the header.
    pub fn header_field(&self, key: &str) -> Option<&str> {
        self.id
            .split_whitespace()
            .filter_map(|t| t.split_once('='))
            .find(|(k, _)| *k == key)
            .map(|(_, v)| v)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FastaMode {
    Strict,
    /// Unknown residues become `substitute`, or the record is dropped when `None`.
    Lenient { substitute: Option<char> },
}

pub fn read_fasta<R: BufRead>(reader: R, alphabet: &Alphabet, mode: FastaMode) -> Result<Vec<FastaRecord>> {
    let mut raw: Vec<(String, String, usize)> = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim_end_matches('\r');
        if let Some(header) = line.strip_prefix('>') {
            let id = header.trim().to_string();
            if id.is_empty() {
                return Err(Error::Parse {
                    line: n + 1,
                    msg: "empty FASTA header".into(),
                });
            }
            raw.push((id, String::new(), n + 1));
        } else if !line.trim().is_empty() {
            let rec = raw.last_mut().ok_or_else(|| Error::Parse {
                line: n + 1,
                msg: "sequence data before any header".into(),
            })?;
            rec.1.extend(line.chars().filter(|c| !c.is_whitespace()));
        }
    }
    let mut out = Vec::with_capacity(raw.len());
    for (id, seq, line) in raw {
        if seq.is_empty() {
            return Err(Error::Parse {
                line,
                msg: format!("record '{id}' has an empty sequence"),
            });
        }
        let bad: Vec<char> = seq.chars().filter(|c| !alphabet.contains(*c)).collect();
        if bad.is_empty() {
            out.push(FastaRecord { id, sequence: seq });
            continue;
        }
        match mode {
            FastaMode::Strict => {
                return Err(Error::Parse {
                    line,
                    msg: format!("record '{id}' contains residue '{}' outside the alphabet", bad[0]),
                })
            }
            FastaMode::Lenient { substitute: Some(sub) } => {
                if !alphabet.contains(sub) {
                    return Err(Error::Alphabet(format!("substitute residue '{sub}' is not in the alphabet")));
                }
                log::warn!("record '{id}': replacing {} unknown residues with '{sub}'", bad.len());
                let fixed = seq.chars().map(|c| if alphabet.contains(c) { c } else { sub }).collect();
                out.push(FastaRecord { id, sequence: fixed });
            }
            FastaMode::Lenient { substitute: None } => {
                log::warn!("dropping record '{id}': unknown residue '{}'", bad[0]);
            }
        }
    }
    Ok(out)
}

pub const FASTA_LINE_WIDTH: usize = 60;

pub fn write_fasta<W: Write>(records: &[FastaRecord], mut writer: W) -> Result<()> {
    for r in records {
        writeln!(writer, ">{}", r.id)?;
        let chars: Vec<char> = r.sequence.chars().collect();
        for chunk in chars.chunks(FASTA_LINE_WIDTH) {
            writeln!(writer, "{}", chunk.iter().collect::<String>())?;
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct PdbCaTrace {
    pub chain: char,
    pub residues: Vec<(i32, [f64; 3])>,
}

impl PdbCaTrace {
    pub fn to_structure(&self) -> Result<StructureTrace> {
        StructureTrace::new(self.residues.iter().map(|r| r.1).collect())
    }

    pub fn len(&self) -> usize {
        self.residues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.residues.is_empty()
    }
}

fn column(line: &str, from: usize, to: usize) -> &str {
    // 1-indexed inclusive columns; short lines yield what is present.
    let start = (from - 1).min(line.len());
    let end = to.min(line.len());
    line.get(start..end).unwrap_or("")
}

fn parse_coord(line: &str, from: usize, to: usize, n: usize) -> Result<f64> {
    let field = column(line, from, to).trim();
    field.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| Error::Parse {
        line: n,
        msg: format!("bad coordinate field '{field}' in columns {from}-{to}"),
    })
}

/// Alpha-carbon trace of one chain from the first model. With no chain filter
/// the first chain seen is used.
pub fn read_pdb_ca<R: BufRead>(reader: R, chain: Option<char>) -> Result<PdbCaTrace> {
    let mut selected = chain;
    let mut residues: Vec<(i32, [f64; 3])> = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let n = i + 1;
        if line.starts_with("ENDMDL") {
            break;
        }
        if !line.starts_with("ATOM  ") {
            continue;
        }
        if column(&line, 13, 16).trim() != "CA" {
            continue;
        }
        let alt = column(&line, 17, 17);
        if !(alt.trim().is_empty() || alt == "A") {
            continue;
        }
        let c = column(&line, 22, 22).chars().next().unwrap_or(' ');
        match selected {
            Some(s) if s != c => continue,
            None => selected = Some(c),
            _ => {}
        }
        let idx_field = column(&line, 23, 26).trim();
        let idx: i32 = idx_field.parse().map_err(|_| Error::Parse {
            line: n,
            msg: format!("bad residue number '{idx_field}'"),
        })?;
        if let Some(&(prev, _)) = residues.last() {
            if idx <= prev {
                return Err(Error::Parse {
                    line: n,
                    msg: format!("residue number {idx} does not increase after {prev}"),
                });
            }
        }
        let xyz = [
            parse_coord(&line, 31, 38, n)?,
            parse_coord(&line, 39, 46, n)?,
            parse_coord(&line, 47, 54, n)?,
        ];
        residues.push((idx, xyz));
    }
    if residues.is_empty() {
        return Err(Error::InvalidArgument("no alpha-carbon atoms found".into()));
    }
    Ok(PdbCaTrace {
        chain: selected.unwrap_or(' '),
        residues,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Text(String),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Float(v) => format_float(*v),
            Cell::Text(s) => s.clone(),
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<i64> for Cell {
    fn from(v: i64) -> Self {
        Cell::Int(v)
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

/// 17 significant digits in scientific notation; parses back to the same bits.
pub fn format_float(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        "NaN".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

pub fn write_csv<W: Write>(header: &[&str], rows: &[Vec<Cell>], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(header)?;
    for (i, row) in rows.iter().enumerate() {
        if row.len() != header.len() {
            return Err(Error::Shape(format!(
                "row {i} has {} cells, header has {}",
                row.len(),
                header.len()
            )));
        }
        w.write_record(row.iter().map(Cell::render))?;
    }
    w.flush()?;
    Ok(())
}

/// Resolved configuration and seed as a JSON object.
pub fn run_manifest<C: Serialize>(config: &C, seed: u64) -> Result<Value> {
    Ok(serde_json::json!({
        "seed": seed,
        "config": serde_json::to_value(config)?,
    }))
}

pub fn write_run_manifest<C: Serialize, W: Write>(config: &C, seed: u64, writer: W) -> Result<()> {
    write_json(&run_manifest(config, seed)?, writer)
}

pub fn write_json<T: Serialize, W: Write>(value: &T, mut writer: W) -> Result<()> {
    serde_json::to_writer_pretty(&mut writer, value)?;
    writeln!(writer)?;
    Ok(())
}
