use std::io::BufReader;

use proptest::prelude::*;
use seqopt::io::{format_float, read_fasta, read_pdb_ca, write_csv, write_fasta, Cell, FastaMode, FastaRecord};
use seqopt::Alphabet;

fn record() -> impl Strategy<Value = FastaRecord> {
    ("[a-zA-Z0-9_][a-zA-Z0-9_ =.|-]{0,30}", "[ACDEFGHIKLMNPQRSTVWY]{1,200}")
        .prop_map(|(id, seq)| FastaRecord::new(id.trim_end(), seq))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]
    #[test]
    fn fasta_roundtrip(records in prop::collection::vec(record(), 1000)) {
        let mut buf = Vec::new();
        write_fasta(&records, &mut buf).unwrap();
        let back = read_fasta(&buf[..], &Alphabet::protein(), FastaMode::Strict).unwrap();
        prop_assert_eq!(&back, &records);
        let mut again = Vec::new();
        write_fasta(&back, &mut again).unwrap();
        prop_assert_eq!(buf, again);
    }

    #[test]
    fn float_cells_roundtrip_exactly(values in prop::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 1..50)) {
        let rows: Vec<Vec<Cell>> = values.iter().enumerate().map(|(i, &v)| vec![Cell::from(i), Cell::from(v)]).collect();
        let mut buf = Vec::new();
        write_csv(&["row", "value"], &rows, &mut buf).unwrap();
        let mut rdr = csv::Reader::from_reader(&buf[..]);
        let parsed: Vec<f64> = rdr.records().map(|r| r.unwrap()[1].parse().unwrap()).collect();
        prop_assert_eq!(parsed.len(), values.len());
        for (a, b) in parsed.iter().zip(&values) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}

#[test]
fn seventeen_significant_digits() {
    let s = format_float(std::f64::consts::PI);
    assert_eq!(s, "3.1415926535897931e0");
    assert_eq!(s.split('e').next().unwrap().replace('.', "").len(), 17);
}

#[test]
fn pdb_fixture_by_hand() {
    let f = std::fs::File::open(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/three_residues.pdb")).unwrap();
    let t = read_pdb_ca(BufReader::new(f), None).unwrap();
    assert_eq!(t.chain, 'A');
    assert_eq!(
        t.residues,
        vec![
            (1, [11.104, 6.134, -6.504]),
            (2, [13.250, 8.001, -4.010]),
            (3, [15.902, 7.120, -1.733]),
        ]
    );
    assert_eq!(t.to_structure().unwrap().len(), 3);
}
