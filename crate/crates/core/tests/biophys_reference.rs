//! Cross-check against values produced by tests/reference/gen_biophys.py.

use serde::Deserialize;
use seqopt::biophys;

#[derive(Deserialize)]
struct Row {
    sequence: String,
    molecular_weight: f64,
    gravy: f64,
    instability_index: f64,
    isoelectric_point: f64,
}

#[test]
fn fifty_random_sequences() {
    let rows: Vec<Row> = serde_json::from_str(include_str!("fixtures/biophys_reference.json")).unwrap();
    assert_eq!(rows.len(), 50);
    for r in &rows {
        assert_eq!(r.sequence.len(), 50);
        let rep = biophys::report(&r.sequence).unwrap();
        assert!((rep.molecular_weight - r.molecular_weight).abs() < 1e-3, "{}", r.sequence);
        assert!((rep.gravy - r.gravy).abs() < 1e-3);
        assert!((rep.instability_index - r.instability_index).abs() < 1e-3);
        assert!((rep.isoelectric_point - r.isoelectric_point).abs() < 1e-2);
    }
}
