//! Metric kernels against independent constructions.

use nalgebra::{Matrix3, Matrix4, SymmetricEigen, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seqopt::metrics::{
    dominates, hamming, kabsch_rmsd, mp_rmsd, mp_tm, pareto_front, tm_score_aligned, Direction, ParetoPoint,
    StructureTrace,
};
use seqopt::Sequence;

/// Horn's closed-form quaternion superposition: a route to the minimum RMSD
/// that never touches an SVD.
fn horn_rmsd(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
    let n = a.len() as f64;
    let ca = a.iter().map(|p| Vector3::from(*p)).sum::<Vector3<f64>>() / n;
    let cb = b.iter().map(|p| Vector3::from(*p)).sum::<Vector3<f64>>() / n;
    let mut s = Matrix3::zeros();
    let mut ga = 0.0;
    let mut gb = 0.0;
    for (p, q) in a.iter().zip(b) {
        let x = Vector3::from(*q) - cb;
        let y = Vector3::from(*p) - ca;
        s += x * y.transpose();
        ga += y.norm_squared();
        gb += x.norm_squared();
    }
    let (sxx, sxy, sxz) = (s[(0, 0)], s[(0, 1)], s[(0, 2)]);
    let (syx, syy, syz) = (s[(1, 0)], s[(1, 1)], s[(1, 2)]);
    let (szx, szy, szz) = (s[(2, 0)], s[(2, 1)], s[(2, 2)]);
    let k = Matrix4::new(
        sxx + syy + szz, syz - szy, szx - sxz, sxy - syx,
        syz - szy, sxx - syy - szz, sxy + syx, szx + sxz,
        szx - sxz, sxy + syx, -sxx + syy - szz, syz + szy,
        sxy - syx, szx + sxz, syz + szy, -sxx - syy + szz,
    );
    let lambda = SymmetricEigen::new(k).eigenvalues.max();
    ((ga + gb - 2.0 * lambda).max(0.0) / n).sqrt()
}

fn random_coords(n: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
    (0..n).map(|_| [rng.gen_range(-8.0..8.0), rng.gen_range(-8.0..8.0), rng.gen_range(-8.0..8.0)]).collect()
}

fn trace(c: Vec<[f64; 3]>) -> StructureTrace {
    StructureTrace::new(c).unwrap()
}

#[test]
fn rmsd_matches_quaternion_method() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for n in [3, 5, 20, 60] {
        for _ in 0..20 {
            let a = random_coords(n, &mut rng);
            let b = random_coords(n, &mut rng);
            let ours = kabsch_rmsd(&trace(a.clone()), &trace(b.clone())).unwrap();
            assert!((ours - horn_rmsd(&a, &b)).abs() < 1e-6, "n = {n}");
        }
    }
}

#[test]
fn triangle_with_lifted_vertex() {
    let a = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.5, 3f64.sqrt() / 2.0, 0.0]];
    let mut b = a.clone();
    b[2][2] = 0.3;
    let ours = kabsch_rmsd(&trace(a.clone()), &trace(b.clone())).unwrap();
    assert!((ours - horn_rmsd(&a, &b)).abs() < 1e-6);
    assert!(ours > 0.0 && ours < 0.3);
}

#[test]
fn rmsd_triangle_inequality() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..200 {
        let t: Vec<StructureTrace> = (0..3).map(|_| trace(random_coords(10, &mut rng))).collect();
        let ab = kabsch_rmsd(&t[0], &t[1]).unwrap();
        let bc = kabsch_rmsd(&t[1], &t[2]).unwrap();
        let ac = kabsch_rmsd(&t[0], &t[2]).unwrap();
        assert!(ac <= ab + bc + 1e-9);
    }
}

#[test]
fn pairwise_means_equal_double_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let set: Vec<StructureTrace> = (0..3).map(|_| trace(random_coords(30, &mut rng))).collect();
    let pairs = [(0, 1), (0, 2), (1, 2)];
    let tm: f64 = pairs
        .iter()
        .map(|&(i, j)| (tm_score_aligned(&set[i], &set[j]).unwrap() + tm_score_aligned(&set[j], &set[i]).unwrap()) / 2.0)
        .sum::<f64>()
        / 3.0;
    let rmsd: f64 = pairs.iter().map(|&(i, j)| kabsch_rmsd(&set[i], &set[j]).unwrap()).sum::<f64>() / 3.0;
    assert!((mp_tm(&set).unwrap() - tm).abs() < 1e-12);
    assert!((mp_rmsd(&set).unwrap() - rmsd).abs() < 1e-9);
    let rev: Vec<_> = set.iter().rev().cloned().collect();
    assert!((mp_tm(&rev).unwrap() - mp_tm(&set).unwrap()).abs() < 1e-12);
    for a in &set {
        for b in &set {
            let v = tm_score_aligned(a, b).unwrap();
            assert!(v > 0.0 && v <= 1.0 + 1e-12);
        }
    }
}

#[test]
fn random_pair_hamming_expectation() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (len, la) = (50, 20);
    let n = 20_000;
    let total: usize = (0..n)
        .map(|_| hamming(&Sequence::random(len, la, &mut rng), &Sequence::random(len, la, &mut rng)).unwrap())
        .sum();
    let mean = total as f64 / n as f64;
    assert!((mean - len as f64 * (1.0 - 1.0 / la as f64)).abs() < 0.05);
}

fn brute_force(points: &[ParetoPoint], threshold: f64, dir: Direction) -> Vec<ParetoPoint> {
    let eligible: Vec<&ParetoPoint> = points.iter().filter(|p| p.score >= threshold).collect();
    eligible
        .iter()
        .filter(|p| !eligible.iter().any(|q| dominates(q, p, dir)))
        .map(|p| (*p).clone())
        .collect()
}

#[test]
fn pareto_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for round in 0..50 {
        // Coarse rounding in later rounds produces ties and duplicates.
        let grid = if round % 2 == 0 { 1e6 } else { 10.0 };
        let points: Vec<ParetoPoint> = (0..100)
            .map(|i| {
                let s = (rng.gen::<f64>() * grid).round() / grid;
                let d = (rng.gen::<f64>() * 5.0 * grid).round() / grid;
                ParetoPoint::new(s, d, format!("p{i}"))
            })
            .collect();
        for dir in [Direction::HigherBetter, Direction::LowerBetter] {
            let front = pareto_front(&points, 0.5, dir);
            assert_eq!(front, brute_force(&points, 0.5, dir));
            for a in &front {
                assert!(front.iter().all(|b| !dominates(b, a, dir)));
            }
        }
    }
}
