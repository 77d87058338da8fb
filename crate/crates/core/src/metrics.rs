//! Diversity and quality metrics over candidate sets: sequence-space
//! (Hamming, residue frequencies) and structure-space (TM-score, RMSD).

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seq::Sequence;

pub use crate::seq::hamming;

/// Alpha-carbon coordinates in Ångström, in residue order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StructureTrace {
    coords: Vec<[f64; 3]>,
}

impl StructureTrace {
    pub fn new(coords: Vec<[f64; 3]>) -> Result<Self> {
        if coords.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("trace coordinate".into()));
        }
        Ok(Self { coords })
    }

    pub fn coords(&self) -> &[[f64; 3]] {
        &self.coords
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    fn point(&self, i: usize) -> Vector3<f64> {
        Vector3::from(self.coords[i])
    }
}

/// Mean over ordered distinct pairs of `d`.
fn mean_pairwise<T, F>(items: &[T], mut d: F) -> Result<f64>
where
    F: FnMut(&T, &T) -> Result<f64>,
{
    let n = items.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("pairwise mean needs at least 2 items, got {n}")));
    }
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                total += d(&items[i], &items[j])?;
            }
        }
    }
    Ok(total / (n * (n - 1)) as f64)
}

/// Mean pairwise Hamming distance.
pub fn mp_hd(seqs: &[Sequence]) -> Result<f64> {
    mean_pairwise(seqs, |a, b| hamming(a, b).map(|d| d as f64))
}

/// Rigid transform that best maps `mobile` onto `fixed` in the least-squares sense.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Superposition {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Superposition {
    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }
}

/// Kabsch superposition over paired points `(fixed[i], mobile[i])`.
pub fn kabsch(fixed: &[Vector3<f64>], mobile: &[Vector3<f64>]) -> Result<Superposition> {
    if fixed.len() != mobile.len() {
        return Err(Error::LengthMismatch {
            expected: fixed.len(),
            actual: mobile.len(),
        });
    }
    if fixed.is_empty() {
        return Err(Error::InvalidArgument("superposition of zero points".into()));
    }
    let n = fixed.len() as f64;
    let cf = fixed.iter().sum::<Vector3<f64>>() / n;
    let cm = mobile.iter().sum::<Vector3<f64>>() / n;
    let mut h = Matrix3::zeros();
    for (f, m) in fixed.iter().zip(mobile) {
        h += (m - cm) * (f - cf).transpose();
    }
    let svd = h.svd(true, true);
    let u = svd.u.ok_or_else(|| Error::Domain("SVD failed".into()))?;
    let v_t = svd.v_t.ok_or_else(|| Error::Domain("SVD failed".into()))?;
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let d = if d == 0.0 { 1.0 } else { d };
    let correction = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d));
    let rotation = v * correction * u.transpose();
    let translation = cf - rotation * cm;
    Ok(Superposition { rotation, translation })
}

/// Minimum RMSD over rigid motions of `b` onto `a`.
pub fn kabsch_rmsd(a: &StructureTrace, b: &StructureTrace) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    if a.len() < 3 {
        return Err(Error::InvalidArgument("superposition needs at least 3 residues".into()));
    }
    let pa: Vec<_> = (0..a.len()).map(|i| a.point(i)).collect();
    let pb: Vec<_> = (0..b.len()).map(|i| b.point(i)).collect();
    let sup = kabsch(&pa, &pb)?;
    let sq: f64 = pa.iter().zip(&pb).map(|(x, y)| (x - sup.apply(y)).norm_squared()).sum();
    Ok((sq / pa.len() as f64).sqrt())
}

/// TM-score distance scale for a target of `l_target` residues.
pub fn d0(l_target: usize) -> Result<f64> {
    if l_target <= 15 {
        return Err(Error::Domain(format!("d0 undefined for target length {l_target} <= 15")));
    }
    Ok(1.24 * ((l_target - 15) as f64).cbrt() - 1.8)
}

/// Sum term of the TM-score for given post-superposition distances.
pub fn tm_from_distances(distances: &[f64], l_target: usize) -> Result<f64> {
    let d0 = d0(l_target)?;
    let s: f64 = distances.iter().map(|d| 1.0 / (1.0 + (d / d0).powi(2))).sum();
    Ok(s / l_target as f64)
}

/// TM-score of `template` against `target` over the given `(target_idx, template_idx)` pairs,
/// superposing the paired residues by Kabsch.
pub fn tm_score(target: &StructureTrace, template: &StructureTrace, pairing: &[(usize, usize)]) -> Result<f64> {
    if pairing.is_empty() {
        return Err(Error::InvalidArgument("empty residue pairing".into()));
    }
    let l_target = target.len();
    d0(l_target)?;
    for &(i, j) in pairing {
        if i >= target.len() {
            return Err(Error::OutOfRange { index: i, limit: target.len() });
        }
        if j >= template.len() {
            return Err(Error::OutOfRange { index: j, limit: template.len() });
        }
    }
    let fixed: Vec<_> = pairing.iter().map(|&(i, _)| target.point(i)).collect();
    let mobile: Vec<_> = pairing.iter().map(|&(_, j)| template.point(j)).collect();
    let sup = kabsch(&fixed, &mobile)?;
    let distances: Vec<f64> = fixed.iter().zip(&mobile).map(|(f, m)| (f - sup.apply(m)).norm()).collect();
    tm_from_distances(&distances, l_target)
}

/// TM-score of two equal-length traces paired by index.
pub fn tm_score_aligned(target: &StructureTrace, template: &StructureTrace) -> Result<f64> {
    if target.len() != template.len() {
        return Err(Error::LengthMismatch {
            expected: target.len(),
            actual: template.len(),
        });
    }
    let pairing: Vec<(usize, usize)> = (0..target.len()).map(|i| (i, i)).collect();
    tm_score(target, template, &pairing)
}

pub fn mp_tm(traces: &[StructureTrace]) -> Result<f64> {
    mean_pairwise(traces, tm_score_aligned)
}

pub fn mp_rmsd(traces: &[StructureTrace]) -> Result<f64> {
    mean_pairwise(traces, kabsch_rmsd)
}

/// Residue frequencies over all positions of all sequences.
pub fn aa_frequency(seqs: &[Sequence], alphabet_size: usize) -> Result<Vec<f64>> {
    if seqs.is_empty() {
        return Err(Error::InvalidArgument("frequency of an empty set".into()));
    }
    let mut counts = vec![0u64; alphabet_size];
    let mut total = 0u64;
    for s in seqs {
        for &r in s.residues() {
            let slot = counts.get_mut(r as usize).ok_or(Error::OutOfRange {
                index: r as usize,
                limit: alphabet_size,
            })?;
            *slot += 1;
            total += 1;
        }
    }
    if total == 0 {
        return Err(Error::InvalidArgument("all sequences are empty".into()));
    }
    Ok(counts.into_iter().map(|c| c as f64 / total as f64).collect())
}

pub fn distribution_mae(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::LengthMismatch {
            expected: p.len(),
            actual: q.len(),
        });
    }
    if p.is_empty() {
        return Err(Error::InvalidArgument("empty distribution".into()));
    }
    Ok(p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>() / p.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    HigherBetter,
    LowerBetter,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint {
    pub score: f64,
    pub diversity: f64,
    pub label: String,
}

impl ParetoPoint {
    pub fn new(score: f64, diversity: f64, label: impl Into<String>) -> Self {
        Self {
            score,
            diversity,
            label: label.into(),
        }
    }
}

/// True when `a` is at least as good as `b` on both axes and strictly better on one.
pub fn dominates(a: &ParetoPoint, b: &ParetoPoint, direction: Direction) -> bool {
    let (da, db) = match direction {
        Direction::HigherBetter => (a.diversity, b.diversity),
        Direction::LowerBetter => (-a.diversity, -b.diversity),
    };
    a.score >= b.score && da >= db && (a.score > b.score || da > db)
}

/// Non-dominated subset of the points scoring at least `threshold`, in input order.
pub fn pareto_front(points: &[ParetoPoint], threshold: f64, direction: Direction) -> Vec<ParetoPoint> {
    let key = |p: &ParetoPoint| match direction {
        Direction::HigherBetter => p.diversity,
        Direction::LowerBetter => -p.diversity,
    };
    let mut idx: Vec<usize> = (0..points.len())
        .filter(|&i| points[i].score >= threshold && points[i].score.is_finite() && points[i].diversity.is_finite())
        .collect();
    idx.sort_by(|&a, &b| {
        points[b]
            .score
            .total_cmp(&points[a].score)
            .then(key(&points[b]).total_cmp(&key(&points[a])))
    });
    let mut keep = vec![false; points.len()];
    // Best diversity among points with strictly higher score than the current group.
    let mut best_above = f64::NEG_INFINITY;
    let mut g = 0;
    while g < idx.len() {
        let score = points[idx[g]].score;
        let mut end = g;
        while end < idx.len() && points[idx[end]].score == score {
            end += 1;
        }
        let group_best = key(&points[idx[g]]);
        if group_best > best_above {
            for &i in &idx[g..end] {
                if key(&points[i]) == group_best {
                    keep[i] = true;
                }
            }
            best_above = group_best;
        }
        g = end;
    }
    points
        .iter()
        .zip(keep)
        .filter_map(|(p, k)| k.then(|| p.clone()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::Rotation3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn s(x: &[u8]) -> Sequence {
        Sequence::from_indices(x.to_vec())
    }

    fn random_trace(n: usize, rng: &mut ChaCha8Rng) -> StructureTrace {
        StructureTrace::new((0..n).map(|_| [rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0)]).collect()).unwrap()
    }

    fn moved(t: &StructureTrace, axis: Vector3<f64>, angle: f64, shift: Vector3<f64>) -> StructureTrace {
        let r = Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle);
        StructureTrace::new(t.coords().iter().map(|c| (r * Vector3::from(*c) + shift).into()).collect()).unwrap()
    }

    #[test]
    fn mp_hd_examples() {
        // A=0, B=1
        assert_relative_eq!(mp_hd(&[s(&[0, 0]), s(&[0, 1]), s(&[1, 1])]).unwrap(), 4.0 / 3.0);
        assert_eq!(mp_hd(&[s(&[0, 0]), s(&[0, 0])]).unwrap(), 0.0);
        assert_relative_eq!(mp_hd(&[s(&[1, 1]), s(&[0, 0]), s(&[0, 1])]).unwrap(), 4.0 / 3.0);
        assert!(mp_hd(&[s(&[0])]).is_err());
        assert!(mp_hd(&[s(&[0]), s(&[0, 1])]).is_err());
    }

    #[test]
    fn d0_at_50() {
        assert_relative_eq!(d0(50).unwrap(), 1.24 * 35f64.cbrt() - 1.8, max_relative = 1e-15);
        assert!((d0(50).unwrap() - 2.2561).abs() < 1e-4);
        assert!(d0(15).is_err());
    }

    #[test]
    fn tm_identical_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = random_trace(30, &mut rng);
        assert_relative_eq!(tm_score_aligned(&t, &t).unwrap(), 1.0, epsilon = 1e-12);
        let m = moved(&t, Vector3::new(1.0, 2.0, 3.0), 1.1, Vector3::new(5.0, -2.0, 0.5));
        assert_relative_eq!(tm_score_aligned(&t, &m).unwrap(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn tm_all_at_d0_is_half() {
        let d = d0(40).unwrap();
        assert_relative_eq!(tm_from_distances(&vec![d; 40], 40).unwrap(), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn tm_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let short = random_trace(10, &mut rng);
        assert!(matches!(tm_score_aligned(&short, &short), Err(Error::Domain(_))));
        let t = random_trace(20, &mut rng);
        assert!(tm_score(&t, &t, &[]).is_err());
        assert!(tm_score(&t, &t, &[(0, 25)]).is_err());
    }

    #[test]
    fn rmsd_rigid_copy_is_zero_and_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_trace(25, &mut rng);
        let b = moved(&a, Vector3::new(-1.0, 0.3, 0.2), 2.5, Vector3::new(1.0, 1.0, 1.0));
        assert!(kabsch_rmsd(&a, &b).unwrap() < 1e-9);
        let c = random_trace(25, &mut rng);
        assert_relative_eq!(kabsch_rmsd(&a, &c).unwrap(), kabsch_rmsd(&c, &a).unwrap(), max_relative = 1e-10);
    }

    #[test]
    fn rmsd_is_not_fooled_by_reflection() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_trace(12, &mut rng);
        let mirror = StructureTrace::new(a.coords().iter().map(|c| [-c[0], c[1], c[2]]).collect()).unwrap();
        assert!(kabsch_rmsd(&a, &mirror).unwrap() > 0.1);
    }

    #[test]
    fn collinear_points_still_superpose() {
        let a = StructureTrace::new((0..5).map(|i| [i as f64, 0.0, 0.0]).collect()).unwrap();
        let b = moved(&a, Vector3::new(0.0, 0.0, 1.0), 0.7, Vector3::new(3.0, 0.0, 0.0));
        assert!(kabsch_rmsd(&a, &b).unwrap() < 1e-9);
    }

    #[test]
    fn mp_structure_identical_set() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let t = random_trace(20, &mut rng);
        let set = vec![t.clone(), t.clone(), t];
        assert_relative_eq!(mp_tm(&set).unwrap(), 1.0, epsilon = 1e-12);
        assert!(mp_rmsd(&set).unwrap() < 1e-9);
        assert!(mp_rmsd(&set[..1]).is_err());
    }

    #[test]
    fn frequency_and_mae() {
        let f = aa_frequency(&[s(&[0, 0, 1])], 20).unwrap();
        assert_relative_eq!(f[0], 2.0 / 3.0);
        assert_relative_eq!(f[1], 1.0 / 3.0);
        assert_relative_eq!(f.iter().sum::<f64>(), 1.0);
        assert!(aa_frequency(&[], 20).is_err());
        let uniform = vec![1.0 / 20.0; 20];
        let mut point = vec![0.0; 20];
        point[0] = 1.0;
        assert_relative_eq!(distribution_mae(&uniform, &point).unwrap(), 0.095, epsilon = 1e-15);
        assert_eq!(distribution_mae(&uniform, &uniform).unwrap(), 0.0);
    }

    #[test]
    fn pareto_examples() {
        let one = vec![ParetoPoint::new(0.6, 1.0, "a")];
        assert_eq!(pareto_front(&one, 0.5, Direction::HigherBetter), one);
        let two = vec![ParetoPoint::new(0.6, 1.0, "a"), ParetoPoint::new(0.7, 2.0, "b")];
        assert_eq!(pareto_front(&two, 0.5, Direction::HigherBetter), vec![two[1].clone()]);
        // Lower diversity wins when lower is better.
        assert_eq!(pareto_front(&two, 0.5, Direction::LowerBetter), two);
        assert!(pareto_front(&two, 0.8, Direction::HigherBetter).is_empty());
    }
}
