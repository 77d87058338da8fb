//! Exhaustive enumeration of small landscapes.

use seqopt::oracle::{twin_landscapes, LandscapeParams, PottsLandscape, Scorer};
use seqopt::seq::hamming;
use seqopt::Sequence;

fn enumerate(len: usize, la: usize) -> Vec<Sequence> {
    (0..la.pow(len as u32))
        .map(|mut k| {
            let mut r = vec![0u8; len];
            for slot in r.iter_mut().rev() {
                *slot = (k % la) as u8;
                k /= la;
            }
            Sequence::from_indices(r)
        })
        .collect()
}

fn argmax(scores: &[f64]) -> usize {
    (0..scores.len()).max_by(|&a, &b| scores[a].total_cmp(&scores[b])).unwrap()
}

#[test]
fn exact_moments_at_six_by_four() {
    let all = enumerate(6, 4);
    for seed in 1..=3 {
        let l = PottsLandscape::generate(6, 4, seed, &LandscapeParams::default()).unwrap();
        let e: Vec<f64> = all.iter().map(|s| l.energy(s).unwrap()).collect();
        let n = e.len() as f64;
        let mean = e.iter().sum::<f64>() / n;
        let std = (e.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!((mean - l.energy_mean()).abs() < 1e-10);
        assert!((std - l.energy_std()).abs() < 1e-10);
    }
}

#[test]
fn twin_optima_diverge() {
    for (len, la) in [(4, 4), (6, 4)] {
        let all = enumerate(len, la);
        for seed in 1..=10 {
            let (oracle, decoy) = twin_landscapes(len, la, seed, &LandscapeParams::default()).unwrap();
            let so = oracle.scores(&all).unwrap();
            let sd = decoy.scores(&all).unwrap();
            let (xo, xd) = (argmax(&so), argmax(&sd));
            assert!(hamming(&all[xo], &all[xd]).unwrap() >= 2, "seed {seed}");
            // The decoy's favourite looks better to the decoy than to the oracle.
            assert!(sd[xd] > so[xd], "seed {seed}");
            assert!(so[xd] < so[xo]);
        }
    }
}
