//! Graph generators and the centralized voting oracle.

use std::collections::BTreeSet;

use orgami_core::netsim::Topology;
use orgami_core::voting::PreferenceProfile;
use orgami_core::CellId;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn names(n: usize) -> Vec<CellId> {
    (0..n)
        .map(|i| CellId::new(format!("n{i}")).unwrap())
        .collect()
}

/// Random spanning tree plus extra edges.
pub fn random_connected(n: usize, extra: usize, seed: u64) -> Topology {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = BTreeSet::new();
    for v in 1..n {
        let u = rng.random_range(0..v);
        edges.insert((u, v));
    }
    for _ in 0..extra {
        let (u, v) = (rng.random_range(0..n), rng.random_range(0..n));
        if u != v {
            edges.insert((u.min(v), u.max(v)));
        }
    }
    Topology::custom(names(n), &edges.into_iter().collect::<Vec<_>>()).unwrap()
}

/// Column means computed directly over the profile.
pub fn column_means(p: &PreferenceProfile) -> Vec<f64> {
    let n = p.rows().len() as f64;
    let k = p.rows()[0].len();
    (0..k)
        .map(|c| p.rows().iter().map(|r| r[c]).sum::<f64>() / n)
        .collect()
}

/// Centralized winner (1-based) and its margin over the runner-up.
pub fn mean_argmax(p: &PreferenceProfile) -> (usize, f64) {
    let means = column_means(p);
    let mut order: Vec<usize> = (0..means.len()).collect();
    order.sort_by(|&a, &b| means[b].total_cmp(&means[a]));
    (order[0] + 1, means[order[0]] - means[order[1]])
}

/// First random 10 x 10 profile from `seed * 1000` on whose true margin
/// exceeds `min_margin`.
pub fn margin_profile(seed: u64, min_margin: f64) -> PreferenceProfile {
    (seed * 1000..)
        .map(|s| PreferenceProfile::random(10, 10, s).unwrap())
        .find(|p| mean_argmax(p).1 > min_margin)
        .unwrap()
}

pub fn median(mut v: Vec<usize>) -> f64 {
    v.sort_unstable();
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2] as f64
    } else {
        (v[n / 2 - 1] + v[n / 2]) as f64 / 2.0
    }
}
