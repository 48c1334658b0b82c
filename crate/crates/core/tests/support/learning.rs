//! Finite-difference and brute-force oracles for the neural controller and
//! the pattern miner.

use std::collections::BTreeSet;

use orgami_core::anc::{Dataset, Mlp, Sample};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn random_dataset(rng: &mut ChaCha8Rng, n: usize, i: usize, o: usize) -> Dataset {
    Dataset::new(
        (0..n)
            .map(|_| Sample {
                context: (0..i).map(|_| rng.random_range(-1.0..1.0)).collect(),
                next: (0..o).map(|_| rng.random_range(-1.0..1.0)).collect(),
            })
            .collect(),
    )
}

/// Central difference of the loss in every parameter.
pub fn numeric_gradient(net: &Mlp, ds: &Dataset, step: f64) -> Vec<f64> {
    let mut probe = net.clone();
    let p = net.params();
    (0..p.len())
        .map(|k| {
            let mut q = p.clone();
            q[k] = p[k] + step;
            probe.set_params(&q);
            let up = probe.loss(ds).unwrap();
            q[k] = p[k] - step;
            probe.set_params(&q);
            let down = probe.loss(ds).unwrap();
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// Relative error with a floor so that tiny gradients compare absolutely.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-4)
}

/// Every itemset over the universe whose count meets `min_support`, with
/// its count, sorted.
pub fn brute_force_itemsets<T: Ord + Clone>(
    t: &[BTreeSet<T>],
    min_support: f64,
) -> Vec<(Vec<T>, usize)> {
    let universe: Vec<T> = t
        .iter()
        .flatten()
        .cloned()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    assert!(universe.len() < 32, "universe too large to enumerate");
    let mut out = Vec::new();
    for mask in 1u32..(1 << universe.len()) {
        let set: Vec<T> = (0..universe.len())
            .filter(|i| mask & (1 << i) != 0)
            .map(|i| universe[i].clone())
            .collect();
        let c = t
            .iter()
            .filter(|tr| set.iter().all(|i| tr.contains(i)))
            .count();
        if c as f64 >= min_support * t.len() as f64 - 1e-9 {
            out.push((set, c));
        }
    }
    out.sort();
    out
}

/// Every one-smaller subset of every itemset is itself in the family.
pub fn is_downward_closed<T: Ord + Clone>(sets: &BTreeSet<Vec<T>>) -> bool {
    sets.iter().all(|items| {
        (0..items.len()).all(|skip| {
            let mut sub = items.clone();
            sub.remove(skip);
            sub.is_empty() || sets.contains(&sub)
        })
    })
}
