//! Seeded stratified splitting.
//!
//! Items are grouped by a stratum key, each group is shuffled once, and the
//! group is dealt to the requested partitions. Group keys are visited in
//! sorted order, so results depend only on the item set and the seed.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::rng::rng_from_seed;

/// Splits `items` into `fractions.len()` parts, preserving each stratum's
/// proportions. Within a stratum, part sizes are `floor(n * f)` plus one for
/// the largest fractional remainders (ties go to the earlier part).
pub fn stratified_split<T: Clone, K: Ord>(
    items: &[T],
    key: impl Fn(&T) -> K,
    fractions: &[f64],
    seed: u64,
) -> Vec<Vec<T>> {
    let total: f64 = fractions.iter().sum();
    assert!(
        (total - 1.0).abs() < 1e-9 && fractions.iter().all(|&f| f >= 0.0),
        "fractions must be nonnegative and sum to one"
    );
    let mut groups: BTreeMap<K, Vec<T>> = BTreeMap::new();
    for item in items {
        groups.entry(key(item)).or_default().push(item.clone());
    }
    let mut rng = rng_from_seed(seed);
    let mut parts: Vec<Vec<T>> = fractions.iter().map(|_| Vec::new()).collect();
    for (_, mut group) in groups {
        group.shuffle(&mut rng);
        let n = group.len();
        let mut counts: Vec<usize> = fractions.iter().map(|f| (f * n as f64) as usize).collect();
        let assigned: usize = counts.iter().sum();
        // Distribute the remainder by largest fractional part.
        let mut order: Vec<usize> = (0..fractions.len()).collect();
        order.sort_by(|&a, &b| {
            let fa = fractions[a] * n as f64 - counts[a] as f64;
            let fb = fractions[b] * n as f64 - counts[b] as f64;
            fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
        });
        for i in 0..n - assigned {
            counts[order[i]] += 1;
        }
        let mut it = group.into_iter();
        for (part, &c) in parts.iter_mut().zip(counts.iter()) {
            part.extend(it.by_ref().take(c));
        }
    }
    parts
}

/// Deals each stratum round-robin into `k` folds after a seeded shuffle.
/// Fold sizes differ by at most one per stratum.
pub fn stratified_kfold<T: Clone, K: Ord>(
    items: &[T],
    key: impl Fn(&T) -> K,
    k: usize,
    seed: u64,
) -> Vec<Vec<T>> {
    assert!(k >= 2, "need at least two folds");
    let mut groups: BTreeMap<K, Vec<T>> = BTreeMap::new();
    for item in items {
        groups.entry(key(item)).or_default().push(item.clone());
    }
    let mut rng = rng_from_seed(seed);
    let mut folds: Vec<Vec<T>> = (0..k).map(|_| Vec::new()).collect();
    for (_, mut group) in groups {
        group.shuffle(&mut rng);
        for (i, item) in group.into_iter().enumerate() {
            folds[i % k].push(item);
        }
    }
    folds
}
