use std::borrow::Borrow;

use rayon::prelude::*;
use rustc_hash::{FxHashMap, FxHashSet};

use super::minhash::{exact_jaccard_sorted, Signature};
use super::union_find::UnionFind;

/// Probability that two documents with Jaccard similarity `s` share at least one band.
pub fn collision_probability(s: f64, bands: usize, rows: usize) -> f64 {
    1.0 - (1.0 - s.powi(rows as i32)).powi(bands as i32)
}

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, intervals: usize) -> f64 {
    if b <= a {
        return 0.0;
    }
    let n = intervals + intervals % 2;
    let h = (b - a) / n as f64;
    let mut sum = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        sum += w * f(a + i as f64 * h);
    }
    sum * h / 3.0
}

pub fn false_positive_area(threshold: f64, bands: usize, rows: usize) -> f64 {
    simpson(|s| collision_probability(s, bands, rows), 0.0, threshold, 1000)
}

pub fn false_negative_area(threshold: f64, bands: usize, rows: usize) -> f64 {
    simpson(|s| 1.0 - collision_probability(s, bands, rows), threshold, 1.0, 1000)
}

/// The (bands, rows) with `bands * rows <= num_perm` minimizing the sum of
/// false-positive and false-negative areas under the collision curve.
/// Ties go to more bands.
pub fn optimal_bands(num_perm: usize, threshold: f64) -> (usize, usize) {
    assert!(num_perm >= 1, "num_perm must be positive");
    assert!(threshold > 0.0 && threshold < 1.0, "threshold must be in (0, 1)");
    let mut best = (1, 1);
    let mut best_err = f64::INFINITY;
    for b in 1..=num_perm {
        for r in 1..=num_perm / b {
            let err = false_positive_area(threshold, b, r) + false_negative_area(threshold, b, r);
            if err < best_err - 1e-12 || ((err - best_err).abs() <= 1e-12 && b > best.0) {
                best = (b, r);
                best_err = err;
            }
        }
    }
    best
}

/// Groups documents whose signatures collide in at least one band.
///
/// With `verify` set, a colliding pair is only joined when the exact Jaccard
/// similarity of its shingle-hash sets reaches `threshold`. Empty-set
/// signatures never join anything. Returns clusters of size two or more,
/// each sorted, ordered by their smallest index.
pub fn cluster<S, V>(signatures: &[S], bands: usize, rows: usize, verify: Option<(&[V], f64)>) -> Vec<Vec<usize>>
where
    S: Borrow<Signature> + Sync,
    V: AsRef<[u64]> + Sync,
{
    let n = signatures.len();
    let live: Vec<bool> = signatures.iter().map(|s| !s.borrow().is_empty_set()).collect();
    assert!(
        signatures.iter().all(|s| s.borrow().num_perm() >= bands * rows),
        "signature shorter than bands * rows"
    );

    // one bucket table per band, built in parallel; emission order is fixed by band then index
    let per_band: Vec<Vec<Vec<u32>>> = (0..bands)
        .into_par_iter()
        .map(|band| {
            let lo = band * rows;
            let mut buckets: FxHashMap<&[u64], Vec<u32>> = FxHashMap::default();
            for (i, sig) in signatures.iter().enumerate() {
                if live[i] {
                    buckets.entry(&sig.borrow().values[lo..lo + rows]).or_default().push(i as u32);
                }
            }
            let mut groups: Vec<Vec<u32>> = buckets.into_values().filter(|g| g.len() > 1).collect();
            groups.sort_unstable_by_key(|g| g[0]);
            groups
        })
        .collect();

    let mut uf = UnionFind::new(n);
    match verify {
        None => {
            for groups in &per_band {
                for g in groups {
                    for &m in &g[1..] {
                        uf.union(g[0] as usize, m as usize);
                    }
                }
            }
        }
        Some((sets, threshold)) => {
            let mut pairs: FxHashSet<(u32, u32)> = FxHashSet::default();
            for groups in &per_band {
                for g in groups {
                    for (k, &a) in g.iter().enumerate() {
                        for &b in &g[k + 1..] {
                            pairs.insert((a, b));
                        }
                    }
                }
            }
            let mut pairs: Vec<(u32, u32)> = pairs.into_iter().collect();
            pairs.sort_unstable();
            let accepted: Vec<bool> = pairs
                .par_iter()
                .map(|&(a, b)| exact_jaccard_sorted(sets[a as usize].as_ref(), sets[b as usize].as_ref()) >= threshold)
                .collect();
            for (&(a, b), ok) in pairs.iter().zip(accepted) {
                if ok {
                    uf.union(a as usize, b as usize);
                }
            }
        }
    }
    uf.groups()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_permutation() {
        assert_eq!(optimal_bands(1, 0.5), (1, 1));
        assert_eq!(optimal_bands(1, 0.9), (1, 1));
    }

    #[test]
    fn s_curve_midpoint_identity() {
        let (b, r) = optimal_bands(128, 0.8);
        let s = (1.0 / b as f64).powf(1.0 / r as f64);
        let expected = 1.0 - (1.0 - 1.0 / b as f64).powi(b as i32);
        assert!((collision_probability(s, b, r) - expected).abs() < 1e-12);
    }

    #[test]
    fn simpson_is_exact_on_cubics() {
        assert!((simpson(|x| x * x * x, 0.0, 1.0, 10) - 0.25).abs() < 1e-15);
    }
}
