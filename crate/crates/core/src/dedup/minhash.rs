use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xxhash_rust::xxh3::xxh3_64_with_seed;

use super::DedupError;

/// Lowercases and collapses whitespace, returning the words.
fn normalized_words(text: &str) -> Vec<String> {
    text.split_whitespace().map(|w| w.to_lowercase()).collect()
}

fn for_each_shingle(text: &str, n: usize, mut f: impl FnMut(&str)) {
    assert!(n >= 1, "shingle size must be at least 1");
    let words = normalized_words(text);
    if words.is_empty() {
        return;
    }
    if words.len() < n {
        f(&words.join(" "));
        return;
    }
    let mut buf = String::new();
    for window in words.windows(n) {
        buf.clear();
        for (i, w) in window.iter().enumerate() {
            if i > 0 {
                buf.push(' ');
            }
            buf.push_str(w);
        }
        f(&buf);
    }
}

/// Word n-grams of the lowercased, whitespace-normalized text. A text with
/// fewer than `n` words yields itself as the only shingle.
pub fn shingle(text: &str, n: usize) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    for_each_shingle(text, n, |s| {
        out.insert(s.to_string());
    });
    out
}

/// Seeded 64-bit hashes of the shingles, sorted and deduplicated.
pub fn shingle_hashes(text: &str, n: usize, seed: u64) -> Vec<u64> {
    let mut out = Vec::new();
    for_each_shingle(text, n, |s| out.push(xxh3_64_with_seed(s.as_bytes(), seed)));
    out.sort_unstable();
    out.dedup();
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Signature {
    pub values: Box<[u64]>,
    pub seed: u64,
}

impl Signature {
    pub fn num_perm(&self) -> usize {
        self.values.len()
    }

    /// Sentinel signature of an empty shingle set: every slot is `u64::MAX`.
    pub fn is_empty_set(&self) -> bool {
        self.values.iter().all(|&v| v == u64::MAX)
    }
}

/// Multiply-add-shift hashes `h(x) = ((a x + b) mod 2^128) >> 64` over the
/// seeded base hash of each shingle.
#[derive(Debug, Clone)]
pub struct MinHasher {
    params: Vec<(u128, u128)>,
    seed: u64,
}

impl MinHasher {
    pub fn new(num_perm: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = (0..num_perm).map(|_| (rng.random::<u128>() | 1, rng.random::<u128>())).collect();
        Self { params, seed }
    }

    pub fn num_perm(&self) -> usize {
        self.params.len()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn signature_of_hashes(&self, hashes: &[u64]) -> Signature {
        let mut mins = vec![u64::MAX; self.params.len()];
        for &x in hashes {
            let x = x as u128;
            for (m, &(a, b)) in mins.iter_mut().zip(&self.params) {
                let h = (a.wrapping_mul(x).wrapping_add(b) >> 64) as u64;
                if h < *m {
                    *m = h;
                }
            }
        }
        Signature { values: mins.into_boxed_slice(), seed: self.seed }
    }

    pub fn signature_of_set<S: AsRef<str>>(&self, shingles: impl IntoIterator<Item = S>) -> Signature {
        let mut hashes: Vec<u64> =
            shingles.into_iter().map(|s| xxh3_64_with_seed(s.as_ref().as_bytes(), self.seed)).collect();
        hashes.sort_unstable();
        hashes.dedup();
        self.signature_of_hashes(&hashes)
    }

    pub fn signature_of_text(&self, text: &str, shingle_n: usize) -> Signature {
        self.signature_of_hashes(&shingle_hashes(text, shingle_n, self.seed))
    }
}

/// Fraction of slots where the two signatures agree.
pub fn estimate_jaccard(a: &Signature, b: &Signature) -> Result<f64, DedupError> {
    if a.num_perm() != b.num_perm() || a.seed != b.seed {
        return Err(DedupError::SignatureMismatch);
    }
    if a.num_perm() == 0 {
        return Ok(0.0);
    }
    let same = a.values.iter().zip(b.values.iter()).filter(|(x, y)| x == y).count();
    Ok(same as f64 / a.num_perm() as f64)
}

/// Exact Jaccard similarity of two sorted, deduplicated slices.
pub fn exact_jaccard_sorted(a: &[u64], b: &[u64]) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 0.0;
    }
    let (mut i, mut j, mut inter) = (0, 0, 0usize);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    inter as f64 / (a.len() + b.len() - inter) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sliding_window_shingles() {
        let s = shingle("a b c d e f", 5);
        assert_eq!(s, BTreeSet::from(["a b c d e".to_string(), "b c d e f".to_string()]));
        assert_eq!(shingle("a b c", 5), BTreeSet::from(["a b c".to_string()]));
        assert!(shingle("  \n", 5).is_empty());
    }

    #[test]
    fn case_and_spacing_do_not_matter() {
        assert_eq!(shingle("Το  Σπίτι είναι\tμεγάλο και ωραίο", 3), shingle("το σπίτι ΕΊΝΑΙ μεγάλο και ωραίο", 3));
        assert_eq!(shingle_hashes("A b  c d e f", 5, 3), shingle_hashes("a B c d e F", 5, 3));
    }

    #[test]
    fn empty_set_gives_sentinel() {
        let h = MinHasher::new(16, 1);
        let s = h.signature_of_text("", 5);
        assert!(s.is_empty_set());
        assert!(!h.signature_of_text("x", 5).is_empty_set());
    }

    #[test]
    fn self_similarity_and_counting() {
        let h = MinHasher::new(128, 7);
        let a = h.signature_of_text("one two three four five six seven", 2);
        assert_eq!(estimate_jaccard(&a, &a).unwrap(), 1.0);
        let mut b = a.clone();
        for v in b.values.iter_mut().take(64) {
            *v = v.wrapping_add(1);
        }
        assert_eq!(estimate_jaccard(&a, &b).unwrap(), 0.5);
        let other = MinHasher::new(128, 8).signature_of_text("one", 2);
        assert!(estimate_jaccard(&a, &other).is_err());
        let short = MinHasher::new(64, 7).signature_of_text("one", 2);
        assert!(estimate_jaccard(&a, &short).is_err());
    }

    #[test]
    fn disjoint_sets_estimate_near_zero() {
        let h = MinHasher::new(128, 0);
        let a = h.signature_of_set((0..1000).map(|i| format!("a{i}")));
        let b = h.signature_of_set((0..1000).map(|i| format!("b{i}")));
        assert!(estimate_jaccard(&a, &b).unwrap() <= 0.1);
    }

    #[test]
    fn exact_jaccard_counts() {
        assert_eq!(exact_jaccard_sorted(&[1, 2, 3], &[2, 3, 4]), 0.5);
        assert_eq!(exact_jaccard_sorted(&[], &[]), 0.0);
        assert_eq!(exact_jaccard_sorted(&[1], &[1]), 1.0);
    }
}
