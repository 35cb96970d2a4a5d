use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustc_hash::{FxHashMap, FxHashSet};
use serde::{Deserialize, Serialize};

use super::{bytes, pretokenize, Vocab};
use crate::document::Document;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BpeTrainConfig {
    /// Number of merges (and therefore new tokens) to learn.
    pub target_new_tokens: usize,
    /// Pairs seen fewer times than this are never merged.
    pub min_pair_count: u64,
    /// Only used when `max_documents` subsamples the corpus.
    pub seed: u64,
    pub max_documents: Option<usize>,
}

impl Default for BpeTrainConfig {
    fn default() -> Self {
        Self { target_new_tokens: 1000, min_pair_count: 2, seed: 0, max_documents: None }
    }
}

#[derive(Eq, PartialEq)]
struct Candidate {
    count: u64,
    left: Vec<u8>,
    right: Vec<u8>,
    pair: (u32, u32),
}

impl Ord for Candidate {
    // max-heap: highest count first, then the lexicographically smallest pair
    fn cmp(&self, other: &Self) -> Ordering {
        self.count
            .cmp(&other.count)
            .then_with(|| other.left.cmp(&self.left))
            .then_with(|| other.right.cmp(&self.right))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn pairs_of(word: &[u32]) -> impl Iterator<Item = (u32, u32)> + '_ {
    word.windows(2).map(|w| (w[0], w[1]))
}

fn merge_word(word: &[u32], pair: (u32, u32), new_id: u32) -> Vec<u32> {
    let mut out = Vec::with_capacity(word.len());
    let mut i = 0;
    while i < word.len() {
        if i + 1 < word.len() && word[i] == pair.0 && word[i + 1] == pair.1 {
            out.push(new_id);
            i += 2;
        } else {
            out.push(word[i]);
            i += 1;
        }
    }
    out
}

/// Learns byte-level BPE merges greedily by pair frequency.
///
/// Ties between equally frequent pairs go to the pair whose (left, right)
/// byte strings sort first. Returns fewer than `target_new_tokens` merges
/// (with a warning) when the corpus runs out of pairs.
pub fn train_bpe(corpus: &[Document], cfg: &BpeTrainConfig) -> Vocab {
    let docs: Vec<&Document> = match cfg.max_documents {
        Some(max) if max < corpus.len() => {
            let mut idx: Vec<usize> = (0..corpus.len()).collect();
            idx.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
            idx.truncate(max);
            idx.sort_unstable();
            idx.into_iter().map(|i| &corpus[i]).collect()
        }
        _ => corpus.iter().collect(),
    };

    let chunk_counts: FxHashMap<&str, u64> = docs
        .par_iter()
        .fold(FxHashMap::default, |mut acc: FxHashMap<&str, u64>, d| {
            for chunk in pretokenize(&d.text) {
                *acc.entry(chunk).or_insert(0) += 1;
            }
            acc
        })
        .reduce(FxHashMap::default, |mut a, b| {
            for (k, v) in b {
                *a.entry(k).or_insert(0) += v;
            }
            a
        });
    // stable order so word indices (and hence everything downstream) are reproducible
    let mut chunks: Vec<(&str, u64)> = chunk_counts.into_iter().collect();
    chunks.sort_unstable();

    let mut token_bytes: Vec<Vec<u8>> = (0..=255u8).map(|b| vec![b]).collect();
    let mut words: Vec<Vec<u32>> = chunks.iter().map(|(c, _)| c.bytes().map(u32::from).collect()).collect();
    let counts: Vec<u64> = chunks.iter().map(|&(_, n)| n).collect();

    let mut pair_counts: FxHashMap<(u32, u32), u64> = FxHashMap::default();
    let mut pair_words: FxHashMap<(u32, u32), FxHashSet<u32>> = FxHashMap::default();
    for (wi, word) in words.iter().enumerate() {
        for p in pairs_of(word) {
            *pair_counts.entry(p).or_insert(0) += counts[wi];
            pair_words.entry(p).or_default().insert(wi as u32);
        }
    }

    let candidate = |pair: (u32, u32), count: u64, token_bytes: &[Vec<u8>]| Candidate {
        count,
        left: token_bytes[pair.0 as usize].clone(),
        right: token_bytes[pair.1 as usize].clone(),
        pair,
    };
    let mut heap: BinaryHeap<Candidate> =
        pair_counts.iter().map(|(&p, &c)| candidate(p, c, &token_bytes)).collect();

    let mut merges: Vec<(u32, u32)> = Vec::with_capacity(cfg.target_new_tokens);
    while merges.len() < cfg.target_new_tokens {
        let Some(top) = heap.pop() else { break };
        let current = pair_counts.get(&top.pair).copied().unwrap_or(0);
        if current != top.count {
            if current > 0 {
                heap.push(candidate(top.pair, current, &token_bytes));
            }
            continue;
        }
        if current < cfg.min_pair_count.max(1) {
            break;
        }

        let new_id = token_bytes.len() as u32;
        let mut merged = token_bytes[top.pair.0 as usize].clone();
        merged.extend_from_slice(&token_bytes[top.pair.1 as usize]);
        token_bytes.push(merged);
        merges.push(top.pair);

        let mut affected: Vec<u32> = pair_words.remove(&top.pair).unwrap_or_default().into_iter().collect();
        affected.sort_unstable();
        let mut touched: FxHashSet<(u32, u32)> = FxHashSet::default();
        for wi in affected {
            let w = wi as usize;
            let old = &words[w];
            if !pairs_of(old).any(|p| p == top.pair) {
                continue;
            }
            let new = merge_word(old, top.pair, new_id);
            for p in pairs_of(old) {
                if let Some(c) = pair_counts.get_mut(&p) {
                    *c -= counts[w];
                }
                touched.insert(p);
            }
            for p in pairs_of(&new) {
                *pair_counts.entry(p).or_insert(0) += counts[w];
                pair_words.entry(p).or_default().insert(wi);
                touched.insert(p);
            }
            words[w] = new;
        }
        pair_counts.remove(&top.pair);
        let mut touched: Vec<_> = touched.into_iter().collect();
        touched.sort_unstable();
        for p in touched {
            match pair_counts.get(&p).copied() {
                Some(0) => {
                    pair_counts.remove(&p);
                }
                Some(c) => heap.push(candidate(p, c, &token_bytes)),
                None => {}
            }
        }
    }

    if merges.len() < cfg.target_new_tokens {
        log::warn!(
            "corpus only supports {} of the requested {} merges",
            merges.len(),
            cfg.target_new_tokens
        );
    }

    let mut vocab = Vocab::byte_level();
    let as_token = |id: u32| bytes::bytes_to_token(&token_bytes[id as usize]);
    for (i, &(l, r)) in merges.iter().enumerate() {
        vocab.tokens.push(as_token(256 + i as u32));
        vocab.merges.push((as_token(l), as_token(r)));
    }
    // merged byte strings are unique, so token strings are too
    Vocab::new(vocab.tokens, vocab.merges, true).expect("trained vocabulary is consistent")
}
