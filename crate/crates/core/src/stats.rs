//! Per-subcorpus token accounting.

use std::collections::BTreeMap;

use rayon::prelude::*;
use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::document::Document;
use crate::tokenizer::ExtendedVocab;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CorpusStats {
    pub per_subcorpus: BTreeMap<String, u64>,
    pub total_tokens: u64,
    /// Share of `total_tokens` per subcorpus, as a fraction in [0, 1].
    pub percentages: BTreeMap<String, f64>,
}

impl CorpusStats {
    /// Builds stats from raw counts; repeated names are summed.
    pub fn from_counts<S: Into<String>>(counts: impl IntoIterator<Item = (S, u64)>) -> Self {
        let mut acc = StatsAccumulator::default();
        for (name, n) in counts {
            acc.add(name, n);
        }
        acc.finish()
    }

    /// Percentages in percentage points, rounded to `decimals` places.
    pub fn rounded_percent_points(&self, decimals: u32) -> BTreeMap<String, f64> {
        let scale = 10f64.powi(decimals as i32);
        self.percentages
            .iter()
            .map(|(k, &f)| (k.clone(), (f * 100.0 * scale).round() / scale))
            .collect()
    }
}

/// Order-independent accumulator; shards can be merged in any order.
#[derive(Debug, Clone, Default)]
pub struct StatsAccumulator {
    counts: BTreeMap<String, u64>,
}

impl StatsAccumulator {
    pub fn add(&mut self, name: impl Into<String>, tokens: u64) {
        *self.counts.entry(name.into()).or_insert(0) += tokens;
    }

    pub fn merge(mut self, other: StatsAccumulator) -> Self {
        for (k, v) in other.counts {
            *self.counts.entry(k).or_insert(0) += v;
        }
        self
    }

    pub fn finish(self) -> CorpusStats {
        let total: u64 = self.counts.values().sum();
        let percentages = if total == 0 {
            BTreeMap::new()
        } else {
            self.counts.iter().map(|(k, &v)| (k.clone(), v as f64 / total as f64)).collect()
        };
        CorpusStats { per_subcorpus: self.counts, total_tokens: total, percentages }
    }
}

/// Token counts grouped by `Document::dataset`.
pub fn corpus_stats(docs: &[Document], tokenizer: &ExtendedVocab) -> CorpusStats {
    corpus_stats_by(docs, tokenizer, |d| d.dataset.clone())
}

/// Token counts grouped by an arbitrary subcorpus key.
pub fn corpus_stats_by<F>(docs: &[Document], tokenizer: &ExtendedVocab, key: F) -> CorpusStats
where
    F: Fn(&Document) -> String + Sync,
{
    let encoder = tokenizer.encoder();
    docs.par_chunks(256)
        .map(|chunk| {
            let mut cache = FxHashMap::default();
            let mut acc = StatsAccumulator::default();
            for d in chunk {
                acc.add(key(d), encoder.count_tokens(&d.text, &mut cache));
            }
            acc
        })
        .reduce(StatsAccumulator::default, StatsAccumulator::merge)
        .finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::Vocab;
    use proptest::prelude::*;

    #[test]
    fn single_subcorpus_is_everything() {
        let s = CorpusStats::from_counts([("greek", 17u64)]);
        assert_eq!(s.percentages["greek"], 1.0);
        assert_eq!(s.total_tokens, 17);
    }

    #[test]
    fn empty_stream_gives_zero_totals() {
        let v = ExtendedVocab::from(Vocab::byte_level());
        let s = corpus_stats(&[], &v);
        assert_eq!(s.total_tokens, 0);
        assert!(s.per_subcorpus.is_empty());
    }

    #[test]
    fn hand_counted_byte_tokens() {
        // byte-level vocab: one token per UTF-8 byte
        let v = ExtendedVocab::from(Vocab::byte_level());
        let docs = vec![
            Document::new("1", "ab c").with_dataset("en"),
            Document::new("2", "αβ").with_dataset("el"),
            Document::new("3", "x").with_dataset("en"),
        ];
        let s = corpus_stats(&docs, &v);
        assert_eq!(s.per_subcorpus["en"], 5);
        assert_eq!(s.per_subcorpus["el"], 4);
        assert_eq!(s.total_tokens, 9);
    }

    proptest! {
        #[test]
        fn percentages_sum_to_one(counts in proptest::collection::vec(1u64..1_000_000_000_000, 1..6)) {
            let s = CorpusStats::from_counts(counts.iter().enumerate().map(|(i, &c)| (format!("s{i}"), c)));
            let sum: f64 = s.percentages.values().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-9);
            prop_assert_eq!(s.total_tokens, counts.iter().sum::<u64>());
        }

        #[test]
        fn accumulation_is_order_independent(mut counts in proptest::collection::vec((0u8..4, 0u64..1000), 0..20)) {
            let a = CorpusStats::from_counts(counts.iter().map(|&(k, v)| (k.to_string(), v)));
            counts.reverse();
            let half = counts.len() / 2;
            let (x, y) = counts.split_at(half);
            let mut ax = StatsAccumulator::default();
            x.iter().for_each(|&(k, v)| ax.add(k.to_string(), v));
            let mut ay = StatsAccumulator::default();
            y.iter().for_each(|&(k, v)| ay.add(k.to_string(), v));
            prop_assert_eq!(a, ay.merge(ax).finish());
        }

        #[test]
        fn rounding_keeps_the_largest_subcorpus(counts in proptest::collection::vec(1u64..1_000_000, 2..6)) {
            let s = CorpusStats::from_counts(counts.iter().enumerate().map(|(i, &c)| (format!("s{i}"), c)));
            let rounded = s.rounded_percent_points(1);
            let argmax = s.percentages.iter().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
            let best = rounded[argmax];
            prop_assert!(rounded.values().all(|&v| v <= best));
        }
    }
}
