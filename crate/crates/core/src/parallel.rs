//! Sentence-pair cleanup: normalization, either-side deduplication and
//! thresholding on externally computed pair scores.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::OnceLock;

use rayon::prelude::*;
use regex::Regex;
use rustc_hash::FxHashSet;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;
use xxhash_rust::xxh3::xxh3_128;

#[derive(Debug, Error)]
pub enum ParallelError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentencePair {
    pub src: String,
    pub tgt: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub scores: BTreeMap<String, f64>,
    #[serde(default)]
    pub origin: String,
}

impl SentencePair {
    pub fn new(src: impl Into<String>, tgt: impl Into<String>) -> Self {
        Self { src: src.into(), tgt: tgt.into(), scores: BTreeMap::new(), origin: String::new() }
    }

    pub fn with_score(mut self, name: impl Into<String>, value: f64) -> Self {
        self.scores.insert(name.into(), value);
        self
    }

    pub fn with_origin(mut self, origin: impl Into<String>) -> Self {
        self.origin = origin.into();
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ParallelFilterConfig {
    pub margin_threshold: f64,
    pub classifier_threshold: f64,
    pub require_scores: bool,
    pub margin_key: String,
    pub classifier_key: String,
}

impl Default for ParallelFilterConfig {
    fn default() -> Self {
        Self {
            margin_threshold: 1.06,
            classifier_threshold: 0.7,
            require_scores: false,
            margin_key: "margin".into(),
            classifier_key: "classifier".into(),
        }
    }
}

fn strip_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"[\p{Nd}\p{P}]").expect("valid pattern"))
}

/// NFC, lowercase, drop decimal digits and punctuation, collapse whitespace.
pub fn normalize_sentence(text: &str) -> String {
    let lowered: String = text.nfc().collect::<String>().to_lowercase();
    let stripped = strip_pattern().replace_all(&lowered, "");
    // removal can leave a combining mark next to a new base character
    let recomposed: String = stripped.nfc().collect();
    recomposed.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn key(text: &str) -> u128 {
    xxh3_128(normalize_sentence(text).as_bytes())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ParallelDedupReport {
    pub input: usize,
    pub kept: usize,
    pub duplicate_source: usize,
    /// Pairs with a new source but an already seen target.
    pub duplicate_target: usize,
}

/// Keeps a pair only when neither its normalized source nor its normalized
/// target has been kept before. Seen sets hold 128-bit hashes of the
/// normalized text.
pub fn dedup_parallel(pairs: &[SentencePair]) -> (Vec<SentencePair>, ParallelDedupReport) {
    let keys: Vec<(u128, u128)> = pairs.par_iter().map(|p| (key(&p.src), key(&p.tgt))).collect();
    let mut seen_src = FxHashSet::default();
    let mut seen_tgt = FxHashSet::default();
    let mut report = ParallelDedupReport { input: pairs.len(), ..Default::default() };
    let mut kept = Vec::new();
    for (pair, (ks, kt)) in pairs.iter().zip(keys) {
        if seen_src.contains(&ks) {
            report.duplicate_source += 1;
        } else if seen_tgt.contains(&kt) {
            report.duplicate_target += 1;
        } else {
            seen_src.insert(ks);
            seen_tgt.insert(kt);
            kept.push(pair.clone());
        }
    }
    report.kept = kept.len();
    (kept, report)
}

/// Inclusive thresholds; a missing score passes unless `require_scores`.
pub fn passes_thresholds(pair: &SentencePair, cfg: &ParallelFilterConfig) -> bool {
    let check = |key: &str, threshold: f64| match pair.scores.get(key) {
        Some(&v) => v >= threshold,
        None => !cfg.require_scores,
    };
    check(&cfg.margin_key, cfg.margin_threshold) && check(&cfg.classifier_key, cfg.classifier_threshold)
}

pub fn threshold_filter(pairs: &[SentencePair], cfg: &ParallelFilterConfig) -> Vec<SentencePair> {
    let keep: Vec<bool> = pairs.par_iter().map(|p| passes_thresholds(p, cfg)).collect();
    pairs.iter().zip(keep).filter(|(_, k)| *k).map(|(p, _)| p.clone()).collect()
}

fn check_sides(p: &SentencePair, line: usize) -> Result<(), ParallelError> {
    if p.src.trim().is_empty() || p.tgt.trim().is_empty() {
        return Err(ParallelError::Parse { line, message: "empty side in sentence pair".into() });
    }
    Ok(())
}

/// Reads pairs from JSONL, or from TSV (`src<TAB>tgt`) when the file name
/// ends in `.tsv` or `.tsv.gz`. TSV pairs take the file stem as origin.
pub fn read_pairs(path: impl AsRef<Path>) -> Result<Vec<SentencePair>, ParallelError> {
    let path = path.as_ref();
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
    let tsv = name.ends_with(".tsv") || name.ends_with(".tsv.gz");
    let origin = name.trim_end_matches(".gz").trim_end_matches(".tsv").to_string();
    let reader = crate::io::open_reader(path)?;
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let pair = if tsv {
            let mut cols = line.split('\t');
            match (cols.next(), cols.next()) {
                (Some(s), Some(t)) => SentencePair::new(s, t).with_origin(origin.clone()),
                _ => return Err(ParallelError::Parse { line: lineno, message: "expected src<TAB>tgt".into() }),
            }
        } else {
            serde_json::from_str(&line).map_err(|e| ParallelError::Parse { line: lineno, message: e.to_string() })?
        };
        check_sides(&pair, lineno)?;
        out.push(pair);
    }
    Ok(out)
}

pub fn write_pairs<W: Write>(mut out: W, pairs: &[SentencePair]) -> std::io::Result<()> {
    for p in pairs {
        serde_json::to_writer(&mut out, p)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn normalization_examples() {
        assert_eq!(normalize_sentence("Hello, World 123!"), "hello world");
        assert_eq!(normalize_sentence("Γειά σου"), "γειά σου");
        assert_eq!(normalize_sentence("«Καλημέρα»;  κόσμε…"), "καλημέρα κόσμε");
        assert_eq!(normalize_sentence("hello world"), "hello world");
    }

    #[test]
    fn duplicate_source_drops_pair() {
        let pairs = [SentencePair::new("a", "x"), SentencePair::new("a", "y")];
        let (kept, r) = dedup_parallel(&pairs);
        assert_eq!(kept, vec![pairs[0].clone()]);
        assert_eq!(r.duplicate_source, 1);
    }

    #[test]
    fn duplicate_target_drops_pair() {
        let pairs = [SentencePair::new("a", "x"), SentencePair::new("b", "x")];
        let (kept, r) = dedup_parallel(&pairs);
        assert_eq!(kept, vec![pairs[0].clone()]);
        assert_eq!(r.duplicate_target, 1);
    }

    #[test]
    fn dropped_pair_does_not_mark_its_other_side() {
        // (a, y) is dropped for its source, so y stays unseen and (c, y) survives
        let pairs = [SentencePair::new("a", "x"), SentencePair::new("a", "y"), SentencePair::new("c", "y")];
        let (kept, _) = dedup_parallel(&pairs);
        assert_eq!(kept, vec![pairs[0].clone(), pairs[2].clone()]);
    }

    #[test]
    fn threshold_boundaries() {
        let cfg = ParallelFilterConfig::default();
        assert!(passes_thresholds(&SentencePair::new("a", "b").with_score("margin", 1.06), &cfg));
        assert!(!passes_thresholds(&SentencePair::new("a", "b").with_score("margin", 1.0599), &cfg));
        assert!(passes_thresholds(&SentencePair::new("a", "b").with_score("classifier", 0.7), &cfg));
        assert!(!passes_thresholds(&SentencePair::new("a", "b").with_score("classifier", 0.69), &cfg));
        assert!(passes_thresholds(&SentencePair::new("a", "b"), &cfg));
        let strict = ParallelFilterConfig { require_scores: true, ..Default::default() };
        assert!(!passes_thresholds(&SentencePair::new("a", "b"), &strict));
    }

    #[test]
    fn tsv_and_jsonl_input() {
        let dir = tempfile::tempdir().unwrap();
        let tsv = dir.path().join("europarl.tsv");
        std::fs::write(&tsv, "Hello\tΓειά\n\nGood morning\tΚαλημέρα\textra\n").unwrap();
        let pairs = read_pairs(&tsv).unwrap();
        assert_eq!(pairs.len(), 2);
        assert_eq!(pairs[1].tgt, "Καλημέρα");
        assert_eq!(pairs[0].origin, "europarl");

        let jsonl = dir.path().join("p.jsonl");
        let mut buf = Vec::new();
        write_pairs(&mut buf, &[SentencePair::new("a", "β").with_score("margin", 1.2)]).unwrap();
        std::fs::write(&jsonl, &buf).unwrap();
        assert_eq!(read_pairs(&jsonl).unwrap()[0].scores["margin"], 1.2);

        std::fs::write(&tsv, "only one column\n").unwrap();
        assert!(matches!(read_pairs(&tsv), Err(ParallelError::Parse { line: 1, .. })));
        std::fs::write(&tsv, "src\t  \n").unwrap();
        assert!(read_pairs(&tsv).is_err());
    }

    proptest! {
        #[test]
        fn normalization_is_idempotent(s in "\\PC{0,40}") {
            let once = normalize_sentence(&s);
            prop_assert_eq!(normalize_sentence(&once), once);
        }

        #[test]
        fn dedup_output_has_unique_sides_and_is_a_fixed_point(
            raw in proptest::collection::vec(("[aA]{0,1}[bcB ,.]{0,3}", "[xX]{0,1}[yz ,]{0,3}"), 0..30)
        ) {
            let pairs: Vec<SentencePair> = raw.into_iter().map(|(s, t)| SentencePair::new(s, t)).collect();
            let (kept, _) = dedup_parallel(&pairs);
            let srcs: FxHashSet<String> = kept.iter().map(|p| normalize_sentence(&p.src)).collect();
            let tgts: FxHashSet<String> = kept.iter().map(|p| normalize_sentence(&p.tgt)).collect();
            prop_assert_eq!(srcs.len(), kept.len());
            prop_assert_eq!(tgts.len(), kept.len());
            prop_assert_eq!(dedup_parallel(&kept).0, kept);
        }

        #[test]
        fn raising_thresholds_never_adds_pairs(
            scores in proptest::collection::vec((0.9f64..1.2, 0.5f64..0.9), 0..30),
            dm in 0.0f64..0.2, dc in 0.0f64..0.2
        ) {
            let pairs: Vec<SentencePair> = scores.iter().map(|&(m, c)| {
                SentencePair::new("s", "t").with_score("margin", m).with_score("classifier", c)
            }).collect();
            let lo = ParallelFilterConfig::default();
            let hi = ParallelFilterConfig { margin_threshold: lo.margin_threshold + dm, classifier_threshold: lo.classifier_threshold + dc, ..lo.clone() };
            prop_assert!(threshold_filter(&pairs, &hi).len() <= threshold_filter(&pairs, &lo).len());
            for (p, keep_hi) in pairs.iter().map(|p| (p, passes_thresholds(p, &hi))) {
                prop_assert!(!keep_hi || passes_thresholds(p, &lo));
            }
        }
    }
}
