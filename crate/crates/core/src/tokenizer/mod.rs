//! Byte-level BPE vocabularies: training, extension of a base vocabulary
//! with newly learned merges, encoding and fertility measurement.
//!
//! Token strings use the printable byte mapping from [`bytes`], so every
//! vocabulary starts from the same 256 single-byte tokens and any UTF-8 input
//! can be encoded without an unknown token.

pub mod bytes;
pub mod pretokenize;
mod train;

use std::path::Path;
use std::sync::{Arc, OnceLock};

use rayon::prelude::*;
use rustc_hash::{FxHashMap, FxHashSet};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::document::Document;
pub use pretokenize::pretokenize;
pub use train::{train_bpe, BpeTrainConfig};

#[derive(Debug, Error)]
pub enum TokenizerError {
    #[error("duplicate token `{0}`")]
    DuplicateToken(String),
    #[error("vocabulary is missing the single-byte token for 0x{0:02x}")]
    MissingByteToken(u8),
    #[error("merge `{0} {1}` refers to a token that is not in the vocabulary")]
    UnknownMergeToken(String, String),
    #[error("merge `{0} {1}` produces `{0}{1}`, which is not in the vocabulary")]
    MergeResultMissing(String, String),
    #[error("malformed merge line `{0}`")]
    MalformedMerge(String),
    #[error("only byte-level vocabularies (byte_fallback = true) are supported")]
    NotByteLevel,
    #[error("added token `{0}` already exists in the base vocabulary")]
    AddedTokenInBase(String),
    #[error("corpus contains no words")]
    NoWords,
    #[error("vocab file: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Ordered token list plus ordered merge list. Token ids are list positions.
#[derive(Debug, Clone)]
pub struct Vocab {
    pub tokens: Vec<String>,
    pub merges: Vec<(String, String)>,
    pub byte_fallback: bool,
    encoder: OnceLock<Arc<Encoder>>,
}

impl PartialEq for Vocab {
    fn eq(&self, other: &Self) -> bool {
        self.tokens == other.tokens && self.merges == other.merges && self.byte_fallback == other.byte_fallback
    }
}

impl Vocab {
    pub fn new(tokens: Vec<String>, merges: Vec<(String, String)>, byte_fallback: bool) -> Result<Self, TokenizerError> {
        let vocab = Self { tokens, merges, byte_fallback, encoder: OnceLock::new() };
        vocab.validate()?;
        Ok(vocab)
    }

    /// The 256 single-byte tokens and no merges.
    pub fn byte_level() -> Self {
        let tokens = (0..=255u8).map(|b| bytes::byte_to_char(b).to_string()).collect();
        Self { tokens, merges: Vec::new(), byte_fallback: true, encoder: OnceLock::new() }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.tokens.iter().any(|t| t == token)
    }

    fn validate(&self) -> Result<(), TokenizerError> {
        if !self.byte_fallback {
            return Err(TokenizerError::NotByteLevel);
        }
        let mut ids = FxHashMap::default();
        for (i, t) in self.tokens.iter().enumerate() {
            if ids.insert(t.as_str(), i).is_some() {
                return Err(TokenizerError::DuplicateToken(t.clone()));
            }
        }
        for b in 0..=255u8 {
            if !ids.contains_key(bytes::byte_to_char(b).to_string().as_str()) {
                return Err(TokenizerError::MissingByteToken(b));
            }
        }
        for (l, r) in &self.merges {
            if !ids.contains_key(l.as_str()) || !ids.contains_key(r.as_str()) {
                return Err(TokenizerError::UnknownMergeToken(l.clone(), r.clone()));
            }
            if !ids.contains_key(format!("{l}{r}").as_str()) {
                return Err(TokenizerError::MergeResultMissing(l.clone(), r.clone()));
            }
        }
        Ok(())
    }

    pub fn encoder(&self) -> &Encoder {
        self.encoder
            .get_or_init(|| Arc::new(Encoder::build(self.tokens.iter().map(String::as_str), self.merges.iter())))
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        self.encoder().encode(text)
    }
}

/// A token appended by [`extend_vocab`], with the merge that produces it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AddedToken {
    pub token: String,
    pub left: String,
    pub right: String,
    /// Position of the producing merge in the learned vocabulary.
    pub learned_rank: usize,
}

/// A base vocabulary plus appended tokens. Added ids continue after the base.
#[derive(Debug, Clone)]
pub struct ExtendedVocab {
    pub base: Vocab,
    pub added_tokens: Vec<AddedToken>,
    encoder: OnceLock<Arc<Encoder>>,
}

impl PartialEq for ExtendedVocab {
    fn eq(&self, other: &Self) -> bool {
        self.base == other.base && self.added_tokens == other.added_tokens
    }
}

impl From<Vocab> for ExtendedVocab {
    fn from(base: Vocab) -> Self {
        Self { base, added_tokens: Vec::new(), encoder: OnceLock::new() }
    }
}

impl ExtendedVocab {
    pub fn new(base: Vocab, added_tokens: Vec<AddedToken>) -> Result<Self, TokenizerError> {
        let mut seen: FxHashMap<&str, ()> = base.tokens.iter().map(|t| (t.as_str(), ())).collect();
        for a in &added_tokens {
            if seen.insert(a.token.as_str(), ()).is_some() {
                return Err(TokenizerError::AddedTokenInBase(a.token.clone()));
            }
        }
        for a in &added_tokens {
            if !seen.contains_key(a.left.as_str()) || !seen.contains_key(a.right.as_str()) {
                return Err(TokenizerError::UnknownMergeToken(a.left.clone(), a.right.clone()));
            }
            if format!("{}{}", a.left, a.right) != a.token {
                return Err(TokenizerError::MergeResultMissing(a.left.clone(), a.right.clone()));
            }
        }
        Ok(Self { base, added_tokens, encoder: OnceLock::new() })
    }

    pub fn total_size(&self) -> usize {
        self.base.len() + self.added_tokens.len()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        let id = id as usize;
        if id < self.base.len() {
            Some(&self.base.tokens[id])
        } else {
            self.added_tokens.get(id - self.base.len()).map(|a| a.token.as_str())
        }
    }

    pub fn encoder(&self) -> &Encoder {
        self.encoder.get_or_init(|| {
            let tokens = self
                .base
                .tokens
                .iter()
                .map(String::as_str)
                .chain(self.added_tokens.iter().map(|a| a.token.as_str()));
            let added: Vec<(String, String)> =
                self.added_tokens.iter().map(|a| (a.left.clone(), a.right.clone())).collect();
            Arc::new(Encoder::build(tokens, self.base.merges.iter().chain(added.iter())))
        })
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        self.encoder().encode(text)
    }

    pub fn decode(&self, ids: &[u32]) -> String {
        self.encoder().decode(ids)
    }
}

/// Appends the merges of `learned` whose results are not already base tokens.
///
/// Base ids are untouched; each appended token records the learned merge it
/// came from. Learned merges are kept in their learned order.
pub fn extend_vocab(base: &Vocab, learned: &Vocab) -> ExtendedVocab {
    let mut known: FxHashSet<String> = base.tokens.iter().cloned().collect();
    let mut added = Vec::new();
    for (rank, (l, r)) in learned.merges.iter().enumerate() {
        let token = format!("{l}{r}");
        // components are base tokens or were appended by an earlier merge
        if known.insert(token.clone()) {
            added.push(AddedToken { token, left: l.clone(), right: r.clone(), learned_rank: rank });
        }
    }
    ExtendedVocab { base: base.clone(), added_tokens: added, encoder: OnceLock::new() }
}

/// Precomputed lookup tables for encoding with one merge list.
#[derive(Debug)]
pub struct Encoder {
    byte_ids: [u32; 256],
    /// (left, right) → (rank, merged id)
    merges: FxHashMap<(u32, u32), (u32, u32)>,
    token_bytes: Vec<Vec<u8>>,
}

impl Encoder {
    fn build<'a>(tokens: impl Iterator<Item = &'a str>, merges: impl Iterator<Item = &'a (String, String)>) -> Self {
        let tokens: Vec<&str> = tokens.collect();
        let ids: FxHashMap<&str, u32> = tokens.iter().enumerate().map(|(i, t)| (*t, i as u32)).collect();
        let mut byte_ids = [0u32; 256];
        for b in 0..=255u8 {
            byte_ids[b as usize] = ids[bytes::byte_to_char(b).to_string().as_str()];
        }
        let mut merge_map = FxHashMap::default();
        for (rank, (l, r)) in merges.enumerate() {
            let merged = format!("{l}{r}");
            if let (Some(&li), Some(&ri), Some(&mi)) = (ids.get(l.as_str()), ids.get(r.as_str()), ids.get(merged.as_str())) {
                merge_map.entry((li, ri)).or_insert((rank as u32, mi));
            }
        }
        let token_bytes = tokens
            .iter()
            .map(|t| bytes::token_to_bytes(t).unwrap_or_else(|| t.as_bytes().to_vec()))
            .collect();
        Self { byte_ids, merges: merge_map, token_bytes }
    }

    /// BPE over the raw bytes of one chunk: repeatedly merge every
    /// occurrence of the lowest-ranked adjacent pair.
    pub fn encode_chunk(&self, chunk: &[u8], out: &mut Vec<u32>) {
        let mut syms: Vec<u32> = chunk.iter().map(|&b| self.byte_ids[b as usize]).collect();
        let mut scratch = Vec::with_capacity(syms.len());
        loop {
            let mut best: Option<(u32, (u32, u32), u32)> = None;
            for w in syms.windows(2) {
                if let Some(&(rank, merged)) = self.merges.get(&(w[0], w[1])) {
                    if best.is_none_or(|(r, _, _)| rank < r) {
                        best = Some((rank, (w[0], w[1]), merged));
                    }
                }
            }
            let Some((_, (l, r), merged)) = best else { break };
            scratch.clear();
            let mut i = 0;
            while i < syms.len() {
                if i + 1 < syms.len() && syms[i] == l && syms[i + 1] == r {
                    scratch.push(merged);
                    i += 2;
                } else {
                    scratch.push(syms[i]);
                    i += 1;
                }
            }
            std::mem::swap(&mut syms, &mut scratch);
        }
        out.extend_from_slice(&syms);
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        let mut out = Vec::new();
        for chunk in pretokenize(text) {
            self.encode_chunk(chunk.as_bytes(), &mut out);
        }
        out
    }

    /// Token count of `text`, memoizing per-chunk counts in `cache`.
    pub fn count_tokens(&self, text: &str, cache: &mut FxHashMap<Box<str>, u32>) -> u64 {
        let mut total = 0u64;
        let mut buf = Vec::new();
        for chunk in pretokenize(text) {
            let n = match cache.get(chunk) {
                Some(&n) => n,
                None => {
                    buf.clear();
                    self.encode_chunk(chunk.as_bytes(), &mut buf);
                    let n = buf.len() as u32;
                    cache.insert(chunk.into(), n);
                    n
                }
            };
            total += n as u64;
        }
        total
    }

    pub fn decode(&self, ids: &[u32]) -> String {
        let mut raw = Vec::new();
        for &id in ids {
            if let Some(b) = self.token_bytes.get(id as usize) {
                raw.extend_from_slice(b);
            }
        }
        String::from_utf8_lossy(&raw).into_owned()
    }
}

pub fn encode(vocab: &ExtendedVocab, text: &str) -> Vec<u32> {
    vocab.encode(text)
}

/// Token and whitespace-word totals over a corpus.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FertilityCounts {
    pub tokens: u64,
    pub words: u64,
}

impl FertilityCounts {
    pub fn ratio(&self) -> Result<f64, TokenizerError> {
        if self.words == 0 {
            return Err(TokenizerError::NoWords);
        }
        Ok(self.tokens as f64 / self.words as f64)
    }
}

pub fn fertility_counts(encoder: &Encoder, corpus: &[Document]) -> FertilityCounts {
    corpus
        .par_chunks(256)
        .map(|docs| {
            let mut cache = FxHashMap::default();
            docs.iter().fold(FertilityCounts::default(), |acc, d| FertilityCounts {
                tokens: acc.tokens + encoder.count_tokens(&d.text, &mut cache),
                words: acc.words + crate::document::count_words(&d.text),
            })
        })
        .reduce(FertilityCounts::default, |a, b| FertilityCounts { tokens: a.tokens + b.tokens, words: a.words + b.words })
}

/// Encoded tokens per whitespace word.
pub fn fertility(vocab: &ExtendedVocab, corpus: &[Document]) -> Result<f64, TokenizerError> {
    fertility_counts(vocab.encoder(), corpus).ratio()
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    tokens: Vec<String>,
    merges: Vec<String>,
    byte_fallback: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    added_tokens: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    added_merges: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    added_ranks: Option<Vec<usize>>,
}

fn split_merge(line: &str) -> Result<(String, String), TokenizerError> {
    let mut parts = line.split(' ');
    match (parts.next(), parts.next(), parts.next()) {
        (Some(l), Some(r), None) if !l.is_empty() && !r.is_empty() => Ok((l.to_string(), r.to_string())),
        _ => Err(TokenizerError::MalformedMerge(line.to_string())),
    }
}

impl Vocab {
    pub fn to_json(&self) -> String {
        let file = VocabFile {
            tokens: self.tokens.clone(),
            merges: self.merges.iter().map(|(l, r)| format!("{l} {r}")).collect(),
            byte_fallback: self.byte_fallback,
            added_tokens: None,
            added_merges: None,
            added_ranks: None,
        };
        serde_json::to_string_pretty(&file).expect("vocab serializes")
    }
}

impl ExtendedVocab {
    /// Vocab-file JSON; a plain vocab file is produced when nothing was added.
    pub fn to_json(&self) -> String {
        let mut file: VocabFile = serde_json::from_str(&self.base.to_json()).expect("own output parses");
        if !self.added_tokens.is_empty() {
            file.added_tokens = Some(self.added_tokens.iter().map(|a| a.token.clone()).collect());
            file.added_merges = Some(self.added_tokens.iter().map(|a| format!("{} {}", a.left, a.right)).collect());
            file.added_ranks = Some(self.added_tokens.iter().map(|a| a.learned_rank).collect());
        }
        serde_json::to_string_pretty(&file).expect("vocab serializes")
    }

    pub fn from_json(json: &str) -> Result<Self, TokenizerError> {
        let file: VocabFile = serde_json::from_str(json)?;
        let merges = file.merges.iter().map(|m| split_merge(m)).collect::<Result<_, _>>()?;
        let base = Vocab::new(file.tokens, merges, file.byte_fallback)?;
        let added_tokens = file.added_tokens.unwrap_or_default();
        let added_merges = file.added_merges.unwrap_or_default();
        let added_ranks = file.added_ranks.unwrap_or_else(|| (0..added_tokens.len()).collect());
        if added_merges.len() != added_tokens.len() || added_ranks.len() != added_tokens.len() {
            return Err(TokenizerError::MalformedMerge("added_tokens/added_merges length mismatch".into()));
        }
        let mut added = Vec::with_capacity(added_tokens.len());
        for ((token, merge), rank) in added_tokens.into_iter().zip(added_merges).zip(added_ranks) {
            let (left, right) = split_merge(&merge)?;
            added.push(AddedToken { token, left, right, learned_rank: rank });
        }
        Self::new(base, added)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TokenizerError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tok(s: &str) -> String {
        bytes::bytes_to_token(s.as_bytes())
    }

    fn vocab_with(merges: &[(&str, &str)]) -> Vocab {
        let mut v = Vocab::byte_level();
        for (l, r) in merges {
            let (l, r) = (tok(l), tok(r));
            let merged = format!("{l}{r}");
            if !v.contains(&merged) {
                v.tokens.push(merged);
            }
            v.merges.push((l, r));
        }
        Vocab::new(v.tokens, v.merges, true).unwrap()
    }

    #[test]
    fn empty_text_encodes_to_nothing() {
        let v = ExtendedVocab::from(Vocab::byte_level());
        assert!(v.encode("").is_empty());
    }

    #[test]
    fn merges_apply_by_rank() {
        let v = vocab_with(&[("a", "b"), ("b", "c"), ("ab", "c")]);
        let ids = v.encode("abc");
        assert_eq!(ids.len(), 1);
        assert_eq!(v.tokens[ids[0] as usize], "abc");
        // "bcab": (a,b) has rank 0 and fires first, leaving "bc" + "ab"
        let ids = v.encode("bcab");
        let toks: Vec<_> = ids.iter().map(|&i| v.tokens[i as usize].as_str()).collect();
        assert_eq!(toks, vec!["bc", "ab"]);
    }

    #[test]
    fn added_token_already_in_base_is_skipped() {
        let base = vocab_with(&[("a", "b")]);
        let learned = vocab_with(&[("a", "b"), ("ab", "c")]);
        let ext = extend_vocab(&base, &learned);
        assert_eq!(ext.added_tokens.len(), 1);
        assert_eq!(ext.added_tokens[0].token, "abc");
        assert_eq!(ext.added_tokens[0].learned_rank, 1);
        assert_eq!(ext.total_size(), base.len() + 1);
        assert_eq!(ext.token(base.len() as u32), Some("abc"));
    }

    #[test]
    fn total_size_counts_base_plus_added() {
        // 32,000 base tokens + 29,362 novel ones
        let mut base = Vocab::byte_level();
        for i in 0..(32_000 - 256) {
            base.tokens.push(format!("<b{i}>"));
        }
        let added: Vec<AddedToken> = (0..29_362)
            .map(|i| AddedToken { token: format!("{}{}", tok("x"), i), left: tok("x"), right: i.to_string(), learned_rank: i })
            .collect();
        let ext = ExtendedVocab { base, added_tokens: added, encoder: OnceLock::new() };
        assert_eq!(ext.total_size(), 61_362);
    }

    #[test]
    fn extended_vocab_rejects_overlap_with_base() {
        let base = vocab_with(&[("a", "b")]);
        let bad = vec![AddedToken { token: tok("ab"), left: tok("a"), right: tok("b"), learned_rank: 0 }];
        assert!(matches!(ExtendedVocab::new(base, bad), Err(TokenizerError::AddedTokenInBase(_))));
    }

    #[test]
    fn vocab_json_roundtrip() {
        let base = vocab_with(&[("a", "b"), (" ", "a")]);
        let docs = vec![Document::new("0", "και και καιρός")];
        let learned = train_bpe(&docs, &BpeTrainConfig { target_new_tokens: 6, ..Default::default() });
        let ext = extend_vocab(&base, &learned);
        let back = ExtendedVocab::from_json(&ext.to_json()).unwrap();
        assert_eq!(back, ext);
        let json = base.to_json();
        assert!(json.contains("\"byte_fallback\": true"));
        assert!(!json.contains("added_tokens"));
    }

    #[test]
    fn missing_merge_result_rejected() {
        let mut v = Vocab::byte_level();
        v.merges.push((tok("a"), tok("b")));
        assert!(matches!(Vocab::new(v.tokens, v.merges, true), Err(TokenizerError::MergeResultMissing(..))));
    }

    #[test]
    fn fertility_of_single_token_words_is_one() {
        let v = ExtendedVocab::from(vocab_with(&[("a", "b"), (" ", "ab")]));
        let docs = vec![Document::new("1", "ab ab ab"), Document::new("2", "ab")];
        assert_eq!(fertility(&v, &docs).unwrap(), 1.0);
    }

    #[test]
    fn fertility_without_words_fails() {
        let v = ExtendedVocab::from(Vocab::byte_level());
        assert!(matches!(fertility(&v, &[Document::new("1", "   ")]), Err(TokenizerError::NoWords)));
    }

    proptest! {
        #[test]
        fn decode_inverts_encode(s in "\\PC{0,50}") {
            let v = ExtendedVocab::from(vocab_with(&[("a", "b"), (" ", "ab"), (" ab", "a")]));
            prop_assert_eq!(v.decode(&v.encode(&s)), s);
        }
    }
}
