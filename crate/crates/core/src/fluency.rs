//! Character-level n-gram language model with interpolated modified
//! Kneser-Ney smoothing, and the paragraph fluency score built on it.
//!
//! Each paragraph is padded with `order - 1` BOS symbols and every character
//! is predicted from the `order - 1` symbols before it; there is no
//! end-of-paragraph event. The highest order uses raw counts, every lower
//! order uses continuation counts (number of distinct left extensions), and
//! the unigram level interpolates with a uniform distribution over the
//! character vocabulary plus the unknown symbol, so every conditional
//! distribution is proper.
//!
//! Fluency of a paragraph is `min(1, h_ref / h)`, where `h` is its
//! per-character cross-entropy and `h_ref` the held-out cross-entropy
//! measured at training time.

use std::io::{Read, Write};
use std::path::Path;

use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use xxhash_rust::xxh3::xxh3_64_with_seed;

use crate::document::Document;

pub const BOS: u32 = 0;
pub const UNK: u32 = 1;
const FIRST_CHAR: u32 = 2;
const MAX_ORDER: usize = 8;
const MAX_SYMBOLS: usize = 1 << 16;
const MAGIC: &[u8; 4] = b"NGLM";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum LmError {
    #[error("order must be between 2 and {MAX_ORDER}, got {0}")]
    InvalidOrder(usize),
    #[error("training corpus has {chars} characters, fewer than the model order {order}")]
    CorpusTooSmall { chars: usize, order: usize },
    #[error("model file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LmTrainConfig {
    pub order: usize,
    pub holdout_fraction: f64,
    pub seed: u64,
    /// Training stops reading paragraphs once this many characters are in.
    pub max_train_chars: Option<usize>,
}

impl Default for LmTrainConfig {
    fn default() -> Self {
        Self { order: 7, holdout_fraction: 0.1, seed: 0, max_train_chars: Some(2_000_000) }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct ContextStats {
    total: u64,
    n1: u64,
    n2: u64,
    n3p: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NGramLM {
    order: usize,
    chars: Vec<char>,
    char_ids: FxHashMap<char, u32>,
    /// D1, D2, D3+ for each order (index = order - 1).
    discounts: Vec<[f64; 3]>,
    counts: Vec<FxHashMap<u128, u64>>,
    contexts: Vec<FxHashMap<u128, ContextStats>>,
    h_ref: f64,
}

fn pack(syms: &[u32]) -> u128 {
    syms.iter().fold(0u128, |acc, &s| (acc << 16) | s as u128)
}

/// Collapses whitespace runs to single spaces and trims.
pub fn normalize_paragraph(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Paragraphs are separated by lines that are empty or whitespace-only.
pub fn split_paragraphs(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current = String::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            if !current.is_empty() {
                out.push(std::mem::take(&mut current));
            }
        } else {
            if !current.is_empty() {
                current.push('\n');
            }
            current.push_str(line);
        }
    }
    if !current.is_empty() {
        out.push(current);
    }
    out
}

/// Modified KN discounts from counts-of-counts. When the estimate is
/// degenerate (tiny corpora) all three fall back to the single absolute
/// discount n1 / (n1 + 2 n2), or 0.5 when that is undefined too.
fn discounts_from(coc: [u64; 4]) -> [f64; 3] {
    let [n1, n2, n3, n4] = coc.map(|n| n as f64);
    let y = if n1 > 0.0 && n2 > 0.0 { n1 / (n1 + 2.0 * n2) } else { f64::NAN };
    let d = [1.0 - 2.0 * y * n2 / n1, 2.0 - 3.0 * y * n3 / n2, 3.0 - 4.0 * y * n4 / n3];
    let valid = d.iter().enumerate().all(|(i, &v)| v.is_finite() && v > 0.0 && v < (i + 1) as f64);
    if valid {
        d
    } else if y.is_finite() && y > 0.0 && y < 1.0 {
        [y; 3]
    } else {
        [0.5; 3]
    }
}

fn context_stats(table: &FxHashMap<u128, u64>) -> FxHashMap<u128, ContextStats> {
    let mut ctx: FxHashMap<u128, ContextStats> = FxHashMap::default();
    for (&key, &c) in table {
        let s = ctx.entry(key >> 16).or_default();
        s.total += c;
        match c {
            1 => s.n1 += 1,
            2 => s.n2 += 1,
            _ => s.n3p += 1,
        }
    }
    ctx
}

fn counts_of_counts(table: &FxHashMap<u128, u64>) -> [u64; 4] {
    let mut coc = [0u64; 4];
    for &c in table.values() {
        if (1..=4).contains(&c) {
            coc[c as usize - 1] += 1;
        }
    }
    coc
}

impl NGramLM {
    pub fn order(&self) -> usize {
        self.order
    }

    /// Held-out per-character cross-entropy in nats.
    pub fn h_ref(&self) -> f64 {
        self.h_ref
    }

    /// Number of symbols a distribution ranges over (characters + unknown).
    pub fn vocab_size(&self) -> usize {
        self.chars.len() + 1
    }

    /// Symbol ids that can be predicted: the unknown symbol and every character.
    pub fn predictable_symbols(&self) -> impl Iterator<Item = u32> {
        UNK..FIRST_CHAR + self.chars.len() as u32
    }

    pub fn symbol(&self, c: char) -> u32 {
        self.char_ids.get(&c).copied().unwrap_or(UNK)
    }

    pub fn discounts(&self, order: usize) -> [f64; 3] {
        self.discounts[order - 1]
    }

    fn discount(&self, order: usize, count: u64) -> f64 {
        match count {
            0 => 0.0,
            1 => self.discounts[order - 1][0],
            2 => self.discounts[order - 1][1],
            _ => self.discounts[order - 1][2],
        }
    }

    /// P(w | context). Only the last `order - 1` symbols of `context` are
    /// used; shorter contexts are treated as BOS-padded on the left.
    pub fn prob(&self, context: &[u32], w: u32) -> f64 {
        let need = self.order - 1;
        let mut hist = vec![BOS; need.saturating_sub(context.len())];
        hist.extend_from_slice(&context[context.len().saturating_sub(need)..]);
        self.prob_full(&hist, w)
    }

    fn prob_full(&self, hist: &[u32], w: u32) -> f64 {
        let uni = &self.contexts[0][&0];
        let c = self.counts[0].get(&(w as u128)).copied().unwrap_or(0);
        let gamma = self.gamma(1, uni);
        let mut p = (c as f64 - self.discount(1, c)).max(0.0) / uni.total as f64
            + gamma / self.vocab_size() as f64;
        for k in 2..=self.order {
            let ctx_key = pack(&hist[hist.len() - (k - 1)..]);
            let Some(stats) = self.contexts[k - 1].get(&ctx_key) else { continue };
            let c = self.counts[k - 1].get(&((ctx_key << 16) | w as u128)).copied().unwrap_or(0);
            p = (c as f64 - self.discount(k, c)).max(0.0) / stats.total as f64 + self.gamma(k, stats) * p;
        }
        p
    }

    fn gamma(&self, order: usize, s: &ContextStats) -> f64 {
        let d = self.discounts[order - 1];
        (d[0] * s.n1 as f64 + d[1] * s.n2 as f64 + d[2] * s.n3p as f64) / s.total as f64
    }

    fn symbols(&self, text: &str) -> Vec<u32> {
        text.chars().map(|c| self.symbol(c)).collect()
    }

    /// Natural-log probability of `text` as one BOS-padded sequence.
    pub fn log_prob(&self, text: &str) -> f64 {
        let syms = self.symbols(text);
        let mut hist = vec![BOS; self.order - 1];
        let mut total = 0.0;
        for s in syms {
            total += self.prob_full(&hist, s).ln();
            if !hist.is_empty() {
                hist.remove(0);
                hist.push(s);
            }
        }
        total
    }

    /// Per-character cross-entropy (nats) of a normalized paragraph;
    /// `None` when it has no characters.
    pub fn cross_entropy(&self, paragraph: &str) -> Option<f64> {
        let norm = normalize_paragraph(paragraph);
        let n = norm.chars().count();
        (n > 0).then(|| -self.log_prob(&norm) / n as f64)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), LmError> {
        crate::io::write_atomic(path, &self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, LmError> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    /// Little-endian: magic, version u32, order u32, char count u32, chars
    /// (u32 code points), h_ref f64, three f64 discounts per order, then for
    /// each order an entry count u64 followed by sorted (symbols u32 × order,
    /// count u64) entries.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.order as u32).to_le_bytes());
        out.extend_from_slice(&(self.chars.len() as u32).to_le_bytes());
        for &c in &self.chars {
            out.extend_from_slice(&(c as u32).to_le_bytes());
        }
        out.extend_from_slice(&self.h_ref.to_le_bytes());
        for d in &self.discounts {
            for v in d {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        for (k, table) in self.counts.iter().enumerate() {
            let order = k + 1;
            let mut entries: Vec<(u128, u64)> = table.iter().map(|(&a, &b)| (a, b)).collect();
            entries.sort_unstable();
            out.extend_from_slice(&(entries.len() as u64).to_le_bytes());
            for (key, count) in entries {
                for i in (0..order).rev() {
                    out.extend_from_slice(&(((key >> (16 * i)) & 0xffff) as u32).to_le_bytes());
                }
                out.extend_from_slice(&count.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, LmError> {
        let mut r = ByteReader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(LmError::Format("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(LmError::Format(format!("unsupported version {version}")));
        }
        let order = r.u32()? as usize;
        if !(2..=MAX_ORDER).contains(&order) {
            return Err(LmError::InvalidOrder(order));
        }
        let nchars = r.u32()? as usize;
        if nchars + FIRST_CHAR as usize > MAX_SYMBOLS {
            return Err(LmError::Format("too many symbols".into()));
        }
        let mut chars = Vec::with_capacity(nchars);
        for _ in 0..nchars {
            let cp = r.u32()?;
            chars.push(char::from_u32(cp).ok_or_else(|| LmError::Format(format!("invalid char {cp:#x}")))?);
        }
        let h_ref = r.f64()?;
        let mut discounts = Vec::with_capacity(order);
        for _ in 0..order {
            discounts.push([r.f64()?, r.f64()?, r.f64()?]);
        }
        let mut counts = Vec::with_capacity(order);
        for k in 1..=order {
            let n = r.u64()? as usize;
            if n > bytes.len() {
                return Err(LmError::Format("entry count exceeds file size".into()));
            }
            let mut table = FxHashMap::default();
            table.reserve(n);
            for _ in 0..n {
                let mut key = 0u128;
                for _ in 0..k {
                    let s = r.u32()?;
                    if s as usize >= nchars + FIRST_CHAR as usize {
                        return Err(LmError::Format("symbol out of range".into()));
                    }
                    key = (key << 16) | s as u128;
                }
                table.insert(key, r.u64()?);
            }
            counts.push(table);
        }
        if r.pos != bytes.len() {
            return Err(LmError::Format("trailing bytes".into()));
        }
        if counts[0].is_empty() {
            return Err(LmError::Format("empty unigram table".into()));
        }
        let contexts = counts.iter().map(context_stats).collect();
        let char_ids = chars.iter().enumerate().map(|(i, &c)| (c, FIRST_CHAR + i as u32)).collect();
        Ok(Self { order, chars, char_ids, discounts, counts, contexts, h_ref })
    }
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl ByteReader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], LmError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| LmError::Format("truncated file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32, LmError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64, LmError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> Result<f64, LmError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

fn build_model(order: usize, train: &[Vec<char>]) -> NGramLM {
    let mut freq: FxHashMap<char, u64> = FxHashMap::default();
    for p in train {
        for &c in p {
            *freq.entry(c).or_insert(0) += 1;
        }
    }
    let mut chars: Vec<(char, u64)> = freq.into_iter().collect();
    let cap = MAX_SYMBOLS - FIRST_CHAR as usize;
    if chars.len() > cap {
        // rarest characters fall back to the unknown symbol
        chars.sort_unstable_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        chars.truncate(cap);
    }
    let mut chars: Vec<char> = chars.into_iter().map(|(c, _)| c).collect();
    chars.sort_unstable();
    let char_ids: FxHashMap<char, u32> =
        chars.iter().enumerate().map(|(i, &c)| (c, FIRST_CHAR + i as u32)).collect();

    let mut top: FxHashMap<u128, u64> = FxHashMap::default();
    let mut seq = Vec::new();
    for p in train {
        seq.clear();
        seq.resize(order - 1, BOS);
        seq.extend(p.iter().map(|c| char_ids.get(c).copied().unwrap_or(UNK)));
        for window in seq.windows(order) {
            *top.entry(pack(window)).or_insert(0) += 1;
        }
    }

    // continuation counts: each distinct (k+1)-gram adds one left extension to its k-suffix
    let mut counts = vec![FxHashMap::default(); order];
    counts[order - 1] = top;
    for k in (1..order).rev() {
        let mask = (1u128 << (16 * k)) - 1;
        let mut lower: FxHashMap<u128, u64> = FxHashMap::default();
        for &key in counts[k].keys() {
            *lower.entry(key & mask).or_insert(0) += 1;
        }
        counts[k - 1] = lower;
    }

    let discounts = counts.iter().map(|t| discounts_from(counts_of_counts(t))).collect();
    let contexts = counts.iter().map(context_stats).collect();
    NGramLM { order, chars, char_ids, discounts, counts, contexts, h_ref: f64::NAN }
}

fn cross_entropy_over(lm: &NGramLM, paragraphs: &[Vec<char>]) -> f64 {
    let mut nats = 0.0;
    let mut n = 0usize;
    for p in paragraphs {
        let s: String = p.iter().collect();
        nats -= lm.log_prob(&s);
        n += p.len();
    }
    nats / n as f64
}

/// Trains on the normalized paragraphs of `corpus`. Paragraphs are assigned
/// to the held-out split by a seeded hash of their index, so the split is
/// reproducible and independent of thread count.
pub fn train_ngram_lm(corpus: &[Document], cfg: &LmTrainConfig) -> Result<NGramLM, LmError> {
    if !(2..=MAX_ORDER).contains(&cfg.order) {
        return Err(LmError::InvalidOrder(cfg.order));
    }
    let mut paragraphs: Vec<Vec<char>> = Vec::new();
    let mut total = 0usize;
    'docs: for doc in corpus {
        for p in split_paragraphs(&doc.text) {
            let chars: Vec<char> = normalize_paragraph(&p).chars().collect();
            if chars.is_empty() {
                continue;
            }
            total += chars.len();
            paragraphs.push(chars);
            if cfg.max_train_chars.is_some_and(|max| total >= max) {
                break 'docs;
            }
        }
    }
    if total < cfg.order {
        return Err(LmError::CorpusTooSmall { chars: total, order: cfg.order });
    }

    let threshold = (cfg.holdout_fraction.clamp(0.0, 1.0) * u64::MAX as f64) as u64;
    let (mut train, mut heldout): (Vec<_>, Vec<_>) = (Vec::new(), Vec::new());
    for (i, p) in paragraphs.into_iter().enumerate() {
        if cfg.holdout_fraction > 0.0 && xxh3_64_with_seed(&(i as u64).to_le_bytes(), cfg.seed) < threshold {
            heldout.push(p);
        } else {
            train.push(p);
        }
    }
    if train.is_empty() {
        std::mem::swap(&mut train, &mut heldout);
    }

    let mut lm = build_model(cfg.order, &train);
    lm.h_ref = if heldout.is_empty() {
        log::warn!("no held-out paragraphs; measuring reference entropy on training text");
        cross_entropy_over(&lm, &train)
    } else {
        cross_entropy_over(&lm, &heldout)
    };
    debug_assert!(lm.h_ref > 0.0);
    Ok(lm)
}

/// `min(1, h_ref / h)` for one paragraph; `None` for an empty paragraph.
pub fn fluency_score(lm: &NGramLM, paragraph: &str) -> Option<f64> {
    lm.cross_entropy(paragraph).map(|h| score_from_entropy(lm.h_ref, h))
}

pub fn score_from_entropy(h_ref: f64, h_doc: f64) -> f64 {
    if h_doc <= 0.0 {
        1.0
    } else {
        (h_ref / h_doc).min(1.0)
    }
}

/// Character-length-weighted mean of paragraph scores. `None` when the text
/// has no non-empty paragraph.
pub fn document_fluency(lm: &NGramLM, text: &str) -> Option<f64> {
    let mut weighted = 0.0;
    let mut weight = 0usize;
    for p in split_paragraphs(text) {
        let n = normalize_paragraph(&p).chars().count();
        if let Some(score) = fluency_score(lm, &p) {
            weighted += score * n as f64;
            weight += n;
        }
    }
    (weight > 0).then(|| weighted / weight as f64)
}

impl NGramLM {
    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(&self.to_bytes())
    }
}
