//! Preference-data preparation: curation, system-message assignment, chat
//! rendering, and the ORPO loss.

mod orpo;

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;
use xxhash_rust::xxh3::xxh3_64_with_seed;

pub use orpo::{orpo_gradient, orpo_gradient_check, orpo_loss, GradientCheck, OrpoGradient, OrpoOutput, MAX_SEQUENCE_PROB};

#[derive(Debug, Error)]
pub enum AlignError {
    #[error("no system messages configured for category {0}")]
    EmptyPool(Category),
    #[error("chat template: {0}")]
    Template(String),
    #[error("numeric domain: {0}")]
    Domain(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    #[default]
    General,
    Rag,
    Cot,
    Math,
    Code,
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Category::General => "general",
            Category::Rag => "rag",
            Category::Cot => "cot",
            Category::Math => "math",
            Category::Code => "code",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceExample {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system: Option<String>,
    pub prompt: String,
    pub chosen: String,
    pub rejected: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chosen_rating: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rejected_rating: Option<f64>,
    #[serde(default)]
    pub category: Category,
    #[serde(default)]
    pub language: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CurationConfig {
    /// Chosen responses rated below this are dropped.
    pub min_rating: Option<f64>,
    /// Largest tolerated share of characters outside Greek, Basic Latin and
    /// common punctuation, per response.
    pub max_foreign_ratio: f64,
}

impl Default for CurationConfig {
    fn default() -> Self {
        Self { min_rating: None, max_foreign_ratio: 0.05 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurationDrop {
    Tie,
    Inverted,
    LowRating,
    Identical,
    ExcessiveUnicode,
    ScriptMismatch,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CurationReport {
    pub input: usize,
    pub kept: usize,
    pub dropped: BTreeMap<String, usize>,
}

/// NFC, trailing spaces stripped per line, at most one blank line in a row,
/// outer whitespace trimmed.
pub fn normalize_text(text: &str) -> String {
    let nfc: String = text.nfc().collect();
    let mut out = String::with_capacity(nfc.len());
    let mut blank_run = 0;
    for line in nfc.trim().lines() {
        let line = line.trim_end();
        if line.is_empty() {
            blank_run += 1;
            if blank_run > 1 {
                continue;
            }
        } else {
            blank_run = 0;
        }
        out.push_str(line);
        out.push('\n');
    }
    out.truncate(out.trim_end().len());
    out
}

fn is_greek(c: char) -> bool {
    matches!(c as u32, 0x0370..=0x03FF | 0x1F00..=0x1FFF)
}

fn allowed_char(c: char) -> bool {
    c.is_ascii()
        || c.is_whitespace()
        || is_greek(c)
        || matches!(c as u32, 0x0300..=0x036F | 0x2000..=0x206F | 0x20AC)
        || matches!(c, '«' | '»' | '·' | '°' | '€' | '£' | '§' | '±' | '×' | '÷')
}

/// Share of characters outside the allowed set; 0 for empty text.
pub fn foreign_ratio(text: &str) -> f64 {
    let (mut total, mut foreign) = (0usize, 0usize);
    for c in text.chars() {
        total += 1;
        if !allowed_char(c) {
            foreign += 1;
        }
    }
    if total == 0 {
        0.0
    } else {
        foreign as f64 / total as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Script {
    Greek,
    Latin,
}

/// Script with more letters, or `None` when there are no letters or a tie.
pub fn dominant_script(text: &str) -> Option<Script> {
    let (mut greek, mut latin) = (0usize, 0usize);
    for c in text.chars().filter(|c| c.is_alphabetic()) {
        if is_greek(c) {
            greek += 1;
        } else if c.is_ascii_alphabetic() || matches!(c as u32, 0x00C0..=0x024F) {
            latin += 1;
        }
    }
    match greek.cmp(&latin) {
        std::cmp::Ordering::Greater => Some(Script::Greek),
        std::cmp::Ordering::Less => Some(Script::Latin),
        std::cmp::Ordering::Equal => None,
    }
}

/// Normalizes an example's text fields and returns it with the first rule it breaks.
pub fn curate_one(ex: &PreferenceExample, cfg: &CurationConfig) -> (PreferenceExample, Option<CurationDrop>) {
    let mut ex = ex.clone();
    ex.prompt = normalize_text(&ex.prompt);
    ex.chosen = normalize_text(&ex.chosen);
    ex.rejected = normalize_text(&ex.rejected);
    ex.system = ex.system.as_deref().map(normalize_text);

    let drop = if let (Some(c), Some(r)) = (ex.chosen_rating, ex.rejected_rating) {
        if c == r {
            Some(CurationDrop::Tie)
        } else if c < r {
            Some(CurationDrop::Inverted)
        } else {
            None
        }
    } else {
        None
    };
    let drop = drop
        .or_else(|| match (cfg.min_rating, ex.chosen_rating) {
            (Some(min), Some(c)) if c < min => Some(CurationDrop::LowRating),
            _ => None,
        })
        .or_else(|| (ex.chosen == ex.rejected).then_some(CurationDrop::Identical))
        .or_else(|| {
            (foreign_ratio(&ex.chosen) > cfg.max_foreign_ratio || foreign_ratio(&ex.rejected) > cfg.max_foreign_ratio)
                .then_some(CurationDrop::ExcessiveUnicode)
        })
        .or_else(|| match (dominant_script(&ex.chosen), dominant_script(&ex.rejected)) {
            (Some(a), Some(b)) if a != b => Some(CurationDrop::ScriptMismatch),
            _ => None,
        });
    (ex, drop)
}

pub fn curate_preferences(
    examples: &[PreferenceExample],
    cfg: &CurationConfig,
) -> (Vec<PreferenceExample>, CurationReport) {
    let results: Vec<_> = examples.par_iter().map(|ex| curate_one(ex, cfg)).collect();
    let mut report = CurationReport { input: examples.len(), ..Default::default() };
    let mut kept = Vec::new();
    for (ex, drop) in results {
        match drop {
            None => kept.push(ex),
            Some(reason) => {
                let key = serde_json::to_value(reason).expect("enum serializes");
                *report.dropped.entry(key.as_str().unwrap_or_default().to_string()).or_insert(0) += 1;
            }
        }
    }
    report.kept = kept.len();
    (kept, report)
}

pub type SystemPool = BTreeMap<Category, Vec<String>>;

/// Fills a missing system message from the category pool. The choice
/// depends only on `(seed, example id)`.
pub fn assign_system_message(
    ex: &PreferenceExample,
    pool: &SystemPool,
    seed: u64,
) -> Result<PreferenceExample, AlignError> {
    if ex.system.is_some() {
        return Ok(ex.clone());
    }
    let messages = pool.get(&ex.category).filter(|m| !m.is_empty()).ok_or(AlignError::EmptyPool(ex.category))?;
    let h = xxh3_64_with_seed(ex.id.as_bytes(), seed);
    let idx = ((h as u128 * messages.len() as u128) >> 64) as usize;
    let mut out = ex.clone();
    out.system = Some(messages[idx].clone());
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChatTemplate {
    pub system_marker: String,
    pub user_marker: String,
    pub assistant_marker: String,
    pub terminator: String,
}

impl Default for ChatTemplate {
    fn default() -> Self {
        Self {
            system_marker: "<|system|>\n".into(),
            user_marker: "<|user|>\n".into(),
            assistant_marker: "<|assistant|>\n".into(),
            terminator: "</s>\n".into(),
        }
    }
}

impl ChatTemplate {
    pub fn validate(&self) -> Result<(), AlignError> {
        let parts = [&self.system_marker, &self.user_marker, &self.assistant_marker, &self.terminator];
        if parts.iter().any(|p| p.is_empty()) {
            return Err(AlignError::Template("markers and terminator must be non-empty".into()));
        }
        for (i, a) in parts.iter().enumerate() {
            if parts[i + 1..].contains(a) {
                return Err(AlignError::Template(format!("marker {a:?} is used twice")));
            }
        }
        Ok(())
    }

    fn render(&self, system: &str, user: &str, assistant: &str) -> String {
        [
            &self.system_marker,
            system,
            &self.terminator,
            &self.user_marker,
            user,
            &self.terminator,
            &self.assistant_marker,
            assistant,
            &self.terminator,
        ]
        .concat()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPair {
    pub chosen_text: String,
    pub rejected_text: String,
}

/// System, user and assistant turns, each wrapped in its marker and the
/// terminator. A missing system message renders as an empty turn.
pub fn render_chat(ex: &PreferenceExample, tpl: &ChatTemplate) -> RenderedPair {
    let system = ex.system.as_deref().unwrap_or("");
    RenderedPair {
        chosen_text: tpl.render(system, &ex.prompt, &ex.chosen),
        rejected_text: tpl.render(system, &ex.prompt, &ex.rejected),
    }
}

pub fn read_preferences(path: impl AsRef<Path>) -> Result<Vec<PreferenceExample>, AlignError> {
    let reader = crate::io::open_reader(path)?;
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| AlignError::Parse { line: i + 1, message: e.to_string() })?);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize, W: Write>(mut out: W, items: &[T]) -> std::io::Result<()> {
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
