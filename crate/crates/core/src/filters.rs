//! Rule-based document filters and PDF artifact cleanup.
//!
//! Every rule is evaluated for every document, so a verdict lists all the
//! rules a document broke rather than just the first one.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

use crate::document::{Document, Extraction};
use crate::fluency::{document_fluency, NGramLM};

/// Score key consulted before falling back to the language model.
pub const FLUENCY_SCORE_KEY: &str = "fluency";

#[derive(Debug, Error)]
pub enum FilterError {
    #[error("fluency_threshold must be in [0, 1], got {0}")]
    FluencyThreshold(f64),
    #[error("bad-word list: {0}")]
    BadWords(#[from] regex::Error),
    #[error("unknown rule {0:?}")]
    UnknownRule(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    MinChars,
    MinWords,
    MaxWordLen,
    BadWords,
    ForbiddenSubstring,
    UrlBlacklist,
    Fluency,
}

impl Rule {
    pub const ALL: [Rule; 7] = [
        Rule::MinChars,
        Rule::MinWords,
        Rule::MaxWordLen,
        Rule::BadWords,
        Rule::ForbiddenSubstring,
        Rule::UrlBlacklist,
        Rule::Fluency,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Rule::MinChars => "min_chars",
            Rule::MinWords => "min_words",
            Rule::MaxWordLen => "max_word_len",
            Rule::BadWords => "bad_words",
            Rule::ForbiddenSubstring => "forbidden_substring",
            Rule::UrlBlacklist => "url_blacklist",
            Rule::Fluency => "fluency",
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Rule {
    type Err = FilterError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Rule::ALL.into_iter().find(|r| r.as_str() == s).ok_or_else(|| FilterError::UnknownRule(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    pub min_chars: usize,
    pub min_words: usize,
    pub max_word_len: usize,
    pub bad_word_threshold: usize,
    pub bad_words: Vec<String>,
    pub url_blacklist: BTreeSet<String>,
    pub forbidden_substrings: Vec<String>,
    pub fluency_threshold: f64,
    pub fluency_applies_to: BTreeSet<Extraction>,
    pub disabled_rules: BTreeSet<Rule>,
    /// Strip artifact lines from PDF-extracted text before the rules run.
    pub clean_pdf: bool,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            min_chars: 300,
            min_words: 6,
            max_word_len: 60,
            bad_word_threshold: 2,
            bad_words: Vec::new(),
            url_blacklist: BTreeSet::new(),
            forbidden_substrings: vec!["lorem ipsum".to_string()],
            fluency_threshold: 0.7,
            fluency_applies_to: BTreeSet::from([Extraction::Pdf]),
            disabled_rules: BTreeSet::new(),
            clean_pdf: true,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<(), FilterError> {
        if !(0.0..=1.0).contains(&self.fluency_threshold) {
            return Err(FilterError::FluencyThreshold(self.fluency_threshold));
        }
        Ok(())
    }

    pub fn enabled(&self, rule: Rule) -> bool {
        !self.disabled_rules.contains(&rule)
    }

    /// Whether `doc` needs a language model (or a precomputed score) for the fluency rule.
    pub fn wants_fluency(&self, doc: &Document) -> bool {
        self.enabled(Rule::Fluency) && self.fluency_applies_to.contains(&doc.extraction)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Verdict {
    pub keep: bool,
    pub reasons: Vec<Rule>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cleaned_text: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fluency: Option<f64>,
}

/// Case-insensitive whole-word matcher for a bad-word list.
#[derive(Debug, Clone)]
pub struct BadWordMatcher {
    regex: Option<Regex>,
}

fn normalize_entry(s: &str) -> String {
    s.nfc().collect::<String>().to_lowercase().split_whitespace().collect::<Vec<_>>().join(" ")
}

impl BadWordMatcher {
    pub fn new<S: AsRef<str>>(entries: &[S]) -> Result<Self, FilterError> {
        let mut entries: Vec<String> =
            entries.iter().map(|e| normalize_entry(e.as_ref())).filter(|e| !e.is_empty()).collect();
        // longest first so a phrase wins over a word it starts with
        entries.sort_by(|a, b| b.chars().count().cmp(&a.chars().count()).then(a.cmp(b)));
        entries.dedup();
        if entries.is_empty() {
            return Ok(Self { regex: None });
        }
        let alts: Vec<String> = entries
            .iter()
            .map(|e| {
                let body = e.split(' ').map(regex::escape).collect::<Vec<_>>().join(" ");
                let word = |c: Option<char>| c.is_some_and(|c| c.is_alphanumeric() || c == '_');
                let pre = if word(e.chars().next()) { r"\b" } else { "" };
                let post = if word(e.chars().last()) { r"\b" } else { "" };
                format!("{pre}{body}{post}")
            })
            .collect();
        let regex = Regex::new(&format!("(?i)(?:{})", alts.join("|")))?;
        Ok(Self { regex: Some(regex) })
    }

    /// Total non-overlapping occurrences, keyed by lowercased matched text.
    pub fn hits(&self, text: &str) -> BTreeMap<String, usize> {
        let mut out = BTreeMap::new();
        if let Some(re) = &self.regex {
            for m in re.find_iter(text) {
                *out.entry(m.as_str().to_lowercase()).or_insert(0) += 1;
            }
        }
        out
    }

    pub fn count(&self, text: &str) -> usize {
        self.regex.as_ref().map_or(0, |re| re.find_iter(text).count())
    }
}

fn host_of(url: &str) -> Option<String> {
    let parsed = url::Url::parse(url).or_else(|e| {
        if url.contains("://") {
            Err(e)
        } else {
            url::Url::parse(&format!("http://{url}"))
        }
    });
    match parsed {
        Ok(u) => u.host_str().map(|h| h.trim_end_matches('.').to_ascii_lowercase()),
        Err(e) => {
            log::warn!("unparseable url {url:?}: {e}");
            None
        }
    }
}

fn normalize_domain(d: &str) -> String {
    d.trim().trim_end_matches('.').to_ascii_lowercase()
}

fn host_matches(host: &str, blacklist: &BTreeSet<String>) -> bool {
    let mut rest = host;
    loop {
        if blacklist.contains(rest) {
            return true;
        }
        match rest.find('.') {
            Some(i) => rest = &rest[i + 1..],
            None => return false,
        }
    }
}

/// True when the URL's host is a blacklisted domain or one of its
/// subdomains. Matching is by whole labels, so `notbad.example.gr` is not
/// covered by `bad.example.gr`.
pub fn url_blacklisted(url: &str, blacklist: &BTreeSet<String>) -> bool {
    if url.trim().is_empty() || blacklist.is_empty() {
        return false;
    }
    let normalized: BTreeSet<String> = blacklist.iter().map(|d| normalize_domain(d)).collect();
    host_of(url.trim()).is_some_and(|h| host_matches(&h, &normalized))
}

fn is_artifact_line(line: &str, max_word_len: usize) -> bool {
    let line = line.trim_end_matches('\r');
    if line.split_whitespace().any(|w| w.chars().count() > max_word_len) {
        return true;
    }
    let mut run = 0;
    for tok in line.split(' ') {
        let mut chars = tok.chars();
        let single = matches!((chars.next(), chars.next()), (Some(c), None) if c.is_alphabetic());
        run = if single { run + 1 } else { 0 };
        if run >= 5 {
            return true;
        }
    }
    false
}

/// Drops lines with a word longer than 60 characters or a run of at least
/// five single letters separated by single spaces.
pub fn clean_pdf_artifacts(text: &str) -> String {
    clean_pdf_artifacts_with(text, 60)
}

pub fn clean_pdf_artifacts_with(text: &str, max_word_len: usize) -> String {
    text.split('\n').filter(|l| !is_artifact_line(l, max_word_len)).collect::<Vec<_>>().join("\n")
}

/// A filter configuration with its bad-word list compiled once.
#[derive(Debug, Clone)]
pub struct QualityFilter {
    cfg: FilterConfig,
    bad_words: BadWordMatcher,
    blacklist: BTreeSet<String>,
    forbidden: Vec<String>,
}

impl QualityFilter {
    pub fn new(cfg: FilterConfig) -> Result<Self, FilterError> {
        cfg.validate()?;
        let bad_words = BadWordMatcher::new(&cfg.bad_words)?;
        let blacklist = cfg.url_blacklist.iter().map(|d| normalize_domain(d)).filter(|d| !d.is_empty()).collect();
        let forbidden = cfg.forbidden_substrings.iter().map(|s| s.to_lowercase()).filter(|s| !s.is_empty()).collect();
        Ok(Self { cfg, bad_words, blacklist, forbidden })
    }

    pub fn config(&self) -> &FilterConfig {
        &self.cfg
    }

    pub fn check(&self, doc: &Document, lm: Option<&NGramLM>) -> Verdict {
        let cfg = &self.cfg;
        let cleaned = (cfg.clean_pdf && doc.extraction == Extraction::Pdf)
            .then(|| clean_pdf_artifacts_with(&doc.text, cfg.max_word_len))
            .filter(|c| *c != doc.text);
        let text = cleaned.as_deref().unwrap_or(&doc.text);
        let lower = text.to_lowercase();
        let mut reasons = Vec::new();
        let mut flag = |rule: Rule, hit: bool| {
            if hit && cfg.enabled(rule) {
                reasons.push(rule);
            }
        };

        flag(Rule::MinChars, text.chars().count() < cfg.min_chars);
        flag(Rule::MinWords, text.split_whitespace().count() < cfg.min_words);
        flag(Rule::MaxWordLen, text.split_whitespace().any(|w| w.chars().count() > cfg.max_word_len));

        let hits = self.bad_words.hits(text);
        let total: usize = hits.values().sum();
        if total > 0 {
            log::debug!("{}: bad-word hits {hits:?}", doc.id);
        }
        flag(Rule::BadWords, total >= cfg.bad_word_threshold.max(1));
        flag(Rule::ForbiddenSubstring, self.forbidden.iter().any(|s| lower.contains(s.as_str())));
        flag(
            Rule::UrlBlacklist,
            !self.blacklist.is_empty()
                && doc.source_url.as_deref().and_then(host_of).is_some_and(|h| host_matches(&h, &self.blacklist)),
        );

        let mut fluency = None;
        if cfg.wants_fluency(doc) {
            fluency = doc.scores.get(FLUENCY_SCORE_KEY).copied().or_else(|| lm.and_then(|lm| document_fluency(lm, text)));
            match fluency {
                Some(score) => flag(Rule::Fluency, score < cfg.fluency_threshold),
                None if lm.is_none() => log::warn!("{}: no fluency score and no language model", doc.id),
                None => {}
            }
        }

        Verdict { keep: reasons.is_empty(), reasons, cleaned_text: cleaned, fluency }
    }

    /// Verdicts in input order.
    pub fn check_all(&self, docs: &[Document], lm: Option<&NGramLM>) -> Vec<Verdict> {
        docs.par_iter().map(|d| self.check(d, lm)).collect()
    }
}

/// One-off check; build a [`QualityFilter`] to reuse the compiled word list.
pub fn filter_document(doc: &Document, cfg: &FilterConfig, lm: Option<&NGramLM>) -> Result<Verdict, FilterError> {
    Ok(QualityFilter::new(cfg.clone())?.check(doc, lm))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropRecord {
    pub id: String,
    pub reasons: Vec<Rule>,
}

/// Writes one `{"id", "reasons"}` line per dropped document.
pub fn write_drop_report<'a, W: Write>(
    mut out: W,
    records: impl IntoIterator<Item = (&'a Document, &'a Verdict)>,
) -> std::io::Result<usize> {
    let mut n = 0;
    for (doc, verdict) in records {
        if verdict.keep {
            continue;
        }
        let rec = DropRecord { id: doc.id.clone(), reasons: verdict.reasons.clone() };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n")?;
        n += 1;
    }
    Ok(n)
}

pub fn load_word_list(path: impl AsRef<Path>) -> Result<Vec<String>, FilterError> {
    Ok(crate::io::read_list_file(path)?)
}

pub fn load_blacklist(path: impl AsRef<Path>) -> Result<BTreeSet<String>, FilterError> {
    Ok(crate::io::read_list_file(path)?.iter().map(|d| normalize_domain(d)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn words_of_len(n_chars: usize, n_words: usize) -> String {
        // n_words words joined by spaces, padded on the first word to reach n_chars
        let base = vec!["λέξη"; n_words].join(" ");
        let pad = n_chars - base.chars().count();
        format!("{}{}", "α".repeat(pad), base)
    }

    fn web(text: &str) -> Document {
        Document::new("d", text)
    }

    fn verdict(doc: &Document, cfg: &FilterConfig) -> Verdict {
        filter_document(doc, cfg, None).unwrap()
    }

    #[test]
    fn min_chars_boundary() {
        let cfg = FilterConfig::default();
        let short = web(&words_of_len(299, 50));
        assert_eq!(short.text.chars().count(), 299);
        assert_eq!(verdict(&short, &cfg).reasons, vec![Rule::MinChars]);
        let ok = web(&words_of_len(300, 50));
        assert!(verdict(&ok, &cfg).keep);
    }

    #[test]
    fn min_words_boundary() {
        let cfg = FilterConfig { min_chars: 0, ..Default::default() };
        assert_eq!(verdict(&web("ένα δύο τρία τέσσερα πέντε"), &cfg).reasons, vec![Rule::MinWords]);
        assert!(verdict(&web("ένα δύο τρία τέσσερα πέντε έξι"), &cfg).keep);
    }

    #[test]
    fn max_word_len_boundary() {
        let cfg = FilterConfig::default();
        let base = words_of_len(300, 50);
        let long = web(&format!("{base} {}", "β".repeat(61)));
        assert_eq!(verdict(&long, &cfg).reasons, vec![Rule::MaxWordLen]);
        let fine = web(&format!("{base} {}", "β".repeat(60)));
        assert!(verdict(&fine, &cfg).keep);
    }

    #[test]
    fn bad_word_threshold_counts_occurrences() {
        let cfg = FilterConfig { min_chars: 0, bad_words: vec!["βλάκας".into()], ..Default::default() };
        let one = web("αυτός είναι ένας βλάκας και τίποτα άλλο");
        assert!(verdict(&one, &cfg).keep);
        let two = web("αυτός είναι ένας ΒΛΆΚΑΣ και ένας βλάκας ακόμη");
        assert_eq!(verdict(&two, &cfg).reasons, vec![Rule::BadWords]);
    }

    #[test]
    fn bad_words_are_whole_words_and_phrases() {
        let m = BadWordMatcher::new(&["ass", "bad  thing"]).unwrap();
        assert_eq!(m.count("a class assignment"), 0);
        assert_eq!(m.count("Ass! ass."), 2);
        assert_eq!(m.count("a Bad Thing here"), 1);
        assert_eq!(m.count("bad  thing"), 0);
        assert_eq!(m.hits("ASS bad thing")["bad thing"], 1);
    }

    #[test]
    fn forbidden_substring_is_case_insensitive() {
        let cfg = FilterConfig { min_chars: 0, ..Default::default() };
        let d = web("Lorem Ipsum dolor sit amet consectetur adipiscing");
        assert_eq!(verdict(&d, &cfg).reasons, vec![Rule::ForbiddenSubstring]);
    }

    #[test]
    fn all_rules_are_reported() {
        let cfg = FilterConfig {
            bad_words: vec!["x".into()],
            url_blacklist: BTreeSet::from(["bad.example.gr".to_string()]),
            ..Default::default()
        };
        let d = web(&format!("x x lorem ipsum {}", "z".repeat(61))).with_source_url("https://bad.example.gr/p");
        let v = verdict(&d, &cfg);
        assert!(!v.keep);
        assert_eq!(
            v.reasons,
            vec![Rule::MinChars, Rule::MinWords, Rule::MaxWordLen, Rule::BadWords, Rule::ForbiddenSubstring, Rule::UrlBlacklist]
        );
    }

    #[test]
    fn url_blacklist_label_matching() {
        let bl = BTreeSet::from(["bad.example.gr".to_string()]);
        assert!(url_blacklisted("http://bad.example.gr/x", &bl));
        assert!(url_blacklisted("http://sub.bad.example.gr", &bl));
        assert!(url_blacklisted("HTTPS://BAD.Example.gr.:443/", &bl));
        assert!(url_blacklisted("bad.example.gr/path", &bl));
        assert!(!url_blacklisted("http://notbad.example.gr", &bl));
        assert!(!url_blacklisted("http://example.gr", &bl));
        assert!(!url_blacklisted("", &bl));
        assert!(!url_blacklisted("http://[::1", &bl));
    }

    #[test]
    fn fluency_applies_to_pdf_only() {
        let cfg = FilterConfig { min_chars: 0, min_words: 0, ..Default::default() };
        let low = |e| web("κείμενο").with_extraction(e).with_score(FLUENCY_SCORE_KEY, 0.69);
        assert_eq!(verdict(&low(Extraction::Pdf), &cfg).reasons, vec![Rule::Fluency]);
        assert!(verdict(&low(Extraction::Web), &cfg).keep);
        let at = web("κείμενο").with_extraction(Extraction::Pdf).with_score(FLUENCY_SCORE_KEY, 0.7);
        assert!(verdict(&at, &cfg).keep);
    }

    #[test]
    fn pdf_cleanup_example() {
        assert_eq!(clean_pdf_artifacts("α β γ δ ε ζ\nκανονική πρόταση"), "κανονική πρόταση");
        assert_eq!(clean_pdf_artifacts("α β γ δ\nok"), "α β γ δ\nok");
        assert_eq!(clean_pdf_artifacts("α  β γ δ ε\nok"), "α  β γ δ ε\nok");
        let glued = format!("keep\n{}\nkeep too\n", "x".repeat(61));
        assert_eq!(clean_pdf_artifacts(&glued), "keep\nkeep too\n");
        assert_eq!(clean_pdf_artifacts("plain text\n\nmore"), "plain text\n\nmore");
    }

    #[test]
    fn pdf_documents_are_filtered_on_cleaned_text() {
        let body = words_of_len(300, 50);
        let d = web(&format!("a b c d e f g\n{body}")).with_extraction(Extraction::Pdf).with_score(FLUENCY_SCORE_KEY, 0.9);
        let v = verdict(&d, &FilterConfig::default());
        assert!(v.keep);
        assert_eq!(v.cleaned_text.as_deref(), Some(body.as_str()));
    }

    #[test]
    fn invalid_threshold_is_rejected() {
        let cfg = FilterConfig { fluency_threshold: 1.5, ..Default::default() };
        assert!(QualityFilter::new(cfg).is_err());
        assert!("nope".parse::<Rule>().is_err());
        assert_eq!("bad_words".parse::<Rule>().unwrap(), Rule::BadWords);
    }

    #[test]
    fn drop_report_lines() {
        let docs = [web("a"), web(&words_of_len(300, 50))];
        let f = QualityFilter::new(FilterConfig::default()).unwrap();
        let verdicts = f.check_all(&docs, None);
        let mut buf = Vec::new();
        assert_eq!(write_drop_report(&mut buf, docs.iter().zip(&verdicts)).unwrap(), 1);
        assert_eq!(String::from_utf8(buf).unwrap(), "{\"id\":\"d\",\"reasons\":[\"min_chars\",\"min_words\"]}\n");
    }

    fn doc_strategy() -> impl Strategy<Value = Document> {
        ("[a-zα-ω ]{0,40}( lorem ipsum)?[a-zα-ω \n]{0,400}", 0.0f64..1.0, prop::bool::ANY).prop_map(|(t, s, pdf)| {
            let e = if pdf { Extraction::Pdf } else { Extraction::Web };
            Document::new("p", t).with_extraction(e).with_score(FLUENCY_SCORE_KEY, s)
        })
    }

    proptest! {
        #[test]
        fn cleanup_is_idempotent(s in "([a-zα-ω]{1,3}( |  )?|\n|[a-z]{55,65}){0,60}") {
            let once = clean_pdf_artifacts(&s);
            prop_assert_eq!(clean_pdf_artifacts(&once), once);
        }

        #[test]
        fn keep_iff_no_reasons(d in doc_strategy()) {
            let v = verdict(&d, &FilterConfig { bad_words: vec!["α".into()], ..Default::default() });
            prop_assert_eq!(v.keep, v.reasons.is_empty());
            prop_assert_eq!(verdict(&d, &FilterConfig { bad_words: vec!["α".into()], ..Default::default() }), v);
        }

        #[test]
        fn disabling_a_rule_never_adds_reasons(d in doc_strategy(), mask in 0u8..128) {
            let full = FilterConfig { bad_words: vec!["α".into()], ..Default::default() };
            let disabled: BTreeSet<Rule> = Rule::ALL.iter().enumerate().filter(|(i, _)| mask & (1 << i) != 0).map(|(_, r)| *r).collect();
            let partial = FilterConfig { disabled_rules: disabled.clone(), ..full.clone() };
            let a = verdict(&d, &full).reasons;
            let b = verdict(&d, &partial).reasons;
            prop_assert!(b.iter().all(|r| a.contains(r) && !disabled.contains(r)));
        }

        #[test]
        fn raising_min_chars_never_keeps_a_dropped_doc(d in doc_strategy(), lo in 0usize..400, extra in 0usize..400) {
            let a = verdict(&d, &FilterConfig { min_chars: lo, ..Default::default() });
            let b = verdict(&d, &FilterConfig { min_chars: lo + extra, ..Default::default() });
            prop_assert!(a.keep || !b.keep);
        }
    }
}
