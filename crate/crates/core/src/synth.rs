//! Deterministic synthetic corpora for demos, benchmarks and tests.
//!
//! Text is drawn from a per-language lexicon of real function words plus
//! syllable-built pseudo-words, with Zipf-distributed word frequencies.
//! Every document is generated from its own RNG stream keyed by
//! `(seed, dataset, index)`, so any document can be regenerated in
//! isolation and generation parallelizes without changing the output.

use std::ops::RangeInclusive;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use xxhash_rust::xxh3::xxh3_64;

use crate::alignment::{Category, PreferenceExample};
use crate::document::{Document, Extraction};
use crate::parallel::SentencePair;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    Greek,
    English,
}

impl Language {
    pub fn code(self) -> &'static str {
        match self {
            Language::Greek => "el",
            Language::English => "en",
        }
    }
}

const GREEK_FUNCTION: &[&str] = &[
    "και", "το", "η", "ο", "της", "του", "να", "σε", "με", "για", "από", "που", "είναι", "δεν", "θα", "τα", "οι",
    "στο", "στη", "ένα", "μια", "αυτό", "τον", "την", "των", "στην", "στον", "ως", "αλλά", "όπως", "μετά", "πριν",
    "κατά", "μέσα", "πολύ", "όλα", "έχει", "ήταν", "μπορεί", "επίσης", "ακόμη", "όταν", "πάντα", "σήμερα", "χώρα",
    "πόλη", "χρόνια", "άνθρωποι", "κυβέρνηση", "ιστορία", "θάλασσα", "σπίτι", "δρόμος", "νερό", "γλώσσα", "σχολείο",
];
const GREEK_ONSETS: &[&str] = &[
    "κ", "λ", "μ", "ν", "π", "ρ", "σ", "τ", "δ", "γ", "β", "φ", "χ", "θ", "ζ", "ξ", "στ", "πρ", "τρ", "κρ", "γρ", "θρ",
    "σπ", "σκ", "μπ", "ντ", "γκ", "",
];
const GREEK_VOWELS: &[&str] = &["α", "ε", "ι", "ο", "ου", "η", "ω", "αι", "ει", "οι", "υ"];
const GREEK_ACCENTED: &[&str] = &["ά", "έ", "ί", "ό", "ού", "ή", "ώ", "αί", "εί", "οί", "ύ"];
const GREEK_ENDINGS: &[&str] = &["ς", "ν", "", "", "", "ς", "ση", "μα", "τα", "ων"];

const ENGLISH_FUNCTION: &[&str] = &[
    "the", "of", "and", "to", "in", "a", "is", "that", "for", "it", "as", "was", "with", "be", "by", "on", "not",
    "he", "this", "are", "or", "his", "from", "at", "which", "but", "have", "an", "had", "they", "you", "were",
    "there", "one", "all", "we", "can", "her", "has", "been", "if", "more", "when", "will", "would", "who", "so",
    "no", "people", "time", "year", "city", "water", "school", "history", "language", "country", "government",
];
const ENGLISH_ONSETS: &[&str] = &[
    "b", "c", "d", "f", "g", "h", "l", "m", "n", "p", "r", "s", "t", "v", "w", "st", "pr", "tr", "cl", "gr", "sh",
    "ch", "th", "br", "pl", "",
];
const ENGLISH_VOWELS: &[&str] = &["a", "e", "i", "o", "u", "ea", "ou", "ai", "ee", "oo"];
const ENGLISH_ENDINGS: &[&str] = &["", "", "s", "ed", "ing", "er", "ly", "tion", "n", "t", "ment"];

/// Mild entries matching the bundled sample bad-word list.
pub const SAMPLE_BAD_WORDS: &[&str] = &["βλάκας", "ηλίθιος", "idiot", "stupid"];
pub const SAMPLE_BLACKLIST: &[&str] = &["spam.example.gr", "casino.example.com"];

/// Word list with a Zipf sampling table.
#[derive(Debug, Clone)]
pub struct Lexicon {
    pub language: Language,
    words: Vec<String>,
    cdf: Vec<f64>,
}

fn pseudo_word(rng: &mut ChaCha8Rng, language: Language) -> String {
    let (onsets, vowels, accented, endings): (&[&str], &[&str], &[&str], &[&str]) = match language {
        Language::Greek => (GREEK_ONSETS, GREEK_VOWELS, GREEK_ACCENTED, GREEK_ENDINGS),
        Language::English => (ENGLISH_ONSETS, ENGLISH_VOWELS, ENGLISH_VOWELS, ENGLISH_ENDINGS),
    };
    let syllables = rng.random_range(2..=4);
    let stress = rng.random_range(0..syllables);
    let mut w = String::new();
    for s in 0..syllables {
        w.push_str(onsets[rng.random_range(0..onsets.len())]);
        let v = rng.random_range(0..vowels.len());
        w.push_str(if s == stress { accented[v] } else { vowels[v] });
    }
    w.push_str(endings[rng.random_range(0..endings.len())]);
    w
}

impl Lexicon {
    pub fn new(language: Language, size: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ xxh3_64(language.code().as_bytes()));
        let function = match language {
            Language::Greek => GREEK_FUNCTION,
            Language::English => ENGLISH_FUNCTION,
        };
        let mut words: Vec<String> = function.iter().map(|w| w.to_string()).collect();
        let mut seen: std::collections::HashSet<String> = words.iter().cloned().collect();
        while words.len() < size.max(function.len()) {
            let w = pseudo_word(&mut rng, language);
            if seen.insert(w.clone()) {
                words.push(w);
            }
        }
        let mut cdf = Vec::with_capacity(words.len());
        let mut acc = 0.0;
        for r in 0..words.len() {
            acc += 1.0 / (r as f64 + 2.7);
            cdf.push(acc);
        }
        for v in &mut cdf {
            *v /= acc;
        }
        Self { language, words, cdf }
    }

    pub fn greek(seed: u64) -> Self {
        Self::new(Language::Greek, 6000, seed)
    }

    pub fn english(seed: u64) -> Self {
        Self::new(Language::English, 6000, seed)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn word(&self, rng: &mut ChaCha8Rng) -> &str {
        let u: f64 = rng.random();
        let i = self.cdf.partition_point(|&c| c < u).min(self.words.len() - 1);
        &self.words[i]
    }

    fn capitalize(w: &str) -> String {
        let mut c = w.chars();
        match c.next() {
            Some(f) => f.to_uppercase().chain(c).collect(),
            None => String::new(),
        }
    }

    pub fn sentence(&self, rng: &mut ChaCha8Rng, min_words: usize, max_words: usize) -> String {
        let n = rng.random_range(min_words..=max_words);
        let mut s = String::new();
        for i in 0..n {
            let w = self.word(rng);
            if i == 0 {
                s.push_str(&Self::capitalize(w));
            } else {
                s.push(' ');
                s.push_str(w);
                if i + 1 < n && rng.random_bool(0.08) {
                    s.push(',');
                }
            }
        }
        let end = match (self.language, rng.random_range(0..10)) {
            (Language::Greek, 0) => ";",
            (_, 1) => "!",
            (Language::English, 0) => "?",
            _ => ".",
        };
        s.push_str(end);
        s
    }

    pub fn paragraph(&self, rng: &mut ChaCha8Rng, sentences: usize) -> String {
        (0..sentences).map(|_| self.sentence(rng, 5, 14)).collect::<Vec<_>>().join(" ")
    }

    /// Paragraphs separated by blank lines with roughly `words` words in total.
    pub fn document(&self, rng: &mut ChaCha8Rng, words: usize) -> String {
        let mut paragraphs = Vec::new();
        let mut count = 0;
        while count < words {
            let sentences = rng.random_range(2..=4);
            let p = self.paragraph(rng, sentences);
            count += p.split_whitespace().count();
            paragraphs.push(p);
        }
        paragraphs.join("\n\n")
    }
}

fn stream(seed: u64, parts: &[u64]) -> ChaCha8Rng {
    let mut bytes = seed.to_le_bytes().to_vec();
    for p in parts {
        bytes.extend_from_slice(&p.to_le_bytes());
    }
    ChaCha8Rng::seed_from_u64(xxh3_64(&bytes))
}

/// A dataset to generate, with the share of planted defects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub name: String,
    pub language: Language,
    pub extraction: Extraction,
    pub docs: usize,
    pub min_words: usize,
    pub max_words: usize,
    /// Probability that a document is an exact copy of an earlier one.
    pub exact_dup_rate: f64,
    /// Probability that a document is a lightly edited copy of an earlier one.
    pub near_dup_rate: f64,
    /// Probability of each rule-breaking defect (short, lorem ipsum, bad words, glued word, blacklisted URL).
    pub defect_rate: f64,
    /// For PDF datasets: probability of character noise or artifact lines.
    pub noise_rate: f64,
}

impl DatasetSpec {
    pub fn new(name: &str, language: Language, extraction: Extraction, docs: usize) -> Self {
        Self {
            name: name.into(),
            language,
            extraction,
            docs,
            min_words: 70,
            max_words: 140,
            exact_dup_rate: 0.02,
            near_dup_rate: 0.03,
            defect_rate: 0.01,
            noise_rate: 0.1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CorpusGenerator {
    pub seed: u64,
    greek: Lexicon,
    english: Lexicon,
}

impl CorpusGenerator {
    pub fn new(seed: u64) -> Self {
        Self { seed, greek: Lexicon::greek(seed), english: Lexicon::english(seed) }
    }

    pub fn lexicon(&self, language: Language) -> &Lexicon {
        match language {
            Language::Greek => &self.greek,
            Language::English => &self.english,
        }
    }

    /// Clean text of document `index` in dataset `ds`, before any planting.
    fn base_text(&self, spec: &DatasetSpec, ds: u64, index: usize) -> String {
        let mut rng = stream(self.seed, &[ds, index as u64, 0]);
        let words = rng.random_range(spec.min_words..=spec.max_words);
        self.lexicon(spec.language).document(&mut rng, words)
    }

    fn noise(rng: &mut ChaCha8Rng, chars: usize) -> String {
        // uniform over a wide mix of scripts and symbols
        (0..chars)
            .map(|i| {
                if i % 7 == 6 {
                    ' '
                } else {
                    let blocks = [(0x21u32, 0x7e), (0x370, 0x3ff), (0x400, 0x4ff), (0x2200, 0x22ff), (0x4e00, 0x9fff)];
                    let (lo, hi) = blocks[rng.random_range(0..blocks.len())];
                    char::from_u32(rng.random_range(lo..=hi)).unwrap_or('?')
                }
            })
            .collect()
    }

    fn plant_defect(&self, rng: &mut ChaCha8Rng, spec: &DatasetSpec, text: String, doc: &mut Document) -> String {
        match rng.random_range(0..5) {
            0 => self.lexicon(spec.language).sentence(rng, 3, 4),
            1 => format!("{text}\n\nLorem ipsum dolor sit amet, consectetur adipiscing elit."),
            2 => {
                let bad = match spec.language {
                    Language::Greek => ["βλάκας", "ηλίθιος"],
                    Language::English => ["idiot", "stupid"],
                };
                format!("{text} {} {}.", bad[0], bad[1])
            }
            3 => format!("{text} {}", "καλημέρασας".repeat(7)),
            _ => {
                doc.source_url = Some(format!("https://www.{}/page/{}", SAMPLE_BLACKLIST[0], rng.random_range(0..1000)));
                text
            }
        }
    }

    fn edit_lightly(rng: &mut ChaCha8Rng, text: &str, lex: &Lexicon) -> String {
        let mut words: Vec<String> = text.split(' ').map(str::to_string).collect();
        let edits = 1 + words.len() / 60;
        for _ in 0..edits {
            let i = rng.random_range(0..words.len());
            if !words[i].contains('\n') {
                words[i] = lex.word(rng).to_string();
            }
        }
        words.join(" ")
    }

    pub fn document(&self, spec: &DatasetSpec, ds: u64, index: usize) -> Document {
        let mut rng = stream(self.seed, &[ds, index as u64, 1]);
        let lex = self.lexicon(spec.language);
        let mut doc = Document::new(format!("{}-{index:07}", spec.name), "")
            .with_language(spec.language.code())
            .with_dataset(spec.name.clone())
            .with_extraction(spec.extraction);
        let roll: f64 = rng.random();
        let mut text = if index > 0 && roll < spec.exact_dup_rate {
            self.base_text(spec, ds, rng.random_range(0..index))
        } else if index > 0 && roll < spec.exact_dup_rate + spec.near_dup_rate {
            let src = self.base_text(spec, ds, rng.random_range(0..index));
            Self::edit_lightly(&mut rng, &src, lex)
        } else {
            self.base_text(spec, ds, index)
        };
        if rng.random_bool((spec.defect_rate * 5.0).clamp(0.0, 1.0)) {
            text = self.plant_defect(&mut rng, spec, text, &mut doc);
        }
        if spec.extraction == Extraction::Pdf && rng.random_bool(spec.noise_rate.clamp(0.0, 1.0)) {
            text = if rng.random_bool(0.5) {
                let chars = text.chars().count();
                Self::noise(&mut rng, chars)
            } else {
                let letters: Vec<String> = (0..8).map(|_| lex.word(&mut rng).chars().next().unwrap_or('x').to_string()).collect();
                format!("{}\n{text}", letters.join(" "))
            };
        }
        if doc.source_url.is_none() && spec.extraction == Extraction::Web {
            doc.source_url = Some(format!("https://{}.example.gr/{index}", spec.name.replace('_', "-")));
        }
        doc.set_text(text);
        doc
    }

    pub fn dataset(&self, spec: &DatasetSpec, ds: u64) -> Vec<Document> {
        (0..spec.docs).into_par_iter().map(|i| self.document(spec, ds, i)).collect()
    }

    /// Copies `count` documents from `from` into `into` under new ids, to
    /// plant cross-dataset duplicates.
    pub fn plant_cross_duplicates(&self, from: &[Document], into: &mut [Document], count: usize, salt: u64) {
        if from.is_empty() || into.is_empty() {
            return;
        }
        let mut rng = stream(self.seed, &[u64::MAX, salt]);
        for _ in 0..count {
            let src = &from[rng.random_range(0..from.len())];
            let dst = rng.random_range(0..into.len());
            let id = into[dst].id.clone();
            let dataset = into[dst].dataset.clone();
            into[dst] = Document::new(id, &src.text).with_language(src.language.clone()).with_dataset(dataset).with_extraction(into[dst].extraction);
        }
    }

    /// Sentence pairs with scores; planted side duplicates and low scores.
    pub fn sentence_pairs(&self, n: usize) -> Vec<SentencePair> {
        (0..n)
            .into_par_iter()
            .map(|i| {
                let mut rng = stream(self.seed, &[u64::MAX - 1, i as u64]);
                let base = if i > 0 && rng.random_bool(0.05) { rng.random_range(0..i) } else { i };
                let mut brng = stream(self.seed, &[u64::MAX - 2, base as u64]);
                let en = self.english.sentence(&mut brng, 4, 12);
                let el = self.greek.sentence(&mut brng, 4, 12);
                let (src, tgt) = match (base != i, rng.random_range(0..3)) {
                    (true, 0) => (en.to_uppercase(), format!("{} {}", self.greek.sentence(&mut rng, 3, 6), rng.random_range(0..9))),
                    (true, 1) => (self.english.sentence(&mut rng, 4, 12), format!("{el} ")),
                    _ => (en, el),
                };
                SentencePair::new(src, tgt)
                    .with_score("margin", rng.random_range(1.0..1.3))
                    .with_score("classifier", rng.random_range(0.55..1.0))
                    .with_origin("synthetic")
            })
            .collect()
    }

    pub fn preferences(&self, n: usize) -> Vec<PreferenceExample> {
        let cats = [Category::General, Category::Rag, Category::Cot, Category::Math, Category::Code];
        (0..n)
            .into_par_iter()
            .map(|i| {
                let mut rng = stream(self.seed, &[u64::MAX - 3, i as u64]);
                let lex = if rng.random_bool(0.9) { &self.greek } else { &self.english };
                let chosen_rating = rng.random_range(5..=10) as f64;
                let rejected_rating = if rng.random_bool(0.05) { chosen_rating } else { rng.random_range(1..=5) as f64 };
                let mut chosen = lex.paragraph(&mut rng, 2);
                if rng.random_bool(0.03) {
                    chosen.push_str(" 你好世界你好世界你好世界你好世界你好世界你好世界");
                }
                PreferenceExample {
                    id: format!("pref-{i:06}"),
                    system: rng.random_bool(0.2).then(|| lex.sentence(&mut rng, 4, 8)),
                    prompt: lex.sentence(&mut rng, 5, 12),
                    chosen,
                    rejected: lex.paragraph(&mut rng, 1),
                    chosen_rating: Some(chosen_rating),
                    rejected_rating: Some(rejected_rating),
                    category: cats[rng.random_range(0..cats.len())],
                    language: lex.language.code().into(),
                }
            })
            .collect()
    }
}

/// The dataset mix used by the demo and the scale test: Greek web, Greek
/// reference text, Greek PDF extractions and English web text, with
/// cross-dataset copies planted between them.
pub fn standard_corpus(seed: u64, total_docs: usize, words: RangeInclusive<usize>) -> Vec<(String, Vec<Document>)> {
    let generator = CorpusGenerator::new(seed);
    let share = |f: f64| ((total_docs as f64) * f).round() as usize;
    let mut specs = [
        DatasetSpec { exact_dup_rate: 0.0, near_dup_rate: 0.0, defect_rate: 0.0, ..DatasetSpec::new("greek_wiki", Language::Greek, Extraction::Structured, share(0.10)) },
        DatasetSpec::new("greek_web", Language::Greek, Extraction::Web, share(0.55)),
        DatasetSpec::new("greek_pdf", Language::Greek, Extraction::Pdf, share(0.10)),
        DatasetSpec::new("english_web", Language::English, Extraction::Web, total_docs - share(0.10) - share(0.55) - share(0.10)),
    ];
    for s in &mut specs {
        s.min_words = *words.start();
        s.max_words = *words.end();
    }
    let mut data: Vec<(String, Vec<Document>)> =
        specs.iter().enumerate().map(|(i, s)| (s.name.clone(), generator.dataset(s, i as u64))).collect();
    let copies = (total_docs / 200).max(1);
    let (head, tail) = data.split_at_mut(1);
    generator.plant_cross_duplicates(&head[0].1, &mut tail[0].1, copies, 1);
    data
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic_and_order_free() {
        let g = CorpusGenerator::new(5);
        let spec = DatasetSpec::new("greek_web", Language::Greek, Extraction::Web, 50);
        let a = g.dataset(&spec, 0);
        let b = CorpusGenerator::new(5).dataset(&spec, 0);
        assert_eq!(a, b);
        assert_eq!(g.document(&spec, 0, 17), a[17]);
        assert_ne!(CorpusGenerator::new(6).dataset(&spec, 0), a);
    }

    #[test]
    fn lexicon_words_are_greek() {
        let lex = Lexicon::greek(0);
        assert_eq!(lex.len(), 6000);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = lex.sentence(&mut rng, 10, 10);
        assert_eq!(s.split_whitespace().count(), 10);
        assert!(s.chars().filter(|c| c.is_alphabetic()).all(|c| ('\u{370}'..='\u{3ff}').contains(&c)));
    }

    #[test]
    fn standard_corpus_shape() {
        let data = standard_corpus(1, 400, 30..=60);
        let sizes: Vec<usize> = data.iter().map(|(_, d)| d.len()).collect();
        assert_eq!(sizes.iter().sum::<usize>(), 400);
        assert_eq!(data[0].0, "greek_wiki");
    }
}
