//! The canonical document record and its JSONL encoding.
//!
//! Every stage reads and writes one document per line. Recognized fields are
//! pulled into [`Document`]; anything else is kept in [`Document::metadata`]
//! and written back at the end of the object, so a pass through any stage is
//! lossless.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

use crate::io::open_reader;

#[derive(Debug, Error)]
pub enum DocumentError {
    #[error("line {line}: malformed JSON: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("line {line}: expected a JSON object")]
    NotAnObject { line: usize },
    #[error("line {line}: missing required field `{field}`")]
    MissingField { line: usize, field: &'static str },
    #[error("line {line}: field `{field}` has an invalid value")]
    InvalidField { line: usize, field: &'static str },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// How the text of a document was obtained upstream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Extraction {
    #[default]
    Web,
    Pdf,
    Structured,
}

impl std::str::FromStr for Extraction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "web" => Ok(Self::Web),
            "pdf" => Ok(Self::Pdf),
            "structured" => Ok(Self::Structured),
            other => Err(format!("unknown extraction kind `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Document {
    pub id: String,
    pub text: String,
    pub language: String,
    pub num_words: u64,
    pub dataset: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub source_url: Option<String>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub scores: BTreeMap<String, f64>,
    pub extraction: Extraction,
    #[serde(flatten)]
    pub metadata: Map<String, Value>,
}

/// Whitespace-delimited word count (Unicode whitespace).
pub fn count_words(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

impl Document {
    /// Builds a document, NFC-normalizing `text` and counting its words.
    pub fn new(id: impl Into<String>, text: impl AsRef<str>) -> Self {
        let text: String = text.as_ref().nfc().collect();
        Self {
            id: id.into(),
            num_words: count_words(&text),
            text,
            language: String::new(),
            dataset: String::new(),
            source_url: None,
            scores: BTreeMap::new(),
            extraction: Extraction::Web,
            metadata: Map::new(),
        }
    }

    pub fn with_language(mut self, language: impl Into<String>) -> Self {
        self.language = language.into();
        self
    }

    pub fn with_dataset(mut self, dataset: impl Into<String>) -> Self {
        self.dataset = dataset.into();
        self
    }

    pub fn with_extraction(mut self, extraction: Extraction) -> Self {
        self.extraction = extraction;
        self
    }

    pub fn with_source_url(mut self, url: impl Into<String>) -> Self {
        self.source_url = Some(url.into());
        self
    }

    pub fn with_score(mut self, name: impl Into<String>, value: f64) -> Self {
        self.scores.insert(name.into(), value);
        self
    }

    /// Replaces the text and recomputes the word count.
    pub fn set_text(&mut self, text: impl AsRef<str>) {
        self.text = text.as_ref().nfc().collect();
        self.num_words = count_words(&self.text);
    }
}

/// Parses a single JSONL line. Line numbers in errors are 1.
pub fn parse_document(line: &str) -> Result<Document, DocumentError> {
    parse_document_at(line, 1)
}

pub(crate) fn parse_document_at(line: &str, lineno: usize) -> Result<Document, DocumentError> {
    let value: Value =
        serde_json::from_str(line).map_err(|source| DocumentError::Json { line: lineno, source })?;
    let Value::Object(mut obj) = value else {
        return Err(DocumentError::NotAnObject { line: lineno });
    };

    let take_string = |obj: &mut Map<String, Value>, field: &'static str| -> Result<Option<String>, DocumentError> {
        match obj.remove(field) {
            None | Some(Value::Null) => Ok(None),
            Some(Value::String(s)) => Ok(Some(s)),
            Some(_) => Err(DocumentError::InvalidField { line: lineno, field }),
        }
    };

    let id = take_string(&mut obj, "id")?.ok_or(DocumentError::MissingField { line: lineno, field: "id" })?;
    let text = take_string(&mut obj, "text")?.ok_or(DocumentError::MissingField { line: lineno, field: "text" })?;
    let language = take_string(&mut obj, "language")?.unwrap_or_default();
    let dataset = take_string(&mut obj, "dataset")?.unwrap_or_default();
    let source_url = take_string(&mut obj, "source_url")?;

    let text: String = text.nfc().collect();
    let num_words = match obj.remove("num_words") {
        None | Some(Value::Null) => count_words(&text),
        Some(Value::Number(n)) => n
            .as_u64()
            .ok_or(DocumentError::InvalidField { line: lineno, field: "num_words" })?,
        Some(_) => return Err(DocumentError::InvalidField { line: lineno, field: "num_words" }),
    };

    let mut scores = BTreeMap::new();
    match obj.remove("scores") {
        None | Some(Value::Null) => {}
        Some(Value::Object(map)) => {
            for (k, v) in map {
                let v = v
                    .as_f64()
                    .ok_or(DocumentError::InvalidField { line: lineno, field: "scores" })?;
                scores.insert(k, v);
            }
        }
        Some(_) => return Err(DocumentError::InvalidField { line: lineno, field: "scores" }),
    }

    let extraction = match take_string(&mut obj, "extraction")? {
        None => Extraction::default(),
        Some(s) => s
            .parse()
            .map_err(|_| DocumentError::InvalidField { line: lineno, field: "extraction" })?,
    };

    Ok(Document { id, text, language, num_words, dataset, source_url, scores, extraction, metadata: obj })
}

/// Single-line JSON in canonical key order:
/// id, text, language, num_words, dataset, source_url, scores, extraction,
/// then pass-through fields.
pub fn serialize_document(doc: &Document) -> String {
    serde_json::to_string(doc).expect("documents always serialize")
}

/// Streaming reader over a JSONL corpus; yields one result per non-blank line.
pub struct DocumentReader<R> {
    inner: R,
    line: usize,
    buf: String,
}

impl<R: BufRead> DocumentReader<R> {
    pub fn new(inner: R) -> Self {
        Self { inner, line: 0, buf: String::new() }
    }
}

impl DocumentReader<Box<dyn BufRead + Send>> {
    pub fn open(path: impl AsRef<Path>) -> std::io::Result<Self> {
        Ok(Self::new(open_reader(path)?))
    }
}

impl<R: BufRead> Iterator for DocumentReader<R> {
    type Item = Result<Document, DocumentError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            self.buf.clear();
            match self.inner.read_line(&mut self.buf) {
                Ok(0) => return None,
                Ok(_) => {
                    self.line += 1;
                    let trimmed = self.buf.trim_end_matches(['\n', '\r']);
                    if trimmed.trim().is_empty() {
                        continue;
                    }
                    return Some(parse_document_at(trimmed, self.line));
                }
                Err(e) => return Some(Err(e.into())),
            }
        }
    }
}

/// Reads a whole JSONL file into memory.
pub fn read_documents(path: impl AsRef<Path>) -> Result<Vec<Document>, DocumentError> {
    DocumentReader::open(path)?.collect()
}

pub fn write_documents<'a, W: Write>(
    mut out: W,
    docs: impl IntoIterator<Item = &'a Document>,
) -> std::io::Result<()> {
    for doc in docs {
        out.write_all(serialize_document(doc).as_bytes())?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn counts_words_from_text() {
        let doc = parse_document(r#"{"id":"a","text":"ένα δύο","language":"el","dataset":"wiki"}"#).unwrap();
        assert_eq!(doc.num_words, 2);
        assert_eq!(doc.language, "el");
        assert_eq!(doc.dataset, "wiki");
        assert_eq!(doc.extraction, Extraction::Web);
    }

    #[test]
    fn empty_text_is_accepted() {
        let doc = parse_document(r#"{"id":"b","text":""}"#).unwrap();
        assert_eq!(doc.num_words, 0);
    }

    #[test]
    fn missing_text_is_a_schema_error() {
        let err = parse_document(r#"{"id":"b"}"#).unwrap_err();
        assert!(matches!(err, DocumentError::MissingField { field: "text", .. }));
    }

    #[test]
    fn malformed_json_reports_line() {
        let input = "{\"id\":\"a\",\"text\":\"x\"}\n{oops\n";
        let results: Vec<_> = DocumentReader::new(input.as_bytes()).collect();
        assert!(results[0].is_ok());
        match &results[1] {
            Err(DocumentError::Json { line, .. }) => assert_eq!(*line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn canonical_key_order() {
        let line = r#"{"zeta":1,"extraction":"pdf","text":"x","id":"a","dataset":"d","language":"el"}"#;
        let out = serialize_document(&parse_document(line).unwrap());
        assert_eq!(
            out,
            r#"{"id":"a","text":"x","language":"el","num_words":1,"dataset":"d","extraction":"pdf","zeta":1}"#
        );
    }

    #[test]
    fn newline_in_text_stays_on_one_line() {
        let doc = Document::new("a", "line one\nline two");
        let out = serialize_document(&doc);
        assert!(!out.contains('\n'));
        assert!(out.contains("\\n"));
        assert!(out.starts_with(r#"{"id":"a","#));
        assert_eq!(out, out.trim_end());
    }

    #[test]
    fn unknown_fields_survive() {
        let line = r#"{"id":"a","text":"x","meta":{"k":[1,2]},"crawl":"2023-09"}"#;
        let doc = parse_document(line).unwrap();
        assert_eq!(doc.metadata.len(), 2);
        let again = parse_document(&serialize_document(&doc)).unwrap();
        assert_eq!(doc, again);
    }

    #[test]
    fn text_is_nfc_normalized() {
        // "ά" as alpha + combining acute
        let doc = parse_document("{\"id\":\"a\",\"text\":\"\u{3b1}\u{301}\"}").unwrap();
        assert_eq!(doc.text, "\u{3ac}");
    }

    fn arb_document() -> impl Strategy<Value = Document> {
        (
            "[a-z0-9]{1,8}",
            "\\PC{0,40}",
            "[a-z]{0,2}",
            "[a-z_]{0,6}",
            proptest::option::of("https?://[a-z]{1,6}\\.gr/[a-z]{0,4}"),
            proptest::collection::btree_map("[a-z]{1,5}", -1e6f64..1e6, 0..3),
            prop_oneof![Just(Extraction::Web), Just(Extraction::Pdf), Just(Extraction::Structured)],
            proptest::collection::btree_map("x_[a-z]{1,5}", any::<i32>(), 0..3),
        )
            .prop_map(|(id, text, lang, ds, url, scores, extraction, extra)| {
                let mut doc = Document::new(id, text).with_language(lang).with_dataset(ds).with_extraction(extraction);
                doc.source_url = url;
                doc.scores = scores;
                doc.metadata = extra.into_iter().map(|(k, v)| (k, Value::from(v))).collect();
                doc
            })
    }

    proptest! {
        #[test]
        fn parse_inverts_serialize(doc in arb_document()) {
            let line = serialize_document(&doc);
            prop_assert!(!line.contains('\n'));
            prop_assert_eq!(parse_document(&line).unwrap(), doc);
        }
    }
}
