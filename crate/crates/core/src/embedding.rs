//! Embedding matrices for an extended vocabulary.
//!
//! Rows for added tokens start as the mean of the base rows the base
//! tokenizer would produce for the token's bytes. The same operation serves
//! the input embeddings and the LM head.
//!
//! File layout, little-endian: magic `EMB1`, version u32, role u8, rows u64,
//! dims u32, then `rows * dims` f32 values in row-major order.

use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tokenizer::{bytes::token_to_bytes, ExtendedVocab};

const MAGIC: &[u8; 4] = b"EMB1";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 1 + 8 + 4;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("added token {0:?} has an empty base encoding")]
    EmptyEncoding(String),
    #[error("added token {0:?} is not a byte-level token")]
    NotByteLevel(String),
    #[error("matrix has {rows} rows but the base vocabulary has {vocab} tokens")]
    TooFewRows { rows: usize, vocab: usize },
    #[error("data length {len} does not match {rows} x {dims}")]
    Shape { rows: usize, dims: usize, len: usize },
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("matrix file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    #[default]
    InputEmbeddings,
    LmHead,
}

impl Role {
    fn code(self) -> u8 {
        match self {
            Role::InputEmbeddings => 0,
            Role::LmHead => 1,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(Role::InputEmbeddings),
            1 => Some(Role::LmHead),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    pub rows: usize,
    pub dims: usize,
    pub data: Vec<f32>,
    pub role: Role,
    /// Row indices added by [`pad_to_multiple`]. Not stored in the file.
    pub padding_rows: Vec<usize>,
}

impl EmbeddingMatrix {
    pub fn new(rows: usize, dims: usize, data: Vec<f32>, role: Role) -> Result<Self, EmbeddingError> {
        if rows.checked_mul(dims) != Some(data.len()) {
            return Err(EmbeddingError::Shape { rows, dims, len: data.len() });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite { row: i / dims, col: i % dims });
        }
        Ok(Self { rows, dims, data, role, padding_rows: Vec::new() })
    }

    pub fn zeros(rows: usize, dims: usize, role: Role) -> Self {
        Self { rows, dims, data: vec![0.0; rows * dims], role, padding_rows: Vec::new() }
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dims..(i + 1) * self.dims]
    }

    fn mean_of(&self, ids: impl Iterator<Item = usize>) -> Vec<f32> {
        let mut acc = vec![0f64; self.dims];
        let mut n = 0usize;
        for id in ids {
            for (a, &v) in acc.iter_mut().zip(self.row(id)) {
                *a += v as f64;
            }
            n += 1;
        }
        acc.into_iter().map(|a| (a / n as f64) as f32).collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.data.len() * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.role.code());
        out.extend_from_slice(&(self.rows as u64).to_le_bytes());
        out.extend_from_slice(&(self.dims as u32).to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, EmbeddingError> {
        let fmt = |m: &str| EmbeddingError::Format(m.to_string());
        if bytes.len() < HEADER_LEN {
            return Err(fmt("truncated header"));
        }
        if &bytes[..4] != MAGIC {
            return Err(fmt("bad magic"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(EmbeddingError::Format(format!("unsupported version {version}")));
        }
        let role = Role::from_code(bytes[8]).ok_or_else(|| fmt("unknown role"))?;
        let rows = u64::from_le_bytes(bytes[9..17].try_into().expect("8 bytes"));
        let dims = u32::from_le_bytes(bytes[17..21].try_into().expect("4 bytes")) as u64;
        let expected = rows
            .checked_mul(dims)
            .and_then(|n| n.checked_mul(4))
            .and_then(|n| n.checked_add(HEADER_LEN as u64))
            .filter(|&n| n <= usize::MAX as u64)
            .ok_or_else(|| fmt("shape overflow"))?;
        match (bytes.len() as u64).cmp(&expected) {
            std::cmp::Ordering::Less => return Err(fmt("truncated data")),
            std::cmp::Ordering::Greater => return Err(fmt("trailing bytes")),
            std::cmp::Ordering::Equal => {}
        }
        let data: Vec<f32> = bytes[HEADER_LEN..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Self::new(rows as usize, dims as usize, data, role).map_err(|e| match e {
            EmbeddingError::NonFinite { row, col } => {
                EmbeddingError::Format(format!("non-finite value at row {row}, column {col}"))
            }
            other => other,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), EmbeddingError> {
        crate::io::write_atomic(path, &self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EmbeddingError> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(&self.to_bytes())
    }
}

/// Base-tokenizer ids for each added token's bytes.
pub fn added_token_sources(ext: &ExtendedVocab) -> Result<Vec<Vec<u32>>, EmbeddingError> {
    let encoder = ext.base.encoder();
    ext.added_tokens
        .iter()
        .map(|a| {
            let bytes = token_to_bytes(&a.token).ok_or_else(|| EmbeddingError::NotByteLevel(a.token.clone()))?;
            let mut ids = Vec::new();
            encoder.encode_chunk(&bytes, &mut ids);
            if ids.is_empty() {
                return Err(EmbeddingError::EmptyEncoding(a.token.clone()));
            }
            Ok(ids)
        })
        .collect()
}

/// Copies the base rows and appends one mean-initialized row per added
/// token. The result has exactly `ext.total_size()` rows; base rows past the
/// base vocabulary (earlier padding) are dropped.
pub fn init_new_embeddings(base: &EmbeddingMatrix, ext: &ExtendedVocab) -> Result<EmbeddingMatrix, EmbeddingError> {
    let vocab = ext.base.len();
    if base.rows < vocab {
        return Err(EmbeddingError::TooFewRows { rows: base.rows, vocab });
    }
    if base.rows > vocab {
        log::warn!("dropping {} base rows beyond the base vocabulary", base.rows - vocab);
    }
    append_mean_rows(base, vocab, &added_token_sources(ext)?)
}

/// Keeps the first `keep` rows of `base` and appends, for each source list,
/// the element-wise mean of those rows (accumulated in f64 over sorted ids).
pub fn append_mean_rows(base: &EmbeddingMatrix, keep: usize, sources: &[Vec<u32>]) -> Result<EmbeddingMatrix, EmbeddingError> {
    if base.rows < keep {
        return Err(EmbeddingError::TooFewRows { rows: base.rows, vocab: keep });
    }
    if let Some(i) = sources.iter().position(|s| s.is_empty()) {
        return Err(EmbeddingError::EmptyEncoding(format!("source list {i}")));
    }
    if let Some(&id) = sources.iter().flatten().find(|&&id| id as usize >= keep) {
        return Err(EmbeddingError::TooFewRows { rows: keep, vocab: id as usize + 1 });
    }
    let new_rows: Vec<Vec<f32>> = sources
        .par_iter()
        .map(|ids| {
            let mut ids: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
            ids.sort_unstable();
            base.mean_of(ids.into_iter())
        })
        .collect();
    let mut data = Vec::with_capacity((keep + sources.len()) * base.dims);
    data.extend_from_slice(&base.data[..keep * base.dims]);
    for row in new_rows {
        data.extend_from_slice(&row);
    }
    Ok(EmbeddingMatrix { rows: keep + sources.len(), dims: base.dims, data, role: base.role, padding_rows: Vec::new() })
}

/// Rounds the row count up to a multiple of `multiple`; new rows hold the
/// column-wise mean of the existing rows.
pub fn pad_to_multiple(m: &EmbeddingMatrix, multiple: usize) -> EmbeddingMatrix {
    assert!(multiple >= 1, "multiple must be positive");
    let target = m.rows.div_ceil(multiple) * multiple;
    let mut out = m.clone();
    if target == m.rows {
        return out;
    }
    let mean = m.mean_of(0..m.rows);
    for i in m.rows..target {
        out.data.extend_from_slice(&mean);
        out.padding_rows.push(i);
    }
    out.rows = target;
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::{bytes::bytes_to_token, AddedToken, Vocab};

    fn t(s: &str) -> String {
        bytes_to_token(s.as_bytes())
    }

    #[test]
    fn padding_rounds_up_with_mean_rows() {
        let m = EmbeddingMatrix::new(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 9.0], Role::LmHead).unwrap();
        let p = pad_to_multiple(&m, 8);
        assert_eq!(p.rows, 8);
        assert_eq!(p.padding_rows, vec![3, 4, 5, 6, 7]);
        assert_eq!(p.row(7), &[3.0, 5.0]);
        assert_eq!(&p.data[..6], &m.data[..]);
        assert_eq!(pad_to_multiple(&p, 8), p);
        assert_eq!(61_362usize.div_ceil(8) * 8, 61_368);
    }

    #[test]
    fn mean_of_one_is_a_copy() {
        // vocab: 256 bytes + "ab"; the added token "abc" encodes to ["ab", "c"]
        let base = Vocab::new(
            (0..=255u8).map(|b| bytes_to_token(&[b])).chain([t("ab")]).collect(),
            vec![(t("a"), t("b"))],
            true,
        )
        .unwrap();
        let ext = ExtendedVocab::new(
            base.clone(),
            vec![
                AddedToken { token: t("abc"), left: t("ab"), right: t("c"), learned_rank: 0 },
                AddedToken { token: t("abcc"), left: t("abc"), right: t("c"), learned_rank: 1 },
            ],
        )
        .unwrap();
        let dims = 3;
        let data: Vec<f32> = (0..257 * dims).map(|i| (i as f32).sin()).collect();
        let m = EmbeddingMatrix::new(257, dims, data, Role::InputEmbeddings).unwrap();
        let out = init_new_embeddings(&m, &ext).unwrap();
        assert_eq!(out.rows, 259);
        let (ab, c) = (256usize, b'c' as usize);
        for k in 0..dims {
            let expect = ((m.row(ab)[k] as f64 + m.row(c)[k] as f64) / 2.0) as f32;
            assert_eq!(out.row(257)[k], expect);
            let expect3 = ((m.row(ab)[k] as f64 + 2.0 * m.row(c)[k] as f64) / 3.0) as f32;
            assert_eq!(out.row(258)[k], expect3);
        }
        assert_eq!(&out.data[..257 * dims], &m.data[..]);
    }

    #[test]
    fn short_base_matrix_is_rejected() {
        let ext = ExtendedVocab::from(Vocab::byte_level());
        let m = EmbeddingMatrix::zeros(10, 2, Role::InputEmbeddings);
        assert!(matches!(init_new_embeddings(&m, &ext), Err(EmbeddingError::TooFewRows { .. })));
    }

    #[test]
    fn file_errors() {
        let m = EmbeddingMatrix::zeros(2, 3, Role::LmHead);
        let bytes = m.to_bytes();
        assert_eq!(EmbeddingMatrix::from_bytes(&bytes).unwrap(), m);
        let mut bad = bytes.clone();
        bad[..4].copy_from_slice(b"EMB2");
        assert!(matches!(EmbeddingMatrix::from_bytes(&bad), Err(EmbeddingError::Format(_))));
        assert!(EmbeddingMatrix::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut huge = bytes.clone();
        huge[9..17].copy_from_slice(&u64::MAX.to_le_bytes());
        assert!(EmbeddingMatrix::from_bytes(&huge).is_err());
        let mut nan = bytes;
        nan[HEADER_LEN..HEADER_LEN + 4].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(EmbeddingMatrix::from_bytes(&nan).is_err());
        assert!(EmbeddingMatrix::new(2, 2, vec![0.0; 3], Role::LmHead).is_err());
    }
}
