//! Signature cache: magic `MHSG`, num_perm u32, seed u64, then per entry a
//! u32 key length, the UTF-8 key, and num_perm u64 values. Little-endian.
//! Entries run to the end of the file.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::minhash::Signature;
use super::DedupError;

const MAGIC: &[u8; 4] = b"MHSG";

pub fn write_signature_cache<'a>(
    path: impl AsRef<Path>,
    num_perm: usize,
    seed: u64,
    entries: impl IntoIterator<Item = (&'a str, &'a Signature)>,
) -> Result<(), DedupError> {
    let file = crate::io::PartialFile::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(MAGIC)?;
    w.write_all(&(num_perm as u32).to_le_bytes())?;
    w.write_all(&seed.to_le_bytes())?;
    for (key, sig) in entries {
        if sig.num_perm() != num_perm || sig.seed != seed {
            return Err(DedupError::SignatureMismatch);
        }
        w.write_all(&(key.len() as u32).to_le_bytes())?;
        w.write_all(key.as_bytes())?;
        for v in sig.values.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    let file = w.into_inner().map_err(|e| e.into_error())?;
    file.commit()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignatureCache {
    pub num_perm: usize,
    pub seed: u64,
    pub entries: Vec<(String, Signature)>,
}

fn read_exact_or_eof(r: &mut impl Read, buf: &mut [u8]) -> Result<bool, DedupError> {
    let mut filled = 0;
    while filled < buf.len() {
        let n = r.read(&mut buf[filled..])?;
        if n == 0 {
            return if filled == 0 { Ok(false) } else { Err(DedupError::Cache("truncated entry".into())) };
        }
        filled += n;
    }
    Ok(true)
}

pub fn read_signature_cache(path: impl AsRef<Path>) -> Result<SignatureCache, DedupError> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let mut header = [0u8; 16];
    r.read_exact(&mut header).map_err(|_| DedupError::Cache("truncated header".into()))?;
    if &header[..4] != MAGIC {
        return Err(DedupError::Cache("bad magic".into()));
    }
    let num_perm = u32::from_le_bytes(header[4..8].try_into().expect("4 bytes")) as usize;
    let seed = u64::from_le_bytes(header[8..16].try_into().expect("8 bytes"));
    let mut entries = Vec::new();
    let mut len = [0u8; 4];
    while read_exact_or_eof(&mut r, &mut len)? {
        let n = u32::from_le_bytes(len) as usize;
        let mut key = vec![0u8; n];
        let mut values = vec![0u8; num_perm * 8];
        let complete = read_exact_or_eof(&mut r, &mut key)? && read_exact_or_eof(&mut r, &mut values)?;
        if !complete && (n > 0 || num_perm > 0) {
            return Err(DedupError::Cache("truncated entry".into()));
        }
        let key = String::from_utf8(key).map_err(|_| DedupError::Cache("key is not UTF-8".into()))?;
        let values: Box<[u64]> =
            values.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        entries.push((key, Signature { values, seed }));
    }
    Ok(SignatureCache { num_perm, seed, entries })
}
