//! File helpers shared by every stage: transparent gzip by extension and
//! `.partial` staging so a failed stage never leaves a half-written output
//! under its final name.

use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use flate2::read::MultiGzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

fn is_gzip(path: &Path) -> bool {
    path.extension().is_some_and(|ext| ext == "gz")
}

/// Opens `path` for buffered reading, decompressing `.gz` files on the fly.
pub fn open_reader(path: impl AsRef<Path>) -> io::Result<Box<dyn BufRead + Send>> {
    let path = path.as_ref();
    let file = File::open(path)?;
    if is_gzip(path) {
        Ok(Box::new(BufReader::new(MultiGzDecoder::new(file))))
    } else {
        Ok(Box::new(BufReader::new(file)))
    }
}

/// Output file that is written under `<path>.partial` and only renamed to
/// `path` by [`PartialFile::commit`].
pub struct PartialFile {
    target: PathBuf,
    staging: PathBuf,
    inner: Option<Box<dyn Write + Send>>,
}

impl PartialFile {
    pub fn create(path: impl AsRef<Path>) -> io::Result<Self> {
        let target = path.as_ref().to_path_buf();
        if let Some(parent) = target.parent() {
            if !parent.as_os_str().is_empty() {
                fs::create_dir_all(parent)?;
            }
        }
        let mut staging = target.clone().into_os_string();
        staging.push(".partial");
        let staging = PathBuf::from(staging);
        let file = BufWriter::new(File::create(&staging)?);
        let inner: Box<dyn Write + Send> = if is_gzip(&target) {
            // mtime is zero in the gzip header, so output stays byte-identical across runs
            Box::new(GzEncoder::new(file, Compression::default()))
        } else {
            Box::new(file)
        };
        Ok(Self { target, staging, inner: Some(inner) })
    }

    pub fn path(&self) -> &Path {
        &self.target
    }

    /// Flushes and moves the staged file to its final name.
    pub fn commit(mut self) -> io::Result<PathBuf> {
        if let Some(mut inner) = self.inner.take() {
            inner.flush()?;
        }
        fs::rename(&self.staging, &self.target)?;
        Ok(self.target.clone())
    }
}

impl Write for PartialFile {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.inner.as_mut().expect("write after commit").write(buf)
    }

    fn flush(&mut self) -> io::Result<()> {
        match self.inner.as_mut() {
            Some(inner) => inner.flush(),
            None => Ok(()),
        }
    }
}

impl Drop for PartialFile {
    fn drop(&mut self) {
        // An uncommitted file keeps its `.partial` name for inspection.
        if let Some(mut inner) = self.inner.take() {
            let _ = inner.flush();
        }
    }
}

/// Writes `bytes` to `path` through a [`PartialFile`].
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> io::Result<PathBuf> {
    let mut out = PartialFile::create(path)?;
    out.write_all(bytes)?;
    out.commit()
}

/// Reads a plain-text list: one entry per line, `#` starts a comment, blank
/// lines are skipped, entries are trimmed.
pub fn read_list_file(path: impl AsRef<Path>) -> io::Result<Vec<String>> {
    let reader = open_reader(path)?;
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        let entry = match line.find('#') {
            Some(pos) => &line[..pos],
            None => &line[..],
        };
        let entry = entry.trim();
        if !entry.is_empty() {
            out.push(entry.to_string());
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Read;

    #[test]
    fn partial_file_only_appears_on_commit() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.txt");
        let mut f = PartialFile::create(&path).unwrap();
        f.write_all(b"hello").unwrap();
        assert!(!path.exists());
        f.commit().unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "hello");
        assert!(!dir.path().join("out.txt.partial").exists());
    }

    #[test]
    fn dropped_partial_file_is_left_behind() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.txt");
        {
            let mut f = PartialFile::create(&path).unwrap();
            f.write_all(b"half").unwrap();
        }
        assert!(!path.exists());
        assert!(dir.path().join("out.txt.partial").exists());
    }

    #[test]
    fn gzip_roundtrip_by_extension() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.jsonl.gz");
        write_atomic(&path, "α\nβ\n".as_bytes()).unwrap();
        let raw = fs::read(&path).unwrap();
        assert_eq!(&raw[..2], &[0x1f, 0x8b]);
        let mut s = String::new();
        open_reader(&path).unwrap().read_to_string(&mut s).unwrap();
        assert_eq!(s, "α\nβ\n");
    }

    #[test]
    fn list_file_skips_comments() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("list.txt");
        fs::write(&path, "# header\nfoo\n\n  bar  # trailing\n#only\n").unwrap();
        assert_eq!(read_list_file(&path).unwrap(), vec!["foo", "bar"]);
    }
}
