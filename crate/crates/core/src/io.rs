//! TSV reading helpers and atomic file output.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Writes `path` through a temporary sibling file that is renamed into place
/// only after `body` succeeds.
pub fn atomic_write<F>(path: &Path, body: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
{
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let tmp = tempfile::NamedTempFile::new_in(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut w = BufWriter::new(tmp.reopen().map_err(|e| Error::io(path, e))?);
    body(&mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))?;
    drop(w);
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn atomic_write_str(path: &Path, contents: &str) -> Result<()> {
    atomic_write(path, |w| w.write_all(contents.as_bytes()))
}

/// A tab-separated file with a fixed header, read fully into memory.
pub(crate) struct Tsv {
    pub path: PathBuf,
    text: String,
}

impl Tsv {
    pub fn open(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Tsv {
            path: path.to_path_buf(),
            text,
        })
    }

    pub fn header_width(&self) -> usize {
        self.text.split('\n').next().map_or(0, |h| h.split('\t').count())
    }

    /// Checks the header against `expected` and yields `(line_number, fields)`
    /// for every non-empty data row.
    pub fn rows(&self, expected: &[&str]) -> Result<Vec<(usize, Vec<&str>)>> {
        let mut lines = self.text.split('\n').map(|l| l.strip_suffix('\r').unwrap_or(l));
        let header: Vec<&str> = lines.next().unwrap_or_default().split('\t').collect();
        if header != expected {
            return Err(Error::parse(
                &self.path,
                1,
                format!("expected header '{}', found '{}'", expected.join("\\t"), header.join("\\t")),
            ));
        }
        let mut out = Vec::new();
        for (i, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != expected.len() {
                return Err(Error::parse(
                    &self.path,
                    i + 2,
                    format!("expected {} fields, found {}", expected.len(), fields.len()),
                ));
            }
            out.push((i + 2, fields));
        }
        Ok(out)
    }

    pub fn err(&self, line: usize, msg: impl Into<String>) -> Error {
        Error::parse(&self.path, line, msg)
    }
}

/// Parses a finite decimal float.
pub(crate) fn parse_finite(field: &str) -> Option<f64> {
    field.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_contents() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub").join("f.txt");
        atomic_write_str(&p, "one").unwrap();
        atomic_write_str(&p, "two").unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "two");
        assert_eq!(std::fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }

    #[test]
    fn failed_body_leaves_no_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.txt");
        let r = atomic_write(&p, |_| Err(std::io::Error::other("boom")));
        assert!(r.is_err());
        assert!(!p.exists());
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
    }

    #[test]
    fn header_and_field_counts_are_checked() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.tsv");
        std::fs::write(&p, "a\tb\n1\t2\n\n3\n").unwrap();
        let tsv = Tsv::open(&p).unwrap();
        assert!(tsv.rows(&["a", "c"]).is_err());
        let err = tsv.rows(&["a", "b"]).unwrap_err().to_string();
        assert!(err.contains(":4:"), "{err}");
    }
}
