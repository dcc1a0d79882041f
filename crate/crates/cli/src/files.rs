//! Input opening and staged output writing. Outputs go to temporary files
//! next to their targets and are renamed into place only once every output
//! of a command has been written, so a failed run leaves nothing behind.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use tempfile::NamedTempFile;

use crate::error::UsageError;

pub fn open(path: &str) -> Result<BufReader<File>> {
    let file = File::open(path).map_err(|e| UsageError(format!("cannot open input {path}: {e}")))?;
    Ok(BufReader::new(file))
}

/// Non-blank lines that do not start with `#`.
pub fn read_lines(path: &str) -> Result<Vec<(usize, String)>> {
    let mut out = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.with_context(|| format!("reading {path}"))?;
        let trimmed = line.trim();
        if !trimmed.is_empty() && !trimmed.starts_with('#') {
            out.push((i + 1, trimmed.to_string()));
        }
    }
    Ok(out)
}

pub fn read_jsonl<T: DeserializeOwned>(path: &str) -> Result<Vec<T>> {
    read_lines(path)?
        .into_iter()
        .map(|(n, line)| serde_json::from_str(&line).with_context(|| format!("{path}:{n}: malformed record")))
        .collect()
}

#[derive(Default)]
pub struct Staged {
    files: Vec<(NamedTempFile, PathBuf)>,
}

impl Staged {
    /// Writes one output through `body`; `None` means stdout.
    pub fn write<F>(&mut self, target: Option<&str>, body: F) -> Result<()>
    where
        F: FnOnce(&mut dyn Write) -> Result<()>,
    {
        match target {
            None => {
                let stdout = io::stdout();
                let mut lock = stdout.lock();
                body(&mut lock)?;
                lock.flush()?;
            }
            Some(path) => {
                let target = PathBuf::from(path);
                let dir = match target.parent() {
                    Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
                    _ => PathBuf::from("."),
                };
                let mut tmp = NamedTempFile::new_in(&dir)
                    .map_err(|e| UsageError(format!("cannot create output in {}: {e}", dir.display())))?;
                {
                    let mut w = BufWriter::new(tmp.as_file_mut());
                    body(&mut w)?;
                    w.flush()?;
                }
                self.files.push((tmp, target));
            }
        }
        Ok(())
    }

    pub fn commit(self) -> Result<()> {
        for (tmp, target) in self.files {
            persist(tmp, &target)?;
        }
        Ok(())
    }
}

fn persist(tmp: NamedTempFile, target: &Path) -> Result<()> {
    tmp.persist(target)
        .map_err(|e| e.error)
        .with_context(|| format!("cannot write {}", target.display()))?;
    Ok(())
}

pub fn write_jsonl<T: Serialize>(w: &mut dyn Write, items: impl IntoIterator<Item = T>) -> Result<()> {
    for item in items {
        serde_json::to_writer(&mut *w, &item)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}
