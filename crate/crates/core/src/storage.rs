//! Atomic file writes and append-only JSONL journals.

use std::fs::{File, OpenOptions};
use std::io::{self, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StorageError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Corrupt { path: String, line: usize, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StorageError + '_ {
    move |source| StorageError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), StorageError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(path))?;
    tmp.write_all(bytes).map_err(io_err(path))?;
    tmp.as_file().sync_all().map_err(io_err(path))?;
    tmp.persist(path).map_err(|e| StorageError::Io {
        path: path.display().to_string(),
        source: e.error,
    })?;
    Ok(())
}

pub fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<(), StorageError> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("value serializes");
    bytes.push(b'\n');
    atomic_write(path, &bytes)
}

/// Append-only JSONL file with one writer.
///
/// Opening an existing journal drops a trailing partial line left by an
/// interrupted write; a malformed complete line is reported as corruption.
pub struct Journal {
    path: String,
    writer: BufWriter<File>,
}

impl Journal {
    pub fn open<T: DeserializeOwned>(path: &Path) -> Result<(Vec<T>, Journal), StorageError> {
        let records = if path.exists() {
            let (records, good_len) = read_prefix(path)?;
            let file = OpenOptions::new().write(true).open(path).map_err(io_err(path))?;
            file.set_len(good_len).map_err(io_err(path))?;
            records
        } else {
            Vec::new()
        };
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(io_err(path))?;
        Ok((
            records,
            Journal {
                path: path.display().to_string(),
                writer: BufWriter::new(file),
            },
        ))
    }

    pub fn append<T: Serialize>(&mut self, records: &[T]) -> Result<(), StorageError> {
        let path = self.path.clone();
        let wrap = |source| StorageError::Io {
            path: path.clone(),
            source,
        };
        for r in records {
            serde_json::to_writer(&mut self.writer, r).expect("record serializes");
            self.writer.write_all(b"\n").map_err(wrap)?;
        }
        self.writer.flush().map_err(wrap)?;
        self.writer.get_ref().sync_data().map_err(wrap)
    }
}

/// Reads every complete record of a JSONL file.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, StorageError> {
    read_prefix(path).map(|(r, _)| r)
}

fn read_prefix<T: DeserializeOwned>(path: &Path) -> Result<(Vec<T>, u64), StorageError> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    let mut records = Vec::new();
    let mut offset = 0usize;
    for (i, chunk) in bytes.split_inclusive(|&b| b == b'\n').enumerate() {
        if !chunk.ends_with(b"\n") {
            log::warn!("{}: dropping partial trailing line", path.display());
            break;
        }
        let line = &chunk[..chunk.len() - 1];
        if !line.iter().all(u8::is_ascii_whitespace) {
            let record = serde_json::from_slice(line).map_err(|e| StorageError::Corrupt {
                path: path.display().to_string(),
                line: i + 1,
                message: e.to_string(),
            })?;
            records.push(record);
        }
        offset += chunk.len();
    }
    Ok((records, offset as u64))
}
