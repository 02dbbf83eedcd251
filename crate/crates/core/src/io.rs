//! Record files: delimited text with a header row, or JSON-lines.
//!
//! The container is picked from the extension: `.jsonl`, `.ndjson` and `.json`
//! are read line by line as JSON objects, anything else as comma-separated
//! text. Lines starting with `#` are comments in delimited files.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Container {
    Delimited,
    JsonLines,
}

impl Container {
    pub fn for_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl" | "ndjson" | "json") => Container::JsonLines,
            _ => Container::Delimited,
        }
    }
}

pub fn read_records<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    match Container::for_path(path) {
        Container::JsonLines => read_json_lines(path),
        Container::Delimited => read_delimited(path),
    }
}

pub fn read_json_lines<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let record = serde_json::from_str(trimmed).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: idx as u64 + 1,
            message: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}

pub fn read_delimited<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    read_delimited_with(path, Ok)
}

/// Reads rows as `R` and converts each with `convert`; conversion errors are
/// reported against the row's line.
pub(crate) fn read_delimited_with<R, T>(
    path: &Path,
    convert: impl Fn(R) -> Result<T>,
) -> Result<Vec<T>>
where
    R: DeserializeOwned,
{
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let mut row = csv::StringRecord::new();
    let mut out = Vec::new();
    while reader
        .read_record(&mut row)
        .map_err(|e| csv_error(path, e))?
    {
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let raw: R = row
            .deserialize(Some(&headers))
            .map_err(|e| csv_error(path, e))?;
        out.push(convert(raw).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

fn csv_error(path: &Path, err: csv::Error) -> Error {
    let line = err.position().map(|p| p.line()).unwrap_or(0);
    match err.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        kind => Error::Parse {
            path: path.to_path_buf(),
            line,
            message: format!("{kind:?}"),
        },
    }
}

pub fn to_json_lines<T: Serialize>(records: &[T]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r)?;
        buf.push(b'\n');
    }
    Ok(buf)
}

pub fn to_delimited<T: Serialize>(records: &[T], comment: Option<&str>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    if let Some(c) = comment {
        for line in c.lines() {
            writeln!(buf, "# {line}")?;
        }
    }
    {
        let mut writer = csv::Writer::from_writer(&mut buf);
        for r in records {
            writer.serialize(r).map_err(|e| match e.into_kind() {
                csv::ErrorKind::Io(io) => Error::Io(io),
                kind => Error::data(format!("{kind:?}")),
            })?;
        }
        writer.flush()?;
    }
    Ok(buf)
}

/// Writes `bytes` to a temporary sibling and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}
