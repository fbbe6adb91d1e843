//! Append-only metrics files: CSV rows and JSON lines.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

fn append(path: &Path, text: &str) -> Result<()> {
    let mut f = OpenOptions::new().create(true).append(true).open(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Appends `row`, writing `header` first when the file is new or empty.
/// An existing file with a different header is refused.
pub fn append_csv_row(path: &Path, header: &str, row: &str) -> Result<()> {
    match std::fs::read_to_string(path) {
        Ok(existing) if !existing.is_empty() => {
            let first = existing.lines().next().unwrap_or_default();
            if first != header {
                return Err(Error::Contract(format!("{}: header `{first}` differs from `{header}`", path.display())));
            }
            append(path, &format!("{row}\n"))
        }
        Ok(_) => append(path, &format!("{header}\n{row}\n")),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => append(path, &format!("{header}\n{row}\n")),
        Err(e) => Err(Error::io(path, e)),
    }
}

/// Appends one compact JSON document per line. Struct fields serialize in
/// declaration order, which keeps the key order stable.
pub fn append_json_line<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let line = serde_json::to_string(value)?;
    append(path, &format!("{line}\n"))
}

pub fn read_json_lines<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines().filter(|l| !l.trim().is_empty()).map(|l| Ok(serde_json::from_str(l)?)).collect()
}

/// Writes a pretty JSON document, replacing any previous content.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}
