//! On-disk feature files (DFV1) and item manifests.
//!
//! A DFV1 file is the magic `DFV1`, u32 rows, u32 cols and then the values
//! as row-major little-endian f32. A manifest is UTF-8 text with one
//! `item_id<TAB>category<TAB>path` record per line; blank lines and lines
//! starting with `#` are skipped and relative paths resolve against the
//! manifest's directory.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::signature::FeatureMatrix;

pub const FEATURE_MAGIC: &[u8; 4] = b"DFV1";
const HEADER_LEN: usize = 12;

pub fn encode_features(f: &FeatureMatrix) -> Result<Vec<u8>> {
    let rows =
        u32::try_from(f.n_rows()).map_err(|_| Error::Format("row count exceeds u32".into()))?;
    let cols =
        u32::try_from(f.n_cols()).map_err(|_| Error::Format("column count exceeds u32".into()))?;
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * f.values().len());
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&rows.to_le_bytes());
    out.extend_from_slice(&cols.to_le_bytes());
    for &v in f.values() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_features(bytes: &[u8]) -> Result<FeatureMatrix> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!(
            "feature file too short ({} bytes)",
            bytes.len()
        )));
    }
    if &bytes[..4] != FEATURE_MAGIC {
        return Err(Error::Format("bad magic, not a DFV1 feature file".into()));
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(HEADER_LEN))
        .ok_or_else(|| Error::Format(format!("{rows}x{cols} feature matrix overflows")))?;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "{rows}x{cols} feature file should be {expected} bytes, found {}",
            bytes.len()
        )));
    }
    let mut values = Vec::with_capacity(rows * cols);
    for (idx, c) in bytes[HEADER_LEN..].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(c.try_into().unwrap());
        if !v.is_finite() {
            return Err(Error::Format(format!(
                "non-finite value {v} at row {}, column {}",
                idx / cols,
                idx % cols
            )));
        }
        values.push(v as f64);
    }
    FeatureMatrix::new(rows, cols, values)
}

pub fn read_features(path: &Path) -> Result<FeatureMatrix> {
    let bytes = fs::read(path)?;
    decode_features(&bytes).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn write_features(path: &Path, f: &FeatureMatrix) -> Result<()> {
    fs::write(path, encode_features(f)?)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRecord {
    pub item_id: String,
    pub category: String,
    pub path: PathBuf,
}

pub fn parse_manifest(text: &str, base: &Path) -> Result<Vec<ManifestRecord>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 || fields.iter().any(|f| f.is_empty()) {
            return Err(Error::Format(format!(
                "manifest line {}: expected item_id<TAB>category<TAB>path",
                lineno + 1
            )));
        }
        if !seen.insert(fields[0]) {
            return Err(Error::DuplicateItem(fields[0].to_string()));
        }
        let p = Path::new(fields[2]);
        out.push(ManifestRecord {
            item_id: fields[0].to_string(),
            category: fields[1].to_string(),
            path: if p.is_absolute() {
                p.to_path_buf()
            } else {
                base.join(p)
            },
        });
    }
    Ok(out)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRecord>> {
    let text = fs::read_to_string(path)?;
    let base = path.parent().unwrap_or(Path::new(""));
    parse_manifest(&text, base)
}

/// Write records with paths as given (callers pass paths relative to the
/// manifest's directory for a relocatable manifest).
pub fn write_manifest(path: &Path, records: &[ManifestRecord]) -> Result<()> {
    let mut text = String::new();
    for r in records {
        for (what, s) in [
            ("item id", r.item_id.as_str()),
            ("category", r.category.as_str()),
        ] {
            if s.contains(['\t', '\n']) {
                return Err(Error::Format(format!(
                    "{what} `{s}` contains a tab or newline"
                )));
            }
        }
        text.push_str(&format!(
            "{}\t{}\t{}\n",
            r.item_id,
            r.category,
            r.path.display()
        ));
    }
    fs::write(path, text)?;
    Ok(())
}
