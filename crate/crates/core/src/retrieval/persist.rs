//! SIDX index files.
//!
//! Layout (little-endian): magic, u16 version, u8 mode, u32 dim, u32 count,
//! then per entry u16-prefixed id and category, the mean, the row-major
//! covariance and, for gmm indices, u32 k followed by weights, means and
//! variances. An 8-byte byte-sum checksum closes the file. Build parameters
//! that the format has no room for go to a JSON sidecar next to the file.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::{BuildConfig, IndexEntry, IndexMode, SignatureIndex};
use crate::error::{Error, Result};
use crate::gmm::GmmModel;
use crate::linalg::SymMatrix;
use crate::signature::GaussianSignature;

pub const INDEX_MAGIC: &[u8; 4] = b"SIDX";
pub const INDEX_VERSION: u16 = 1;

fn checksum(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(0u64, |acc, &b| acc.wrapping_add(b as u64))
}

fn put_str(out: &mut Vec<u8>, s: &str, what: &str) -> Result<()> {
    let len = u16::try_from(s.len())
        .map_err(|_| Error::Format(format!("{what} `{s}` longer than 65535 bytes")))?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

fn put_f64s(out: &mut Vec<u8>, v: &[f64]) {
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

pub fn encode_index(index: &SignatureIndex) -> Result<Vec<u8>> {
    let dim = u32::try_from(index.dim())
        .map_err(|_| Error::Format(format!("dimension {} exceeds u32", index.dim())))?;
    let count = u32::try_from(index.len())
        .map_err(|_| Error::Format(format!("{} entries exceed u32", index.len())))?;
    let mut out = Vec::new();
    out.extend_from_slice(INDEX_MAGIC);
    out.extend_from_slice(&INDEX_VERSION.to_le_bytes());
    out.push(index.mode().code());
    out.extend_from_slice(&dim.to_le_bytes());
    out.extend_from_slice(&count.to_le_bytes());
    for e in index.entries() {
        put_str(&mut out, &e.item_id, "item id")?;
        put_str(&mut out, &e.category, "category")?;
        put_f64s(&mut out, &e.signature.mean);
        put_f64s(&mut out, &e.signature.cov.to_row_major());
        if index.mode() == IndexMode::Gmm {
            let g = e.gmm.as_ref().expect("gmm index entries carry a mixture");
            let k = u32::try_from(g.k())
                .map_err(|_| Error::Format("component count exceeds u32".into()))?;
            out.extend_from_slice(&k.to_le_bytes());
            put_f64s(&mut out, g.weights());
            put_f64s(&mut out, g.means_flat());
            put_f64s(&mut out, g.vars_flat());
        }
    }
    let sum = checksum(&out);
    out.extend_from_slice(&sum.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| {
                Error::CorruptIndex(format!(
                    "truncated while reading {what} at byte {}",
                    self.pos
                ))
            })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let n = self.u16(what)? as usize;
        let bytes = self.take(n, what)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|_| Error::CorruptIndex(format!("{what} is not valid UTF-8")))
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let bytes = n
            .checked_mul(8)
            .ok_or_else(|| Error::Format(format!("{what} length overflows")))?;
        let raw = self.take(bytes, what)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

/// Decode an index; `config` supplies the build parameters.
pub fn decode_index(bytes: &[u8], config: BuildConfig) -> Result<SignatureIndex> {
    if bytes.len() < 8 {
        return Err(Error::CorruptIndex("file too short".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 8);
    let mut r = Reader { buf: body, pos: 0 };
    if r.take(4, "magic")
        .map_err(|_| Error::CorruptIndex("file too short".into()))?
        != INDEX_MAGIC
    {
        return Err(Error::CorruptIndex("bad magic, not a SIDX file".into()));
    }
    let version = r.u16("version")?;
    if version != INDEX_VERSION {
        return Err(Error::CorruptIndex(format!(
            "unsupported version {version}, expected {INDEX_VERSION}"
        )));
    }
    let stored = u64::from_le_bytes(tail.try_into().unwrap());
    if stored != checksum(body) {
        return Err(Error::CorruptIndex(
            "checksum mismatch (truncated or corrupted file)".into(),
        ));
    }
    let code = r.u8("mode")?;
    let mode = IndexMode::from_code(code)
        .ok_or_else(|| Error::CorruptIndex(format!("unknown mode byte {code}")))?;
    let dim = r.u32("dim")? as usize;
    let count = r.u32("entry count")? as usize;
    if dim == 0 {
        return Err(Error::CorruptIndex("dimension 0".into()));
    }
    let cov_len = dim
        .checked_mul(dim)
        .ok_or_else(|| Error::Format(format!("dimension {dim} overflows the covariance size")))?;

    let mut entries = Vec::with_capacity(count.min(body.len()));
    for _ in 0..count {
        let item_id = r.string("item id")?;
        let category = r.string("category")?;
        let mean = r.f64s(dim, "mean")?;
        let cov = SymMatrix::from_row_major(dim, &r.f64s(cov_len, "covariance")?)
            .map_err(|e| Error::CorruptIndex(format!("entry `{item_id}`: {e}")))?;
        let gmm = if mode == IndexMode::Gmm {
            let k = r.u32("component count")? as usize;
            let kd = k.checked_mul(dim).ok_or_else(|| {
                Error::Format(format!("{k} components of dimension {dim} overflow"))
            })?;
            let w = r.f64s(k, "weights")?;
            let m = r.f64s(kd, "component means")?;
            let v = r.f64s(kd, "component variances")?;
            Some(
                GmmModel::new(w, m, v, dim)
                    .map_err(|e| Error::CorruptIndex(format!("entry `{item_id}`: {e}")))?,
            )
        } else {
            None
        };
        entries.push(IndexEntry {
            item_id,
            category,
            signature: GaussianSignature {
                mean,
                cov,
                source: mode.source_tag(),
            },
            gmm,
        });
    }
    if r.pos != body.len() {
        return Err(Error::CorruptIndex(format!(
            "{} trailing bytes",
            body.len() - r.pos
        )));
    }
    SignatureIndex::new(mode, dim, entries, config).map_err(|e| Error::CorruptIndex(e.to_string()))
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".config.json");
    PathBuf::from(s)
}

/// Write the index and its config sidecar.
pub fn save_index(index: &SignatureIndex, path: &Path) -> Result<()> {
    let bytes = encode_index(index)?;
    let json =
        serde_json::to_vec_pretty(index.config()).map_err(|e| Error::Format(e.to_string()))?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    f.sync_all()?;
    fs::write(sidecar_path(path), json)?;
    Ok(())
}

/// Read an index. A missing sidecar yields the default config.
pub fn load_index(path: &Path) -> Result<SignatureIndex> {
    let bytes = fs::read(path)?;
    let side = sidecar_path(path);
    let config = if side.exists() {
        serde_json::from_slice(&fs::read(&side)?)
            .map_err(|e| Error::CorruptIndex(format!("{}: {e}", side.display())))?
    } else {
        BuildConfig::default()
    };
    decode_index(&bytes, config)
}
