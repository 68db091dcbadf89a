//! Little-endian binary formats: datasets (`SDAT`), models (`SENC`),
//! importance maps with their partition (`SIMP`), permissions (`SPRM`) and
//! the provider's cipher bundle (`SBND`).
//!
//! Every reader reports the byte offset where parsing stopped.

mod bundle;
mod dataset;
mod importance;
mod model;
mod permission;

use std::fs;
use std::path::Path;

use thiserror::Error;

pub use bundle::{read_bundle, write_bundle};
pub use dataset::{read_dataset, write_dataset};
pub use importance::{read_importance, write_importance, ImportanceFile};
pub use model::{read_model, write_model};
pub use permission::{read_permission, write_permission};

pub const VERSION: u8 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum FormatError {
    #[error("bad magic at offset 0: expected {expected}")]
    BadMagic { expected: &'static str },
    #[error("unsupported {format} version {found} at offset 4 (this build reads version {VERSION})")]
    Version { format: &'static str, found: u8 },
    #[error("truncated at offset {offset} while reading {what}")]
    Truncated { offset: usize, what: String },
    #[error("invalid {what} at offset {offset}: {detail}")]
    Invalid { offset: usize, what: String, detail: String },
    #[error("{count} trailing bytes at offset {offset}")]
    Trailing { offset: usize, count: usize },
}

impl FormatError {
    pub fn offset(&self) -> usize {
        match self {
            FormatError::BadMagic { .. } => 0,
            FormatError::Version { .. } => 4,
            FormatError::Truncated { offset, .. } | FormatError::Invalid { offset, .. } | FormatError::Trailing { offset, .. } => *offset,
        }
    }
}

pub type Result<T> = std::result::Result<T, FormatError>;

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    /// Checks magic and version.
    pub fn open(buf: &'a [u8], magic: &'static str) -> Result<Self> {
        if buf.len() < 4 || &buf[..4] != magic.as_bytes() {
            return Err(FormatError::BadMagic { expected: magic });
        }
        let mut r = Reader { buf, pos: 4 };
        let v = r.u8("version")?;
        if v != VERSION {
            return Err(FormatError::Version { format: magic, found: v });
        }
        Ok(r)
    }

    pub fn offset(&self) -> usize {
        self.pos
    }

    pub fn bytes(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(FormatError::Truncated { offset: self.buf.len(), what: what.into() });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.bytes(1, what)?[0])
    }

    pub fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.bytes(2, what)?.try_into().unwrap()))
    }

    pub fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4, what)?.try_into().unwrap()))
    }

    pub fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes(8, what)?.try_into().unwrap()))
    }

    pub fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let raw = self.bytes(n.checked_mul(8).ok_or_else(|| self.invalid(what, "length overflow"))?, what)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    /// `count u32` followed by that many `u32` indices.
    pub fn indices(&mut self, what: &str) -> Result<Vec<usize>> {
        let n = self.u32(what)? as usize;
        let raw = self.bytes(n * 4, what)?;
        Ok(raw.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize).collect())
    }

    /// Four `u32` extents; trailing zeros mark unused dimensions.
    pub fn shape(&mut self, what: &str) -> Result<Vec<usize>> {
        let at = self.pos;
        let dims: Vec<usize> = (0..4).map(|_| self.u32(what).map(|d| d as usize)).collect::<Result<_>>()?;
        let rank = dims.iter().take_while(|&&d| d > 0).count();
        if dims[rank..].iter().any(|&d| d > 0) {
            return Err(FormatError::Invalid { offset: at, what: what.into(), detail: format!("zero extent inside {dims:?}") });
        }
        Ok(dims[..rank].to_vec())
    }

    pub fn invalid(&self, what: &str, detail: impl Into<String>) -> FormatError {
        FormatError::Invalid { offset: self.pos, what: what.into(), detail: detail.into() }
    }

    pub fn finish(self) -> Result<()> {
        match self.buf.len() - self.pos {
            0 => Ok(()),
            count => Err(FormatError::Trailing { offset: self.pos, count }),
        }
    }
}

#[derive(Default)]
pub(crate) struct Writer {
    pub buf: Vec<u8>,
}

impl Writer {
    pub fn new(magic: &str) -> Self {
        let mut w = Writer { buf: magic.as_bytes().to_vec() };
        w.u8(VERSION);
        w
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u16(&mut self, v: usize) {
        self.buf.extend_from_slice(&u16::try_from(v).expect("value fits the u16 field").to_le_bytes());
    }

    pub fn u32(&mut self, v: usize) {
        self.buf.extend_from_slice(&u32::try_from(v).expect("value fits the u32 field").to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64s(&mut self, vs: &[f64]) {
        vs.iter().for_each(|&v| self.f64(v));
    }

    pub fn indices(&mut self, idx: &[usize]) {
        self.u32(idx.len());
        idx.iter().for_each(|&i| self.u32(i));
    }

    pub fn shape(&mut self, shape: &[usize]) {
        for k in 0..4 {
            self.u32(shape.get(k).copied().unwrap_or(0));
        }
    }
}

/// Read a whole file and parse it, naming the path in errors.
pub fn load<T>(path: &Path, parse: impl FnOnce(&[u8]) -> Result<T>) -> anyhow::Result<T> {
    use anyhow::Context;
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    parse(&bytes).with_context(|| format!("parsing {}", path.display()))
}

pub fn save(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    use anyhow::Context;
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

/// Write a file readable by its owner only.
pub fn save_private(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    use anyhow::Context;
    use std::io::Write;
    let mut opts = fs::OpenOptions::new();
    opts.write(true).create(true).truncate(true);
    #[cfg(unix)]
    {
        use std::os::unix::fs::{OpenOptionsExt, PermissionsExt};
        opts.mode(0o600);
        // An existing file keeps its mode on open; tighten it first.
        if path.exists() {
            fs::set_permissions(path, fs::Permissions::from_mode(0o600)).with_context(|| format!("restricting {}", path.display()))?;
        }
    }
    let mut f = opts.open(path).with_context(|| format!("creating {}", path.display()))?;
    f.write_all(bytes).with_context(|| format!("writing {}", path.display()))
}
