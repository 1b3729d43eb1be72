//! Little-endian binary encoding shared by every on-disk artifact.
//!
//! Each file starts with an [`ArtifactHeader`]: an 8-byte magic, a format
//! version, the artifact kind and the provenance triple (config hash,
//! global seed, toolkit version). Encoding is fully deterministic, so the
//! same in-memory value always produces the same bytes.

use std::fs;
use std::path::Path;

use crate::error::{HarError, Result};

pub const MAGIC: &[u8; 8] = b"HARKIT\0\x01";

#[derive(Default)]
pub struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.buf
    }

    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn usize(&mut self, v: usize) {
        self.u64(v as u64);
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn bool(&mut self, v: bool) {
        self.u8(v as u8);
    }

    pub fn str(&mut self, s: &str) {
        self.usize(s.len());
        self.bytes(s.as_bytes());
    }

    pub fn f64s(&mut self, v: &[f64]) {
        self.usize(v.len());
        for &x in v {
            self.f64(x);
        }
    }

    pub fn f32s(&mut self, v: &[f32]) {
        self.usize(v.len());
        for &x in v {
            self.buf.extend_from_slice(&x.to_le_bytes());
        }
    }

    pub fn u8s(&mut self, v: &[u8]) {
        self.usize(v.len());
        self.bytes(v);
    }

    pub fn u32s(&mut self, v: &[u32]) {
        self.usize(v.len());
        for &x in v {
            self.u32(x);
        }
    }

    pub fn usizes(&mut self, v: &[usize]) {
        self.usize(v.len());
        for &x in v {
            self.usize(x);
        }
    }
}

pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn is_empty(&self) -> bool {
        self.pos >= self.buf.len()
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| HarError::Format(format!("truncated input at byte {}", self.pos)))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn usize(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| HarError::Format(format!("length {v} overflows usize")))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn bool(&mut self) -> Result<bool> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            b => Err(HarError::Format(format!("invalid bool byte {b}"))),
        }
    }

    fn len_prefix(&mut self, elem: usize) -> Result<usize> {
        let n = self.usize()?;
        if n.saturating_mul(elem) > self.buf.len() - self.pos {
            return Err(HarError::Format(format!(
                "declared length {n} exceeds remaining input"
            )));
        }
        Ok(n)
    }

    pub fn str(&mut self) -> Result<String> {
        let n = self.len_prefix(1)?;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|e| HarError::Format(format!("invalid utf-8: {e}")))
    }

    pub fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.len_prefix(8)?;
        (0..n).map(|_| self.f64()).collect()
    }

    pub fn f32s(&mut self) -> Result<Vec<f32>> {
        let n = self.len_prefix(4)?;
        (0..n)
            .map(|_| Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap())))
            .collect()
    }

    pub fn u8s(&mut self) -> Result<Vec<u8>> {
        let n = self.len_prefix(1)?;
        Ok(self.take(n)?.to_vec())
    }

    pub fn u32s(&mut self) -> Result<Vec<u32>> {
        let n = self.len_prefix(4)?;
        (0..n).map(|_| self.u32()).collect()
    }

    pub fn usizes(&mut self) -> Result<Vec<usize>> {
        let n = self.len_prefix(8)?;
        (0..n).map(|_| self.usize()).collect()
    }
}

/// Provenance block at the start of every binary artifact.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArtifactHeader {
    pub kind: String,
    pub format_version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub toolkit_version: String,
}

impl ArtifactHeader {
    pub fn new(kind: &str, format_version: u32, config_hash: &str, seed: u64) -> Self {
        Self {
            kind: kind.to_string(),
            format_version,
            config_hash: config_hash.to_string(),
            seed,
            toolkit_version: crate::VERSION.to_string(),
        }
    }

    pub fn write(&self, w: &mut Writer) {
        w.bytes(MAGIC);
        w.str(&self.kind);
        w.u32(self.format_version);
        w.str(&self.config_hash);
        w.u64(self.seed);
        w.str(&self.toolkit_version);
    }

    pub fn read(r: &mut Reader<'_>) -> Result<Self> {
        let magic = r.take(8)?;
        if magic != MAGIC {
            return Err(HarError::Format("not a har-kit artifact (bad magic)".into()));
        }
        Ok(Self {
            kind: r.str()?,
            format_version: r.u32()?,
            config_hash: r.str()?,
            seed: r.u64()?,
            toolkit_version: r.str()?,
        })
    }

    /// Read a header and check it names the expected kind and version.
    pub fn expect(r: &mut Reader<'_>, kind: &str, version: u32) -> Result<Self> {
        let h = Self::read(r)?;
        if h.kind != kind {
            return Err(HarError::Format(format!(
                "expected a '{kind}' artifact, found '{}'",
                h.kind
            )));
        }
        if h.format_version != version {
            return Err(HarError::Format(format!(
                "unsupported '{kind}' format version {} (expected {version})",
                h.format_version
            )));
        }
        Ok(h)
    }
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| HarError::io(parent, e))?;
        }
    }
    fs::write(path, bytes).map_err(|e| HarError::io(path, e))
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| HarError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_rejects_wrong_kind() {
        let mut w = Writer::new();
        ArtifactHeader::new("forest", 1, "abc", 3).write(&mut w);
        let bytes = w.into_bytes();
        let err = ArtifactHeader::expect(&mut Reader::new(&bytes), "checkpoint", 1).unwrap_err();
        assert!(err.to_string().contains("expected a 'checkpoint'"));
        let h = ArtifactHeader::expect(&mut Reader::new(&bytes), "forest", 1).unwrap();
        assert_eq!(h.seed, 3);
    }

    #[test]
    fn truncated_input_is_an_error() {
        let mut w = Writer::new();
        w.f64s(&[1.0, 2.0, 3.0]);
        let bytes = w.into_bytes();
        assert!(Reader::new(&bytes[..bytes.len() - 1]).f64s().is_err());
    }

    proptest! {
        #[test]
        fn mixed_values_roundtrip(s in ".{0,20}", xs in proptest::collection::vec(any::<f64>(), 0..20), n in any::<u64>()) {
            let mut w = Writer::new();
            w.str(&s);
            w.f64s(&xs);
            w.u64(n);
            let bytes = w.into_bytes();
            let mut r = Reader::new(&bytes);
            prop_assert_eq!(r.str().unwrap(), s);
            let back = r.f64s().unwrap();
            prop_assert_eq!(back.len(), xs.len());
            for (a, b) in back.iter().zip(&xs) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
            prop_assert_eq!(r.u64().unwrap(), n);
            prop_assert!(r.is_empty());
        }
    }
}
