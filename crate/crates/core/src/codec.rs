//! Checksummed little-endian binary container shared by the node-graph and
//! checkpoint files.
//!
//! Layout: `magic[4] | version: u32 | payload_len: u64 | payload | sha256(payload)[32]`.

use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CodecError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported version {found} (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },
    #[error("truncated input: needed {needed} bytes, {available} available")]
    Truncated { needed: usize, available: usize },
    #[error("checksum mismatch")]
    Checksum,
    #[error("trailing bytes after container")]
    Trailing,
    #[error("malformed payload: {0}")]
    Malformed(String),
}

/// Wraps `payload` into a container.
pub fn seal(magic: [u8; 4], version: u32, payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(payload.len() + 48);
    out.extend_from_slice(&magic);
    out.extend_from_slice(&version.to_le_bytes());
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(payload);
    out.extend_from_slice(&Sha256::digest(payload));
    out
}

/// Validates a container and returns its payload. Nothing is returned unless
/// every check passes.
pub fn open(magic: [u8; 4], version: u32, bytes: &[u8]) -> Result<&[u8], CodecError> {
    let header = 16;
    if bytes.len() < header {
        return Err(CodecError::Truncated {
            needed: header,
            available: bytes.len(),
        });
    }
    let found: [u8; 4] = bytes[0..4].try_into().unwrap();
    if found != magic {
        return Err(CodecError::BadMagic {
            expected: magic,
            found,
        });
    }
    let v = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if v != version {
        return Err(CodecError::VersionMismatch {
            expected: version,
            found: v,
        });
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let needed = header
        .checked_add(len)
        .and_then(|n| n.checked_add(32))
        .ok_or(CodecError::Malformed("length overflow".into()))?;
    if bytes.len() < needed {
        return Err(CodecError::Truncated {
            needed,
            available: bytes.len(),
        });
    }
    if bytes.len() > needed {
        return Err(CodecError::Trailing);
    }
    let payload = &bytes[header..header + len];
    let digest = Sha256::digest(payload);
    if digest.as_slice() != &bytes[header + len..needed] {
        return Err(CodecError::Checksum);
    }
    Ok(payload)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[derive(Default)]
pub struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new() -> Self {
        Self::default()
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

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_bits().to_le_bytes());
    }

    pub fn bytes(&mut self, v: &[u8]) {
        self.u64(v.len() as u64);
        self.buf.extend_from_slice(v);
    }

    pub fn str(&mut self, v: &str) {
        self.bytes(v.as_bytes());
    }

    pub fn raw(&mut self, v: &[u8]) {
        self.buf.extend_from_slice(v);
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
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

    fn take(&mut self, n: usize) -> Result<&'a [u8], CodecError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or(CodecError::Truncated {
                needed: self.pos.saturating_add(n),
                available: self.buf.len(),
            })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8, CodecError> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32, CodecError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64, CodecError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64, CodecError> {
        Ok(f64::from_bits(self.u64()?))
    }

    pub fn bytes(&mut self) -> Result<&'a [u8], CodecError> {
        let n = self.u64()? as usize;
        self.take(n)
    }

    pub fn str(&mut self) -> Result<String, CodecError> {
        let b = self.bytes()?;
        String::from_utf8(b.to_vec()).map_err(|e| CodecError::Malformed(e.to_string()))
    }

    pub fn raw(&mut self, n: usize) -> Result<&'a [u8], CodecError> {
        self.take(n)
    }

    /// Unread byte count.
    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn finish(self) -> Result<(), CodecError> {
        if self.pos == self.buf.len() {
            Ok(())
        } else {
            Err(CodecError::Trailing)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seal_open_round_trip() {
        let sealed = seal(*b"TEST", 3, b"hello");
        assert_eq!(open(*b"TEST", 3, &sealed).unwrap(), b"hello");
    }

    #[test]
    fn open_rejects_damage() {
        let sealed = seal(*b"TEST", 3, b"hello world");
        assert!(matches!(
            open(*b"TEST", 4, &sealed),
            Err(CodecError::VersionMismatch { .. })
        ));
        assert!(matches!(
            open(*b"TEST", 3, &sealed[..sealed.len() - 1]),
            Err(CodecError::Truncated { .. })
        ));
        let mut flipped = sealed.clone();
        flipped[18] ^= 0x40;
        assert_eq!(open(*b"TEST", 3, &flipped), Err(CodecError::Checksum));
        assert!(matches!(
            open(*b"NOPE", 3, &sealed),
            Err(CodecError::BadMagic { .. })
        ));
    }

    #[test]
    fn reader_reports_truncation() {
        let mut w = Writer::new();
        w.u32(7);
        let bytes = w.finish();
        let mut r = Reader::new(&bytes);
        assert_eq!(r.u32().unwrap(), 7);
        assert!(r.u8().is_err());
    }
}
