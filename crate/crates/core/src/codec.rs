//! Little-endian framing shared by the dataset and checkpoint formats: a
//! 4-byte magic, a `u16` version, a body, and a trailing CRC32 of everything
//! before it.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub(crate) struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new(magic: &[u8; 4], version: u16) -> Self {
        let mut buf = Vec::new();
        buf.extend_from_slice(magic);
        buf.extend_from_slice(&version.to_le_bytes());
        Self { buf }
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn bytes(&mut self, v: &[u8]) {
        self.buf.extend_from_slice(v);
    }

    pub fn str(&mut self, s: &str) {
        self.u16(s.len() as u16);
        self.bytes(s.as_bytes());
    }

    pub fn f32s<T: Scalar>(&mut self, v: &[T]) {
        for x in v {
            self.buf.extend_from_slice(&x.to_f32_le());
        }
    }

    pub fn finish(mut self) -> Vec<u8> {
        let crc = crc32fast::hash(&self.buf);
        self.buf.extend_from_slice(&crc.to_le_bytes());
        self.buf
    }
}

pub(crate) struct Reader<'a> {
    body: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    /// Checks magic, version and checksum; the returned reader is positioned
    /// after the version field.
    pub fn open(bytes: &'a [u8], magic: &[u8; 4], version: u16) -> Result<Self> {
        if bytes.len() < 4 {
            return Err(Error::Truncated("missing magic".into()));
        }
        if &bytes[..4] != magic {
            return Err(Error::BadMagic {
                expected: u32::from_be_bytes(*magic),
                found: u32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]),
            });
        }
        if bytes.len() < 10 {
            return Err(Error::Truncated("header".into()));
        }
        let found = u16::from_le_bytes([bytes[4], bytes[5]]);
        if found != version {
            return Err(Error::BadVersion(found));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes([tail[0], tail[1], tail[2], tail[3]]);
        let computed = crc32fast::hash(body);
        if stored != computed {
            return Err(Error::Checksum { stored, computed });
        }
        Ok(Self { body, pos: 6 })
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let out = self
            .body
            .get(self.pos..self.pos + n)
            .ok_or_else(|| Error::Truncated(format!("need {n} bytes at offset {}", self.pos)))?;
        self.pos += n;
        Ok(out)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    pub fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub fn bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        self.take(n)
    }

    pub fn str(&mut self) -> Result<String> {
        let n = self.u16()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| Error::Truncated(format!("utf-8: {e}")))
    }

    pub fn f32s<T: Scalar>(&mut self, n: usize) -> Result<Vec<T>> {
        let b = self.take(n * 4)?;
        Ok(b.chunks_exact(4)
            .map(|c| T::from_f32_le([c[0], c[1], c[2], c[3]]))
            .collect())
    }

    pub fn finish(self) -> Result<()> {
        if self.pos != self.body.len() {
            return Err(Error::Truncated(format!(
                "{} trailing bytes",
                self.body.len() - self.pos
            )));
        }
        Ok(())
    }
}
