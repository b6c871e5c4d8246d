//! Byte-level helpers shared by the log and index formats.

use sha2::{Digest, Sha256};

use super::RegistryError;

pub(crate) const CHECKSUM_LEN: usize = 8;

/// First 8 bytes of SHA-256.
pub(crate) fn checksum(payload: &[u8]) -> [u8; CHECKSUM_LEN] {
    let d = Sha256::digest(payload);
    d[..CHECKSUM_LEN].try_into().unwrap()
}

/// Length-prefixed record: u32 LE length, payload, checksum.
pub(crate) fn frame(payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + payload.len() + CHECKSUM_LEN);
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.extend_from_slice(payload);
    out.extend_from_slice(&checksum(payload));
    out
}

#[derive(Default)]
pub(crate) struct Writer(pub Vec<u8>);

impl Writer {
    pub fn u32(&mut self, v: u32) -> &mut Self {
        self.0.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.0.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn raw(&mut self, b: &[u8]) -> &mut Self {
        self.0.extend_from_slice(b);
        self
    }

    pub fn bytes(&mut self, b: &[u8]) -> &mut Self {
        self.u32(b.len() as u32).raw(b)
    }
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn raw(&mut self, n: usize) -> Result<&'a [u8], RegistryError> {
        if self.buf.len() - self.pos < n {
            return Err(RegistryError::Malformed("record truncated".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn array<const N: usize>(&mut self) -> Result<[u8; N], RegistryError> {
        Ok(self.raw(N)?.try_into().unwrap())
    }

    pub fn u32(&mut self) -> Result<u32, RegistryError> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    pub fn u64(&mut self) -> Result<u64, RegistryError> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    pub fn bytes(&mut self) -> Result<&'a [u8], RegistryError> {
        let n = self.u32()? as usize;
        self.raw(n)
    }

    pub fn string(&mut self) -> Result<String, RegistryError> {
        String::from_utf8(self.bytes()?.to_vec())
            .map_err(|_| RegistryError::Malformed("invalid utf-8".into()))
    }

    pub fn finish(self) -> Result<(), RegistryError> {
        if self.pos != self.buf.len() {
            return Err(RegistryError::Malformed("trailing bytes in record".into()));
        }
        Ok(())
    }
}
