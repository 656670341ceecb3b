//! Little-endian binary container for named f64 tensors plus string
//! metadata, guarded by magic bytes, a format version and a CRC-32.
//!
//! Layout: `magic[8] | version u32 | body_len u64 | body | crc32 u32`, where
//! the CRC covers everything before it and the body holds the metadata
//! entries followed by the tensors, each prefixed by a count.

use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: [u8; 8] = *b"POLYLMCK";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 + 8;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Container {
    pub meta: Vec<(String, String)>,
    pub tensors: Vec<(String, Vec<f64>)>,
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::CorruptCheckpoint("unexpected end of data".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::CorruptCheckpoint("invalid utf-8".into()))
    }
}

impl Container {
    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn require_meta(&self, key: &str) -> Result<&str> {
        self.meta(key)
            .ok_or_else(|| Error::CorruptCheckpoint(format!("missing metadata {key}")))
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        self.tensors.iter().find(|(k, _)| k == name).map(|(_, v)| v.as_slice())
    }

    pub fn require_tensor(&self, name: &str, len: usize) -> Result<&[f64]> {
        let t = self
            .tensor(name)
            .ok_or_else(|| Error::CorruptCheckpoint(format!("missing tensor {name}")))?;
        if t.len() != len {
            return Err(Error::CorruptCheckpoint(format!(
                "tensor {name} has {} values, expected {len}",
                t.len()
            )));
        }
        Ok(t)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut body = Vec::new();
        body.extend_from_slice(&(self.meta.len() as u32).to_le_bytes());
        for (k, v) in &self.meta {
            put_str(&mut body, k);
            put_str(&mut body, v);
        }
        body.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, data) in &self.tensors {
            put_str(&mut body, name);
            body.extend_from_slice(&(data.len() as u64).to_le_bytes());
            for x in data {
                body.extend_from_slice(&x.to_le_bytes());
            }
        }
        let mut out = Vec::with_capacity(HEADER_LEN + body.len() + 4);
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(body.len() as u64).to_le_bytes());
        out.extend_from_slice(&body);
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    /// Checks magic, then version, then length and checksum.
    pub fn decode(bytes: &[u8]) -> Result<Container> {
        let corrupt = |m: &str| Error::CorruptCheckpoint(m.into());
        if bytes.len() < 8 || bytes[..8] != MAGIC {
            return Err(corrupt("bad magic bytes"));
        }
        let mut r = Reader { bytes, pos: 8 };
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let body_len = r.u64()? as usize;
        if bytes.len() != HEADER_LEN.saturating_add(body_len).saturating_add(4) || body_len > bytes.len() {
            return Err(corrupt("length mismatch"));
        }
        let split = HEADER_LEN + body_len;
        let stored = u32::from_le_bytes(bytes[split..].try_into().expect("4 bytes"));
        if crc32fast::hash(&bytes[..split]) != stored {
            return Err(corrupt("checksum mismatch"));
        }
        let mut r = Reader {
            bytes: &bytes[..split],
            pos: HEADER_LEN,
        };
        let mut c = Container::default();
        for _ in 0..r.u32()? {
            let k = r.string()?;
            let v = r.string()?;
            c.meta.push((k, v));
        }
        for _ in 0..r.u32()? {
            let name = r.string()?;
            let n = r.u64()? as usize;
            let raw = r.take(n.checked_mul(8).ok_or_else(|| corrupt("tensor too large"))?)?;
            let data = raw
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
                .collect();
            c.tensors.push((name, data));
        }
        if r.pos != split {
            return Err(corrupt("trailing bytes"));
        }
        Ok(c)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::tsv::write_file(path, self.encode())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Container> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Container::decode(&bytes)
    }
}
