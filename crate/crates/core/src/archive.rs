//! Self-describing binary record shared by checkpoints and dataset samples.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      [u8; 4]
//! version    u32
//! count      u32                 number of entries
//! entry * count:
//!   name_len u16, name [u8; name_len] (UTF-8)
//!   kind     u8                  0 = f64 matrix, 1 = u64 matrix, 2 = UTF-8 text
//!   rows     u64
//!   cols     u64                 for text: rows = byte length, cols = 1
//!   payload  rows*cols*8 bytes (f64/u64) or rows bytes (text)
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub enum Entry {
    F64(Tensor),
    U64 { rows: usize, cols: usize, data: Vec<u64> },
    Text(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Archive {
    pub magic: [u8; 4],
    pub version: u32,
    entries: Vec<(String, Entry)>,
}

impl Archive {
    pub fn new(magic: [u8; 4], version: u32) -> Self {
        Archive {
            magic,
            version,
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, entry: Entry) {
        self.entries.push((name.into(), entry));
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &Entry)> {
        self.entries.iter().map(|(n, e)| (n.as_str(), e))
    }

    pub fn get(&self, name: &str) -> Option<&Entry> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, e)| e)
    }

    fn missing(name: &str) -> Error {
        Error::Format(format!("missing entry `{name}`"))
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        match self.get(name) {
            Some(Entry::F64(t)) => Ok(t),
            Some(_) => Err(Error::Format(format!("`{name}` is not a float tensor"))),
            None => Err(Self::missing(name)),
        }
    }

    pub fn u64s(&self, name: &str) -> Result<&[u64]> {
        match self.get(name) {
            Some(Entry::U64 { data, .. }) => Ok(data),
            Some(_) => Err(Error::Format(format!("`{name}` is not an integer array"))),
            None => Err(Self::missing(name)),
        }
    }

    pub fn u64_matrix(&self, name: &str) -> Result<(usize, usize, &[u64])> {
        match self.get(name) {
            Some(Entry::U64 { rows, cols, data }) => Ok((*rows, *cols, data)),
            Some(_) => Err(Error::Format(format!("`{name}` is not an integer array"))),
            None => Err(Self::missing(name)),
        }
    }

    pub fn text(&self, name: &str) -> Result<&str> {
        match self.get(name) {
            Some(Entry::Text(s)) => Ok(s),
            Some(_) => Err(Error::Format(format!("`{name}` is not text"))),
            None => Err(Self::missing(name)),
        }
    }

    pub fn expect(&self, magic: [u8; 4], version: u32) -> Result<()> {
        if self.magic != magic {
            return Err(Error::Format(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(&self.magic),
                String::from_utf8_lossy(&magic)
            )));
        }
        if self.version != version {
            return Err(Error::Format(format!(
                "unsupported version {}, expected {version}",
                self.version
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&self.magic);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, entry) in &self.entries {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            match entry {
                Entry::F64(t) => {
                    out.push(0);
                    out.extend_from_slice(&(t.rows() as u64).to_le_bytes());
                    out.extend_from_slice(&(t.cols() as u64).to_le_bytes());
                    for v in t.data() {
                        out.extend_from_slice(&v.to_le_bytes());
                    }
                }
                Entry::U64 { rows, cols, data } => {
                    out.push(1);
                    out.extend_from_slice(&(*rows as u64).to_le_bytes());
                    out.extend_from_slice(&(*cols as u64).to_le_bytes());
                    for v in data {
                        out.extend_from_slice(&v.to_le_bytes());
                    }
                }
                Entry::Text(s) => {
                    out.push(2);
                    out.extend_from_slice(&(s.len() as u64).to_le_bytes());
                    out.extend_from_slice(&1u64.to_le_bytes());
                    out.extend_from_slice(s.as_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4)?.try_into().unwrap();
        let version = r.u32()?;
        let count = r.u32()? as usize;
        let mut a = Archive::new(magic, version);
        for _ in 0..count {
            let len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::Format("entry name is not UTF-8".into()))?
                .to_string();
            let kind = r.take(1)?[0];
            let rows = r.u64()? as usize;
            let cols = r.u64()? as usize;
            let entry = match kind {
                0 => {
                    let n = checked_len(rows, cols)?;
                    let data = r
                        .take(n * 8)?
                        .chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                        .collect();
                    Entry::F64(Tensor::from_vec(rows, cols, data)?)
                }
                1 => {
                    let n = checked_len(rows, cols)?;
                    let data = r
                        .take(n * 8)?
                        .chunks_exact(8)
                        .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
                        .collect();
                    Entry::U64 { rows, cols, data }
                }
                2 => {
                    let s = std::str::from_utf8(r.take(rows)?)
                        .map_err(|_| Error::Format(format!("`{name}` is not UTF-8")))?;
                    Entry::Text(s.to_string())
                }
                k => return Err(Error::Format(format!("unknown entry kind {k} for `{name}`"))),
            };
            a.entries.push((name, entry));
        }
        if r.pos != bytes.len() {
            return Err(Error::Format("trailing bytes after last entry".into()));
        }
        Ok(a)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn checked_len(rows: usize, cols: usize) -> Result<usize> {
    rows.checked_mul(cols)
        .filter(|n| *n <= usize::MAX / 8)
        .ok_or_else(|| Error::Format("entry too large".into()))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::Format("truncated record".into()));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    proptest! {
        #[test]
        fn bytes_round_trip(
            values in prop::collection::vec(-1e6f64..1e6, 0..40),
            ints in prop::collection::vec(any::<u64>(), 0..10),
            text in "[a-z ]{0,20}",
        ) {
            let mut a = Archive::new(*b"TEST", 3);
            a.push("f", Entry::F64(Tensor::from_vec(1, values.len(), values).unwrap()));
            a.push("i", Entry::U64 { rows: ints.len(), cols: 1, data: ints });
            a.push("t", Entry::Text(text));
            let back = Archive::from_bytes(&a.to_bytes()).unwrap();
            prop_assert_eq!(back, a);
        }
    }

    #[test]
    fn truncation_and_magic_are_detected() {
        let mut a = Archive::new(*b"TEST", 1);
        a.push("x", Entry::F64(Tensor::zeros(2, 2)));
        let bytes = a.to_bytes();
        assert!(Archive::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let back = Archive::from_bytes(&bytes).unwrap();
        assert!(back.expect(*b"NOPE", 1).is_err());
        assert!(back.expect(*b"TEST", 2).is_err());
        assert!(back.expect(*b"TEST", 1).is_ok());
    }
}
