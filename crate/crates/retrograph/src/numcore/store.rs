//! Flat binary container of named tensors.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   8 bytes  "RGTENS01"
//! version u32      currently 1
//! count   u64
//! entry*  name_len u32, name utf-8, rows u64, cols u64, rows*cols f64
//! ```
//!
//! Writing is deterministic in entry order, so a save → load → save
//! cycle is byte-exact.

use super::tensor::Tensor2;
use thiserror::Error;

pub const STORE_MAGIC: [u8; 8] = *b"RGTENS01";
pub const STORE_VERSION: u32 = 1;

const MAX_NAME_LEN: usize = 4096;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("input truncated at byte {0}")]
    Truncated(usize),
    #[error("bad magic bytes")]
    BadMagic,
    #[error("unsupported container version {0}")]
    UnsupportedVersion(u32),
    #[error("tensor name is not valid utf-8")]
    BadName,
    #[error("tensor name length {0} exceeds limit")]
    NameTooLong(u64),
    #[error("tensor `{name}` declares {rows}x{cols} entries but the input is too short")]
    EntryTooLarge { name: String, rows: u64, cols: u64 },
    #[error("tensor `{0}` contains non-finite values")]
    NonFinite(String),
    #[error("trailing bytes after the last entry")]
    TrailingBytes,
}

pub fn write_store(out: &mut Vec<u8>, entries: &[(String, &Tensor2)]) {
    out.extend_from_slice(&STORE_MAGIC);
    out.extend_from_slice(&STORE_VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u64).to_le_bytes());
    for (name, tensor) in entries {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(tensor.rows() as u64).to_le_bytes());
        out.extend_from_slice(&(tensor.cols() as u64).to_le_bytes());
        for v in tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], StoreError> {
        if self.bytes.len() - self.pos < n {
            return Err(StoreError::Truncated(self.pos));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, StoreError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, StoreError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

pub fn read_store(bytes: &[u8]) -> Result<Vec<(String, Tensor2)>, StoreError> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(8)? != STORE_MAGIC {
        return Err(StoreError::BadMagic);
    }
    let version = cur.u32()?;
    if version != STORE_VERSION {
        return Err(StoreError::UnsupportedVersion(version));
    }
    let count = cur.u64()?;
    let mut entries = Vec::new();
    for _ in 0..count {
        let name_len = cur.u32()? as u64;
        if name_len as usize > MAX_NAME_LEN {
            return Err(StoreError::NameTooLong(name_len));
        }
        let name = std::str::from_utf8(cur.take(name_len as usize)?)
            .map_err(|_| StoreError::BadName)?
            .to_string();
        let rows = cur.u64()?;
        let cols = cur.u64()?;
        let numel = rows
            .checked_mul(cols)
            .filter(|n| n.checked_mul(8).is_some_and(|b| b as usize <= cur.remaining()))
            .ok_or_else(|| StoreError::EntryTooLarge {
                name: name.clone(),
                rows,
                cols,
            })? as usize;
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            data.push(f64::from_le_bytes(cur.take(8)?.try_into().unwrap()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(StoreError::NonFinite(name));
        }
        let tensor = Tensor2::from_vec(rows as usize, cols as usize, data)
            .expect("length matches by construction");
        entries.push((name, tensor));
    }
    if cur.remaining() != 0 {
        return Err(StoreError::TrailingBytes);
    }
    Ok(entries)
}
