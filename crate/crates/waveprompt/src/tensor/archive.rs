//! Binary tensor archive: the checkpoint and weight-exchange format.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic   8 bytes  "WPTENSOR"
//! version u32      1
//! count   u32
//! record  repeated count times:
//!   name_len u32, name (UTF-8), rank u32, dims u64 x rank,
//!   data f64 x product(dims)
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"WPTENSOR";
const VERSION: u32 = 1;

/// Serialize named tensors in the given order.
pub fn archive_bytes(items: &[(&str, &Tensor)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(items.len() as u32).to_le_bytes());
    for (name, t) in items {
        let nb = name.as_bytes();
        out.extend_from_slice(&(nb.len() as u32).to_le_bytes());
        out.extend_from_slice(nb);
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn write_archive(path: &Path, items: &[(&str, &Tensor)]) -> Result<()> {
    fs::write(path, archive_bytes(items))?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Archive(format!("truncated archive while reading {what}")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.take(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }
}

/// Parse an archive back into named tensors, preserving record order.
pub fn parse_archive(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8, "magic")? != MAGIC {
        return Err(Error::Archive("bad magic: not a tensor archive".into()));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Archive(format!("unsupported archive version {version}")));
    }
    let count = r.u32("tensor count")? as usize;
    let mut items = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u32("name length")? as usize;
        let name = String::from_utf8(r.take(name_len, "name")?.to_vec())
            .map_err(|_| Error::Archive("tensor name is not UTF-8".into()))?;
        let rank = r.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64("dim")? as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = r.take(numel * 8, &format!("data of {name}"))?;
        let data: Vec<f64> =
            raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        items.push((name, Tensor::new(shape, data)?));
    }
    if r.pos != bytes.len() {
        return Err(Error::Archive(format!("{} trailing bytes after last record", bytes.len() - r.pos)));
    }
    Ok(items)
}

pub fn read_archive(path: &Path) -> Result<Vec<(String, Tensor)>> {
    parse_archive(&fs::read(path)?)
}
