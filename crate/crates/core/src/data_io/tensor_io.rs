//! Little-endian tensor container and named-tensor checkpoints.
//!
//! Tensor: `"FTNS"`, version byte, rank byte, `rank` u32 extents, f32 payload.
//! Checkpoint: `"FTCK"`, version byte, u32 record count, then per record a
//! u32 name length, the UTF-8 name and an embedded tensor container.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const TENSOR_MAGIC: &[u8; 4] = b"FTNS";
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"FTCK";
pub const FORMAT_VERSION: u8 = 1;

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Parse { offset: self.bytes.len(), msg: format!("truncated {what}") })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn header(&mut self, magic: &[u8; 4]) -> Result<()> {
        let m = self.take(4, "magic")?;
        if m != magic {
            return Err(format_err(format!("bad magic {:?}, expected {:?}", String::from_utf8_lossy(m), String::from_utf8_lossy(magic))));
        }
        let v = self.u8("version")?;
        if v != FORMAT_VERSION {
            return Err(format_err(format!("unsupported version {v}")));
        }
        Ok(())
    }

    fn tensor(&mut self) -> Result<Tensor> {
        self.header(TENSOR_MAGIC)?;
        let rank = self.u8("rank")? as usize;
        if !(1..=4).contains(&rank) {
            return Err(format_err(format!("rank {rank} outside 1..=4")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(self.u32("extent")? as usize);
        }
        let n = shape.iter().try_fold(1usize, |a, &b| a.checked_mul(b)).ok_or_else(|| format_err("extents overflow"))?;
        let payload = self.take(n.checked_mul(4).ok_or_else(|| format_err("extents overflow"))?, "payload")?;
        let data = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64).collect();
        Tensor::new(&shape, data)
    }
}

fn write_tensor(t: &Tensor, out: &mut Vec<u8>) -> Result<()> {
    out.extend_from_slice(TENSOR_MAGIC);
    out.push(FORMAT_VERSION);
    out.push(t.rank() as u8);
    for &e in t.shape() {
        let e = u32::try_from(e).map_err(|_| format_err(format!("extent {e} exceeds 32 bits")))?;
        out.extend_from_slice(&e.to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(())
}

pub fn encode_tensor(t: &Tensor) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(6 + 4 * t.rank() + 4 * t.len());
    write_tensor(t, &mut out)?;
    Ok(out)
}

pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor> {
    let mut r = Reader { bytes, pos: 0 };
    let t = r.tensor()?;
    if r.pos != bytes.len() {
        return Err(format_err(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(t)
}

pub fn encode_checkpoint(records: &[(String, &Tensor)]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.push(FORMAT_VERSION);
    out.extend_from_slice(&(records.len() as u32).to_le_bytes());
    for (name, t) in records {
        if name.is_empty() {
            return Err(format_err("checkpoint record with an empty name"));
        }
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        write_tensor(t, &mut out)?;
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut r = Reader { bytes, pos: 0 };
    r.header(CHECKPOINT_MAGIC)?;
    let count = r.u32("record count")?;
    let mut out = Vec::new();
    for _ in 0..count {
        let len = r.u32("name length")? as usize;
        let offset = r.pos;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| Error::Parse { offset, msg: "record name is not UTF-8".into() })?;
        if name.is_empty() {
            return Err(format_err("checkpoint record with an empty name"));
        }
        out.push((name.to_string(), r.tensor()?));
    }
    if r.pos != bytes.len() {
        return Err(format_err(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(out)
}

pub fn save_tensor(t: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_tensor(t)?)?;
    Ok(())
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    decode_tensor(&fs::read(path)?)
}

pub fn save_checkpoint(records: &[(String, &Tensor)], path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_checkpoint(records)?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Vec<(String, Tensor)>> {
    decode_checkpoint(&fs::read(path)?)
}
