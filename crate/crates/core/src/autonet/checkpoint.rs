//! Checkpoint file: magic `DXF1`, a length-prefixed JSON config block, then
//! every parameter tensor in declaration order as little-endian `f64`.
//!
//! ```text
//! "DXF1" | u32 config_len | config JSON | u32 tensor_count |
//!   per tensor: u32 rank | u64 dims[rank] | f64 values[prod(dims)]
//! ```

use std::fs;
use std::path::Path;

use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"DXF1";

pub fn encode_checkpoint(config: &Value, tensors: &[&Tensor]) -> Result<Vec<u8>> {
    let cfg = serde_json::to_vec(config)?;
    let mut out = Vec::with_capacity(
        16 + cfg.len() + tensors.iter().map(|t| 8 * t.len() + 40).sum::<usize>(),
    );
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    out.extend_from_slice(&cfg);
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::parse(self.pos, "checkpoint truncated")),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(Value, Vec<Tensor>)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::parse(0, "not a DXF1 checkpoint"));
    }
    let len = r.u32()? as usize;
    let cfg_at = r.pos;
    let config: Value = serde_json::from_slice(r.take(len)?)
        .map_err(|e| Error::parse(cfg_at, format!("config block: {}", e)))?;
    let count = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let rank = r.u32()? as usize;
        let shape = (0..rank)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = r.take(
            n.checked_mul(8)
                .ok_or_else(|| Error::parse(r.pos, "tensor too large"))?,
        )?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        tensors.push(Tensor::from_vec(&shape, data)?);
    }
    if r.pos != bytes.len() {
        return Err(Error::parse(r.pos, "trailing bytes after last tensor"));
    }
    Ok((config, tensors))
}

pub fn write_checkpoint(path: impl AsRef<Path>, config: &Value, tensors: &[&Tensor]) -> Result<()> {
    fs::write(path, encode_checkpoint(config, tensors)?)?;
    Ok(())
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<(Value, Vec<Tensor>)> {
    decode_checkpoint(&fs::read(path)?)
}

/// Hex SHA-256 of a byte string.
pub fn fingerprint(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{:02x}", b)).collect()
}
