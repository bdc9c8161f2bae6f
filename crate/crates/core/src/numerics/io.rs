//! `TGT1` tensor files and the named-tensor container built on them.
//!
//! Tensor layout: magic `TGT1`, `u32` rank, `rank` x `u32` extents, then the
//! values as `f32`, everything little-endian.
//!
//! Container layout: magic `TGC1`, `u32` entry count, then per entry a `u32`
//! name length, the UTF-8 name, a `u64` payload length and a `TGT1` payload.

use std::collections::BTreeMap;
use std::path::Path;

use super::tensor::Tensor;
use crate::error::{Error, Result};

const TENSOR_MAGIC: &[u8; 4] = b"TGT1";
const CONTAINER_MAGIC: &[u8; 4] = b"TGC1";

pub fn encode_tensor(t: &Tensor<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 * t.rank() + 4 * t.len());
    out.extend_from_slice(TENSOR_MAGIC);
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::format(self.what, format!("truncated at byte {} (wanted {n} more)", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn read_tensor(r: &mut Reader<'_>) -> Result<Tensor<f32>> {
    if r.take(4)? != TENSOR_MAGIC {
        return Err(Error::format("TGT1 tensor", "bad magic"));
    }
    let rank = r.u32()? as usize;
    let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
    let count = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .filter(|&c| c.saturating_mul(4) <= r.buf.len())
        .ok_or_else(|| Error::format("TGT1 tensor", format!("implausible shape {shape:?}")))?;
    let raw = r.take(4 * count)?;
    let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    Tensor::new(&shape, data).map_err(|e| Error::format("TGT1 tensor", e.to_string()))
}

pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor<f32>> {
    let mut r = Reader { buf: bytes, pos: 0, what: "TGT1 tensor" };
    let t = read_tensor(&mut r)?;
    if r.pos != bytes.len() {
        return Err(Error::format("TGT1 tensor", format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(t)
}

pub fn write_tensor(path: impl AsRef<Path>, t: &Tensor<f32>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_tensor(t)).map_err(|e| Error::io(path, e))
}

pub fn read_tensor_file(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let path = path.as_ref();
    decode_tensor(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// Ordered map of named tensors. Iteration (and therefore encoding) is sorted by name.
pub type NamedTensors = BTreeMap<String, Tensor<f32>>;

pub fn encode_container(entries: &NamedTensors) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CONTAINER_MAGIC);
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, t) in entries {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        let payload = encode_tensor(t);
        out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&payload);
    }
    out
}

pub fn decode_container(bytes: &[u8]) -> Result<NamedTensors> {
    let mut r = Reader { buf: bytes, pos: 0, what: "tensor container" };
    if r.take(4)? != CONTAINER_MAGIC {
        return Err(Error::format("tensor container", "bad magic"));
    }
    let count = r.u32()?;
    let mut out = NamedTensors::new();
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|e| Error::format("tensor container", format!("entry name: {e}")))?
            .to_owned();
        let payload_len = usize::try_from(r.u64()?)
            .map_err(|_| Error::format("tensor container", "payload length overflow"))?;
        let payload = r.take(payload_len)?;
        let t = decode_tensor(payload)?;
        if out.insert(name.clone(), t).is_some() {
            return Err(Error::format("tensor container", format!("duplicate entry {name}")));
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::format("tensor container", "trailing bytes"));
    }
    Ok(out)
}

pub fn write_container(path: impl AsRef<Path>, entries: &NamedTensors) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_container(entries)).map_err(|e| Error::io(path, e))
}

pub fn read_container(path: impl AsRef<Path>) -> Result<NamedTensors> {
    let path = path.as_ref();
    decode_container(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// Stores arbitrary bytes exactly, one byte per `f32` element.
pub fn bytes_to_tensor(bytes: &[u8]) -> Tensor<f32> {
    if bytes.is_empty() {
        return Tensor::from_parts(vec![1], vec![-1.0]);
    }
    Tensor::from_parts(vec![bytes.len()], bytes.iter().map(|&b| b as f32).collect())
}

pub fn tensor_to_bytes(t: &Tensor<f32>) -> Result<Vec<u8>> {
    if t.data() == [-1.0] {
        return Ok(Vec::new());
    }
    t.data()
        .iter()
        .map(|&v| {
            if (0.0..=255.0).contains(&v) && v.fract() == 0.0 {
                Ok(v as u8)
            } else {
                Err(Error::format("byte tensor", format!("value {v} is not a byte")))
            }
        })
        .collect()
}

pub fn u64_to_tensor(v: u64) -> Tensor<f32> {
    bytes_to_tensor(&v.to_le_bytes())
}

pub fn tensor_to_u64(t: &Tensor<f32>) -> Result<u64> {
    let bytes = tensor_to_bytes(t)?;
    let arr: [u8; 8] = bytes
        .try_into()
        .map_err(|_| Error::format("u64 tensor", "expected 8 bytes"))?;
    Ok(u64::from_le_bytes(arr))
}
