//! Binary checkpoint format for parameter sets.
//!
//! Layout: an 8-byte magic (`HMRCKPT1`), one version byte, then one
//! record per parameter in set order:
//!
//! ```text
//! [name_len u32 LE][name utf-8][rank u32 LE][dim u32 LE]*rank [f64 LE]*numel
//! ```
//!
//! Values are row-major f64 little-endian, so a round trip is bit-exact.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::{ParamSet, Tensor};

const MAGIC: &[u8; 8] = b"HMRCKPT1";
const VERSION: u8 = 1;

pub fn encode_checkpoint(params: &ParamSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + params.total_coords() * 8);
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    for (name, t) in params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        let shape = t.shape();
        out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &d in shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &x in t.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, field: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or_else(|| err(field, "length overflow"))?;
        let slice = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| err(field, format!("file truncated at byte {}", self.pos)))?;
        self.pos = end;
        Ok(slice)
    }

    fn u32(&mut self, field: &str) -> Result<u32> {
        let b = self.take(4, field)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

fn err(field: &str, what: impl Into<String>) -> Error {
    Error::Load { file: String::from("checkpoint"), field: String::from(field), what: what.into() }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ParamSet> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8, "magic").map(|m| m != MAGIC).unwrap_or(true) {
        return Err(err("magic", "missing HMRCKPT1 header"));
    }
    let version = r.take(1, "version")?[0];
    if version != VERSION {
        return Err(err("version", format!("unsupported version {version}")));
    }
    let mut params = ParamSet::default();
    while !r.done() {
        let name_len = r.u32("name length")? as usize;
        if name_len > 4096 {
            return Err(err("name length", format!("{name_len} bytes is implausibly long")));
        }
        let name = core::str::from_utf8(r.take(name_len, "name")?)
            .map_err(|_| err("name", "not valid UTF-8"))?;
        let rank = r.u32(name)? as usize;
        if rank > 8 {
            return Err(err(name, format!("rank {rank} is implausibly high")));
        }
        let mut shape = Vec::with_capacity(rank);
        let mut numel = 1usize;
        for _ in 0..rank {
            let d = r.u32(name)? as usize;
            numel = numel
                .checked_mul(d)
                .ok_or_else(|| err(name, "element count overflow"))?;
            shape.push(d);
        }
        let byte_len =
            numel.checked_mul(8).ok_or_else(|| err(name, "element count overflow"))?;
        let raw = r.take(byte_len, name)?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes([c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]]))
            .collect();
        let tensor = Tensor::new(shape, data).map_err(|e| err(name, format!("{e}")))?;
        params.push(name, tensor).map_err(|e| err(name, format!("{e}")))?;
    }
    Ok(params)
}
