//! Binary checkpoint container.
//!
//! ```text
//! b"CALN" | version: u32 | count: u32 |
//!   count x { name_len: u32 | name | rank: u32 | dims: rank x u32 | data: prod(dims) x f32 }
//! ```
//!
//! All integers and floats are little-endian.

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"CALN";
pub const VERSION: u32 = 1;

const MAX_NAME: usize = 256;
const MAX_RANK: usize = 8;
const MAX_ELEMS: usize = 1 << 26;

/// Ordered list of named tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct NamedTensors {
    pub tensors: Vec<(String, Tensor)>,
}

fn bad(detail: impl Into<String>) -> Error {
    Error::Format {
        what: "checkpoint",
        detail: detail.into(),
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|e| *e <= self.buf.len())
            .ok_or_else(|| bad(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

impl NamedTensors {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for d in t.shape() {
                out.extend_from_slice(&(*d as u32).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4).map_err(|_| bad("missing magic"))? != MAGIC {
            return Err(bad("bad magic"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let count = r.u32()? as usize;
        let mut tensors = Vec::new();
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            if name_len > MAX_NAME {
                return Err(bad(format!("name length {name_len} too large")));
            }
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| bad("tensor name is not utf-8"))?
                .to_string();
            if tensors.iter().any(|(n, _): &(String, Tensor)| *n == name) {
                return Err(bad(format!("duplicate tensor {name}")));
            }
            let rank = r.u32()? as usize;
            if rank > MAX_RANK {
                return Err(bad(format!("rank {rank} too large")));
            }
            let mut shape = Vec::with_capacity(rank);
            let mut n: usize = 1;
            for _ in 0..rank {
                let d = r.u32()? as usize;
                n = n
                    .checked_mul(d)
                    .filter(|n| *n <= MAX_ELEMS)
                    .ok_or_else(|| bad("tensor too large"))?;
                shape.push(d);
            }
            let raw = r.take(n * 4)?;
            let mut data = Vec::with_capacity(n);
            for c in raw.chunks_exact(4) {
                let v = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
                if !v.is_finite() {
                    return Err(bad(format!("non-finite value in {name}")));
                }
                data.push(f64::from(v));
            }
            let t = Tensor::new(shape, data).map_err(|e| bad(e.to_string()))?;
            tensors.push((name, t));
        }
        if r.pos != bytes.len() {
            return Err(bad(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(NamedTensors { tensors })
    }
}
