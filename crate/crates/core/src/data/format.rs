//! The `EMLT` tensor container shared by datasets, model checkpoints and
//! exemplar buffers.
//!
//! Layout: 4 magic bytes `EMLT`, then little-endian `u32` version (1),
//! `u32` row count, `u32` row width, then `count * dim` little-endian `f32`
//! values in row-major order. Nothing else, no padding.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"EMLT";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

pub fn encode(t: &Tensor) -> Vec<u8> {
    let (count, dim) = t.matrix_dims();
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * t.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(count as u32).to_le_bytes());
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Decodes a `[count, dim]` tensor. `path` only labels errors.
pub fn decode(bytes: &[u8], path: &Path) -> Result<Tensor> {
    let truncated = || {
        Error::io(
            path,
            io::Error::new(io::ErrorKind::UnexpectedEof, "truncated EMLT file"),
        )
    };
    if bytes.len() < 4 {
        return Err(truncated());
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::format(
            path,
            format!("bad magic {:?}", String::from_utf8_lossy(&bytes[..4])),
        ));
    }
    if bytes.len() < HEADER_LEN {
        return Err(truncated());
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let version = word(4);
    if version != VERSION {
        return Err(Error::format(path, format!("unsupported version {version}")));
    }
    let (count, dim) = (word(8) as usize, word(12) as usize);
    let body = &bytes[HEADER_LEN..];
    let expected = count
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::format(path, "header sizes overflow"))?;
    if body.len() < expected {
        return Err(truncated());
    }
    if body.len() > expected {
        return Err(Error::format(
            path,
            format!("{} trailing bytes", body.len() - expected),
        ));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Tensor::matrix(count, dim, data)
}

pub fn write(path: &Path, t: &Tensor) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode(t)).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<Tensor> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}
