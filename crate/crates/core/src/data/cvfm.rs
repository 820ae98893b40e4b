//! CVFM feature-map files.
//!
//! Layout, little-endian:
//!
//! ```text
//! 0..4    magic "CVFM"
//! 4       version (1)
//! 5..17   height, width, channels as u32
//! 17..    height*width*channels IEEE-754 binary32, row-major, channel fastest
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Tensor3;

const MAGIC: &[u8; 4] = b"CVFM";
const VERSION: u8 = 1;
const HEADER_LEN: usize = 17;

fn format_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Format {
        offset: offset as u64,
        message: message.into(),
    }
}

/// Serializes a tensor. Values are narrowed to `f32`; anything already
/// representable in `f32` (signed zeros included) survives bit-exactly.
pub fn encode_feature_map(t: &Tensor3) -> Result<Vec<u8>> {
    let (h, w, c) = t.shape();
    let dims = [h, w, c]
        .iter()
        .map(|&d| u32::try_from(d).map_err(|_| Error::Shape(format!("dimension {d} exceeds u32"))))
        .collect::<Result<Vec<u32>>>()?;
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * t.data().len());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    for d in dims {
        out.extend_from_slice(&d.to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_feature_map(bytes: &[u8]) -> Result<Tensor3> {
    if bytes.len() < 4 {
        return Err(format_err(bytes.len(), "file shorter than magic"));
    }
    if &bytes[0..4] != MAGIC {
        return Err(format_err(0, format!("bad magic {:?}", &bytes[0..4])));
    }
    if bytes.len() < HEADER_LEN {
        return Err(format_err(bytes.len(), "truncated header"));
    }
    if bytes[4] != VERSION {
        return Err(format_err(4, format!("unsupported version {}", bytes[4])));
    }
    let mut dims = [0usize; 3];
    for (i, d) in dims.iter_mut().enumerate() {
        let at = 5 + 4 * i;
        *d = u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes")) as usize;
        if *d == 0 {
            return Err(format_err(at, "zero dimension"));
        }
    }
    let [h, w, c] = dims;
    let payload = h
        .checked_mul(w)
        .and_then(|n| n.checked_mul(c))
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| format_err(5, "dimension product overflows"))?;
    let available = bytes.len() - HEADER_LEN;
    if payload > available {
        return Err(format_err(
            bytes.len(),
            format!("header declares {payload} payload bytes, file has {available}"),
        ));
    }
    if payload < available {
        return Err(format_err(HEADER_LEN + payload, "trailing bytes after payload"));
    }
    let mut data = Vec::with_capacity(payload / 4);
    for (i, chunk) in bytes[HEADER_LEN..].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
        if !v.is_finite() {
            return Err(format_err(HEADER_LEN + 4 * i, "non-finite value"));
        }
        data.push(f64::from(v));
    }
    Tensor3::new(h, w, c, data)
}

pub fn write_feature_map(path: impl AsRef<Path>, t: &Tensor3) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_feature_map(t)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_feature_map(path: impl AsRef<Path>) -> Result<Tensor3> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_feature_map(&bytes)
}
