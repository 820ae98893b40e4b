//! Model checkpoints.
//!
//! ```text
//! 0..4    magic "CVMP"
//! 4       version (1)
//! 5..21   channels, hidden, embed_dim, coord_channels as u32
//! 21..    f64 blocks: w1_street, b1_street, w1_aerial, b1_aerial, w2, b2
//! ```
//!
//! Everything little-endian; matrices row-major `out × in`.

use std::fs;
use std::path::Path;

use super::network::{ModelDims, ModelParams};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"CVMP";
const VERSION: u8 = 1;
const HEADER_LEN: usize = 21;

pub fn encode_checkpoint(p: &ModelParams) -> Vec<u8> {
    let d = p.dims;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    for v in [d.channels, d.hidden, d.embed_dim, d.coord_channels] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for block in p.blocks() {
        for v in block {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ModelParams> {
    let fail = |offset: usize, message: &str| Error::Format {
        offset: offset as u64,
        message: message.to_string(),
    };
    if bytes.len() < HEADER_LEN {
        return Err(fail(bytes.len(), "truncated checkpoint header"));
    }
    if &bytes[0..4] != MAGIC {
        return Err(fail(0, "bad checkpoint magic"));
    }
    if bytes[4] != VERSION {
        return Err(fail(4, "unsupported checkpoint version"));
    }
    let field = |i: usize| u32::from_le_bytes(bytes[5 + 4 * i..9 + 4 * i].try_into().unwrap()) as usize;
    let dims = ModelDims {
        channels: field(0),
        hidden: field(1),
        embed_dim: field(2),
        coord_channels: field(3),
    };
    dims.validate().map_err(|e| fail(5, &e.to_string()))?;
    let mut p = ModelParams::zeros(dims);
    let needed: usize = p.blocks().iter().map(|b| b.len() * 8).sum();
    if bytes.len() != HEADER_LEN + needed {
        return Err(fail(
            bytes.len(),
            &format!("expected {} bytes for declared dims", HEADER_LEN + needed),
        ));
    }
    let mut at = HEADER_LEN;
    for block in p.blocks_mut() {
        for v in block.iter_mut() {
            *v = f64::from_le_bytes(bytes[at..at + 8].try_into().unwrap());
            if !v.is_finite() {
                return Err(fail(at, "non-finite parameter"));
            }
            at += 8;
        }
    }
    Ok(p)
}

pub fn save_checkpoint(path: impl AsRef<Path>, p: &ModelParams) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(p)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelParams> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
