//! Checkpoint container.
//!
//! Byte layout, all integers little-endian:
//!
//! | offset | size | content                                   |
//! |--------|------|-------------------------------------------|
//! | 0      | 8    | magic `SYLFCKPT`                          |
//! | 8      | 4    | format version (`u32`, currently 1)       |
//! | 12     | 8    | header length `h` (`u64`)                 |
//! | 20     | h    | UTF-8 JSON header: config, vocab hash, parameter count |
//! | 20 + h | 4·n  | `n` parameters as `f32`                   |

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::model::{LmConfig, Model};
use crate::LmError;

pub const MAGIC: &[u8; 8] = b"SYLFCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub config: LmConfig,
    pub vocab_hash: String,
    pub param_count: usize,
}

pub fn write(out: &mut impl Write, model: &Model<f32>, vocab_hash: &str) -> Result<(), LmError> {
    let header = Header { config: model.config.clone(), vocab_hash: vocab_hash.to_string(), param_count: model.param_count() };
    let json = serde_json::to_vec(&header).map_err(|e| LmError::Checkpoint(e.to_string()))?;
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(json.len() as u64).to_le_bytes())?;
    out.write_all(&json)?;
    let mut buf = Vec::with_capacity(model.params.len() * 4);
    for p in &model.params {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn read(input: &mut impl Read) -> Result<(Model<f32>, Header), LmError> {
    let bad = |m: &str| LmError::Checkpoint(m.to_string());
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let mut u32b = [0u8; 4];
    input.read_exact(&mut u32b)?;
    let version = u32::from_le_bytes(u32b);
    if version != VERSION {
        return Err(LmError::Checkpoint(format!("unsupported version {version}")));
    }
    let mut u64b = [0u8; 8];
    input.read_exact(&mut u64b)?;
    let len = u64::from_le_bytes(u64b) as usize;
    if len > 1 << 24 {
        return Err(bad("header too large"));
    }
    let mut json = vec![0u8; len];
    input.read_exact(&mut json)?;
    let header: Header = serde_json::from_slice(&json).map_err(|e| LmError::Checkpoint(e.to_string()))?;
    let mut raw = vec![0u8; header.param_count * 4];
    input.read_exact(&mut raw)?;
    let params = raw.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
    let model = Model::from_params(header.config.clone(), params)?;
    Ok((model, header))
}

pub fn save(path: &Path, model: &Model<f32>, vocab_hash: &str) -> Result<(), LmError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write(&mut f, model, vocab_hash)?;
    f.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(Model<f32>, Header), LmError> {
    read(&mut std::io::BufReader::new(std::fs::File::open(path)?))
}
