//! Binary checkpoint: magic, format version, JSON header with the config,
//! parameter count, then little-endian `f32` weights in layout order.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::LmConfig;
use crate::error::{LmError, Result};
use crate::model::ModelParams;

pub const MAGIC: &[u8; 8] = b"KGTODLM\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    config: LmConfig,
    vocab_size: usize,
}

pub fn save_checkpoint(params: &ModelParams<f32>, path: &Path) -> Result<()> {
    let header = serde_json::to_vec(&Header { config: params.config.clone(), vocab_size: params.vocab_size() })
        .expect("header serializes");
    let mut buf = Vec::with_capacity(32 + header.len() + 4 * params.num_params());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(header.len() as u32).to_le_bytes());
    buf.extend_from_slice(&header);
    buf.extend_from_slice(&(params.num_params() as u64).to_le_bytes());
    for v in params.as_slice() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = std::fs::File::create(path).map_err(|e| LmError::io(path, e))?;
    f.write_all(&buf).map_err(|e| LmError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams<f32>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path).and_then(|mut f| f.read_to_end(&mut bytes)).map_err(|e| LmError::io(path, e))?;
    let bad = |msg: &str| LmError::Checkpoint { path: path.to_path_buf(), msg: msg.to_string() };
    let take = |at: usize, n: usize| bytes.get(at..at + n).ok_or_else(|| bad("truncated file"));

    if take(0, 8)? != MAGIC {
        return Err(bad("not a model checkpoint"));
    }
    let version = u32::from_le_bytes(take(8, 4)?.try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(bad(&format!("unsupported format version {version}")));
    }
    let hlen = u32::from_le_bytes(take(12, 4)?.try_into().unwrap()) as usize;
    let header: Header = serde_json::from_slice(take(16, hlen)?).map_err(|e| bad(&format!("header: {e}")))?;
    let at = 16 + hlen;
    let n = u64::from_le_bytes(take(at, 8)?.try_into().unwrap()) as usize;
    let raw = take(at + 8, 4 * n)?;
    if bytes.len() != at + 8 + 4 * n {
        return Err(bad("trailing bytes"));
    }
    let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    let params = ModelParams::from_raw(header.config, header.vocab_size, data).map_err(|e| bad(&e.to_string()))?;
    if !params.all_finite() {
        return Err(bad("non-finite weights"));
    }
    Ok(params)
}
