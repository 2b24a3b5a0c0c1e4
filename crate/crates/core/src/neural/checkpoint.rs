//! Binary container: `TFNN`, version, JSON header length, JSON header, then
//! every tensor as little-endian `f32` in header order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use super::{CombinationNet, ModelConfig, Params, Tensor};
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"TFNN";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    meta: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

/// Writes the network parameters and free-form metadata.
pub fn save_checkpoint(path: &Path, net: &CombinationNet, meta: &serde_json::Value) -> Result<()> {
    let header = Header {
        model: net.config.clone(),
        meta: meta.clone(),
        tensors: net
            .params
            .names()
            .iter()
            .zip(net.params.tensors())
            .map(|(n, t)| TensorEntry {
                name: n.clone(),
                shape: t.shape.clone(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    out.write_all(&CHECKPOINT_MAGIC).map_err(io)?;
    out.write_u32::<LittleEndian>(VERSION).map_err(io)?;
    out.write_u32::<LittleEndian>(json.len() as u32).map_err(io)?;
    out.write_all(&json).map_err(io)?;
    for t in net.params.tensors() {
        for &v in &t.data {
            out.write_f32::<LittleEndian>(v as f32).map_err(io)?;
        }
    }
    out.flush().map_err(io)
}

/// Reads a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<(CombinationNet, serde_json::Value)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut inp = BufReader::new(file);
    let bad = |reason: &str| Error::format("checkpoint", reason);
    let mut magic = [0u8; 4];
    inp.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
    if magic != CHECKPOINT_MAGIC {
        return Err(bad("bad magic"));
    }
    let version = inp.read_u32::<LittleEndian>().map_err(|_| bad("truncated header"))?;
    if version != VERSION {
        return Err(bad("unsupported version"));
    }
    let len = inp.read_u32::<LittleEndian>().map_err(|_| bad("truncated header"))? as usize;
    let mut json = vec![0u8; len];
    inp.read_exact(&mut json).map_err(|_| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(&json).map_err(|e| bad(&format!("header: {e}")))?;
    let mut entries = Vec::with_capacity(header.tensors.len());
    for e in header.tensors {
        let n: usize = e.shape.iter().product();
        let mut raw = vec![0f32; n];
        inp.read_f32_into::<LittleEndian>(&mut raw)
            .map_err(|_| bad("truncated payload"))?;
        let data = raw.into_iter().map(f64::from).collect();
        entries.push((e.name, Tensor::new(e.shape, data)?));
    }
    let mut rest = Vec::new();
    inp.read_to_end(&mut rest).map_err(|e| Error::io(path, e))?;
    if !rest.is_empty() {
        return Err(bad("trailing bytes"));
    }
    let net = CombinationNet::from_params(header.model, Params::new(entries))?;
    Ok((net, header.meta))
}
