//! Checkpoint file: `u32` little-endian header length, a JSON header, then
//! every parameter block as little-endian `f32` in declaration order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{build, NetworkSpec, NetworkState};
use crate::error::{format_err, Error, Result};

pub const CHECKPOINT_SCHEMA: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BlockEntry {
    name: String,
    len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    schema: u32,
    spec: NetworkSpec,
    class_names: Vec<String>,
    delays: Vec<Vec<u32>>,
    blocks: Vec<BlockEntry>,
    #[serde(default)]
    extra: serde_json::Value,
}

/// A network with the class names its logits refer to, plus free-form
/// metadata (training config, epoch, accuracy).
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub state: NetworkState,
    pub class_names: Vec<String>,
    pub extra: serde_json::Value,
}

pub fn save_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let net = &ckpt.state.net;
    let params = net.param_slices();
    let header = Header {
        schema: CHECKPOINT_SCHEMA,
        spec: ckpt.state.spec,
        class_names: ckpt.class_names.clone(),
        delays: net.blocks.iter().map(|b| b.delays.delays.clone()).collect(),
        blocks: net
            .param_names()
            .into_iter()
            .zip(&params)
            .map(|(name, p)| BlockEntry { name, len: p.len() })
            .collect(),
        extra: ckpt.extra.clone(),
    };
    let json = serde_json::to_vec(&header)?;
    let n: usize = params.iter().map(|p| p.len()).sum();
    let mut out = Vec::with_capacity(4 + json.len() + 4 * n);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for p in params {
        for &v in p {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn load_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 4 {
        return format_err("checkpoint shorter than its length prefix");
    }
    let hlen = u32::from_le_bytes(bytes[..4].try_into().unwrap()) as usize;
    let Some(json) = bytes.get(4..4 + hlen) else {
        return format_err("checkpoint header truncated");
    };
    let header: Header = serde_json::from_slice(json)?;
    if header.schema != CHECKPOINT_SCHEMA {
        return format_err(format!("unsupported checkpoint schema {}", header.schema));
    }
    let mut state = build(&header.spec).map_err(|e| Error::Format(format!("spec: {e}")))?;
    if header.delays.len() != state.net.blocks.len() {
        return format_err("delay table does not match the layer count");
    }
    for (block, d) in state.net.blocks.iter_mut().zip(header.delays) {
        if d.len() != block.delays.delays.len() {
            return format_err("delay vector length differs from channel count");
        }
        block.delays.delays = d;
        block
            .delays
            .validate()
            .map_err(|e| Error::Format(e.to_string()))?;
    }

    let names = state.net.param_names();
    let mut offset = 4 + hlen;
    {
        let slots = state.net.param_slices_mut();
        if slots.len() != header.blocks.len() {
            return format_err("parameter block count differs from the architecture");
        }
        for ((slot, entry), name) in slots.into_iter().zip(&header.blocks).zip(&names) {
            if entry.name != *name || entry.len != slot.len() {
                return format_err(format!(
                    "block {} ({}) does not match expected {} ({})",
                    entry.name,
                    entry.len,
                    name,
                    slot.len()
                ));
            }
            let end = offset + 4 * entry.len;
            let Some(raw) = bytes.get(offset..end) else {
                return format_err(format!("parameter block {} truncated", entry.name));
            };
            for (dst, b) in slot.iter_mut().zip(raw.chunks_exact(4)) {
                *dst = f32::from_le_bytes(b.try_into().unwrap()) as f64;
            }
            offset = end;
        }
    }
    if offset != bytes.len() {
        return format_err("trailing bytes after the last parameter block");
    }
    Ok(Checkpoint {
        state,
        class_names: header.class_names,
        extra: header.extra,
    })
}

pub fn write_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, save_checkpoint(ckpt)?)?;
    Ok(())
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    load_checkpoint(&fs::read(path)?)
}
