//! `PDM1` container: 4-byte magic, u8 version, u32 LE base rate, u16 LE
//! alpha, u64 LE bit count, then the bits packed LSB-first with the final
//! byte zero-padded.

use std::fs;
use std::path::Path;

use super::PdmSignal;
use crate::error::{format_err, Result};

pub const PDM_MAGIC: [u8; 4] = *b"PDM1";
pub const PDM_VERSION: u8 = 1;

const HEADER_LEN: usize = 4 + 1 + 4 + 2 + 8;

pub fn encode_pdm(p: &PdmSignal) -> Vec<u8> {
    let n = p.bits.len();
    let mut out = Vec::with_capacity(HEADER_LEN + n.div_ceil(8));
    out.extend_from_slice(&PDM_MAGIC);
    out.push(PDM_VERSION);
    out.extend_from_slice(&p.base_rate_hz.to_le_bytes());
    out.extend_from_slice(&p.alpha.to_le_bytes());
    out.extend_from_slice(&(n as u64).to_le_bytes());
    out.extend(p.bits.chunks(8).map(|byte| {
        byte.iter()
            .enumerate()
            .fold(0u8, |acc, (i, &b)| acc | ((b & 1) << i))
    }));
    out
}

pub fn decode_pdm(bytes: &[u8]) -> Result<PdmSignal> {
    if bytes.len() < HEADER_LEN {
        return format_err("PDM container shorter than its header");
    }
    if bytes[0..4] != PDM_MAGIC {
        return format_err("bad PDM magic");
    }
    if bytes[4] != PDM_VERSION {
        return format_err(format!("unsupported PDM container version {}", bytes[4]));
    }
    let base_rate_hz = u32::from_le_bytes(bytes[5..9].try_into().unwrap());
    let alpha = u16::from_le_bytes(bytes[9..11].try_into().unwrap());
    let count = u64::from_le_bytes(bytes[11..19].try_into().unwrap());
    if alpha == 0 {
        return format_err("oversampling ratio of 0 in PDM header");
    }
    if base_rate_hz == 0 {
        return format_err("base rate of 0 in PDM header");
    }
    let payload = &bytes[HEADER_LEN..];
    let count = usize::try_from(count)
        .ok()
        .filter(|c| c.div_ceil(8) == payload.len())
        .ok_or_else(|| {
            crate::Error::Format(format!(
                "bit count {count} does not match {} payload bytes",
                payload.len()
            ))
        })?;
    if count % 8 != 0 {
        let pad = payload[payload.len() - 1] >> (count % 8);
        if pad != 0 {
            return format_err("nonzero padding bits in final PDM byte");
        }
    }
    let mut bits = Vec::with_capacity(count);
    for &byte in payload {
        for i in 0..8 {
            bits.push((byte >> i) & 1);
        }
    }
    bits.truncate(count);
    Ok(PdmSignal {
        bits,
        base_rate_hz,
        alpha,
    })
}

pub fn write_pdm(p: &PdmSignal, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_pdm(p))?;
    Ok(())
}

pub fn read_pdm(path: impl AsRef<Path>) -> Result<PdmSignal> {
    decode_pdm(&fs::read(path)?)
}
