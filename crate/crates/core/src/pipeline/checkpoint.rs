//! Versioned binary checkpoints.
//!
//! Layout: magic `FTICKPT1`, little-endian `u32` header length, JSON header,
//! then every parameter section as little-endian `f64` in header order.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adversarial::CriticParams;
use crate::error::{Error, Result};
use crate::flp::{FLPParams, FlpConfig};
use crate::nn::{Linear, ParamSet};
use crate::taa::TAAParams;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"FTICKPT1";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModuleKind {
    Taa,
    Flp,
    Critic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectionInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub kind: ModuleKind,
    /// Module-specific shape and mode settings.
    pub config: serde_json::Value,
    pub rng_seed: u64,
    pub tool_version: String,
    pub sections: Vec<SectionInfo>,
    pub payload_sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TaaShape {
    d_t: usize,
    hidden: usize,
    d_c: usize,
    region_order: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CriticShape {
    d_w: usize,
    hidden: usize,
}

/// Parameter sets that can be written to and rebuilt from a checkpoint.
pub trait Checkpointable: ParamSet + Sized {
    const KIND: ModuleKind;
    fn header_config(&self) -> serde_json::Value;
    /// Zero-valued parameters shaped as the header describes.
    fn from_header_config(config: &serde_json::Value) -> Result<Self>;
}

fn bad_config(e: serde_json::Error) -> Error {
    Error::Checkpoint(format!("malformed header config: {e}"))
}

impl Checkpointable for TAAParams {
    const KIND: ModuleKind = ModuleKind::Taa;

    fn header_config(&self) -> serde_json::Value {
        serde_json::to_value(TaaShape {
            d_t: self.template_dim(),
            hidden: self.hidden_size(),
            d_c: self.region_dim(),
            region_order: self.region_order.clone(),
        })
        .expect("plain struct serializes")
    }

    fn from_header_config(config: &serde_json::Value) -> Result<Self> {
        let s: TaaShape = serde_json::from_value(config.clone()).map_err(bad_config)?;
        Ok(TAAParams {
            layer1: Linear::zeros(s.d_t, s.hidden),
            layer2: Linear::zeros(s.hidden, s.region_order.len() * s.d_c),
            region_order: s.region_order,
        })
    }
}

impl Checkpointable for FLPParams {
    const KIND: ModuleKind = ModuleKind::Flp;

    fn header_config(&self) -> serde_json::Value {
        serde_json::to_value(&self.config).expect("plain struct serializes")
    }

    fn from_header_config(config: &serde_json::Value) -> Result<Self> {
        let c: FlpConfig = serde_json::from_value(config.clone()).map_err(bad_config)?;
        let mut p = FLPParams::init(c, 0).map_err(|e| Error::Checkpoint(e.to_string()))?;
        p.scale(0.0);
        Ok(p)
    }
}

impl Checkpointable for CriticParams {
    const KIND: ModuleKind = ModuleKind::Critic;

    fn header_config(&self) -> serde_json::Value {
        serde_json::to_value(CriticShape {
            d_w: self.input_dim(),
            hidden: self.hidden_dim(),
        })
        .expect("plain struct serializes")
    }

    fn from_header_config(config: &serde_json::Value) -> Result<Self> {
        let s: CriticShape = serde_json::from_value(config.clone()).map_err(bad_config)?;
        Ok(CriticParams::zeros(s.d_w, s.hidden))
    }
}

fn payload_bytes<P: ParamSet>(p: &P) -> Vec<u8> {
    p.sections()
        .iter()
        .flat_map(|(_, _, v)| v.iter().flat_map(|x| x.to_le_bytes()))
        .collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

pub fn encode_checkpoint<P: Checkpointable>(params: &P, rng_seed: u64) -> Result<Vec<u8>> {
    let payload = payload_bytes(params);
    let header = CheckpointHeader {
        format_version: CHECKPOINT_VERSION,
        kind: P::KIND,
        config: params.header_config(),
        rng_seed,
        tool_version: env!("CARGO_PKG_VERSION").into(),
        sections: params
            .sections()
            .into_iter()
            .map(|(name, shape, _)| SectionInfo { name, shape })
            .collect(),
        payload_sha256: sha256_hex(&payload),
    };
    let json = serde_json::to_vec(&header)?;
    let len = u32::try_from(json.len())
        .map_err(|_| Error::Checkpoint("header larger than 4 GiB".into()))?;
    let mut out = Vec::with_capacity(12 + json.len() + payload.len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    Ok(out)
}

/// Splits a checkpoint into its parsed header and raw payload.
pub fn read_header(bytes: &[u8]) -> Result<(CheckpointHeader, &[u8])> {
    if bytes.len() < 12 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
    }
    let len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let body = &bytes[12..];
    if body.len() < len {
        return Err(Error::Checkpoint("truncated header".into()));
    }
    let header: CheckpointHeader = serde_json::from_slice(&body[..len])
        .map_err(|e| Error::Checkpoint(format!("malformed header: {e}")))?;
    if header.format_version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {} (this build reads {CHECKPOINT_VERSION})",
            header.format_version
        )));
    }
    Ok((header, &body[len..]))
}

pub fn decode_checkpoint<P: Checkpointable>(bytes: &[u8]) -> Result<(P, CheckpointHeader)> {
    let (header, payload) = read_header(bytes)?;
    if header.kind != P::KIND {
        return Err(Error::Checkpoint(format!(
            "expected a {:?} checkpoint, found {:?}",
            P::KIND,
            header.kind
        )));
    }
    let mut params = P::from_header_config(&header.config)?;
    let expected: Vec<SectionInfo> = params
        .sections()
        .into_iter()
        .map(|(name, shape, _)| SectionInfo { name, shape })
        .collect();
    if expected != header.sections {
        let detail = expected
            .iter()
            .zip(&header.sections)
            .find(|(a, b)| a != b)
            .map(|(a, b)| format!("{} {:?} vs header {} {:?}", a.name, a.shape, b.name, b.shape))
            .unwrap_or_else(|| "section count differs".into());
        return Err(Error::Checkpoint(format!("shape mismatch: {detail}")));
    }
    let count = params.param_count();
    if payload.len() != count * 8 {
        return Err(Error::Checkpoint(format!(
            "shape mismatch: payload holds {} values, header describes {count}",
            payload.len() / 8
        )));
    }
    if sha256_hex(payload) != header.payload_sha256 {
        return Err(Error::Checkpoint("payload digest mismatch".into()));
    }
    let mut values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    for section in params.sections_mut() {
        for (dst, src) in section.iter_mut().zip(&mut values) {
            *dst = src;
        }
    }
    Ok((params, header))
}

pub fn save_checkpoint<P: Checkpointable>(params: &P, rng_seed: u64, path: &Path) -> Result<()> {
    std::fs::write(path, encode_checkpoint(params, rng_seed)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<P: Checkpointable>(path: &Path) -> Result<(P, CheckpointHeader)> {
    decode_checkpoint(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}
