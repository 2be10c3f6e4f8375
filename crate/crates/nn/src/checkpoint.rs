use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::layer::LayerSpec;
use crate::network::{InputKind, Network};
use crate::train::TargetScaling;
use crate::{NnError, Result};

const MAGIC: &[u8; 4] = b"MKNN";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub input: InputKind,
    pub layers: Vec<LayerSpec>,
    pub seed: u64,
    pub n_params: usize,
    pub scaling: Option<TargetScaling>,
    /// Free-form metadata, e.g. the dataset manifest path.
    #[serde(default)]
    pub meta: serde_json::Value,
}

/// Layout: magic, u32 version, u64 header length, JSON header, then every
/// weight and bias as little-endian f64 in layer order.
pub fn to_bytes(net: &Network, scaling: Option<&TargetScaling>, meta: serde_json::Value) -> Result<Vec<u8>> {
    let header = CheckpointHeader {
        input: net.input_kind(),
        layers: net.specs(),
        seed: net.seed(),
        n_params: net.n_params(),
        scaling: scaling.cloned(),
        meta,
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(16 + json.len() + 8 * header.n_params);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for v in net.params_flat() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<(Network, CheckpointHeader)> {
    let bad = |why: &str| NnError::Format(why.to_string());
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(bad("not a checkpoint"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(bad(&format!("unsupported checkpoint version {version}")));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = bytes.get(16..16 + hlen).ok_or_else(|| bad("truncated header"))?;
    let header: CheckpointHeader = serde_json::from_slice(body)?;
    let blob = &bytes[16 + hlen..];
    if blob.len() != 8 * header.n_params {
        return Err(bad(&format!(
            "parameter blob has {} bytes, header declares {} parameters",
            blob.len(),
            header.n_params
        )));
    }
    let params: Vec<f64> = blob
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let mut net = Network::from_specs(header.input, header.layers.clone(), header.seed)?;
    net.set_params_flat(&params)?;
    Ok((net, header))
}

pub fn save(path: &Path, net: &Network, scaling: Option<&TargetScaling>, meta: serde_json::Value) -> Result<()> {
    std::fs::write(path, to_bytes(net, scaling, meta)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(Network, CheckpointHeader)> {
    from_bytes(&std::fs::read(path)?)
}
