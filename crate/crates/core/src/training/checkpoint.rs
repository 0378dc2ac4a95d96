//! Binary checkpoint: `P4DF`, a little-endian `u32` version, a `u64` header
//! length, the JSON header, then every parameter as little-endian `f32` in
//! header order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::error::{Error, Result};
use crate::model::{init_model, GroupKind, ModelConfig, ModelParams, Param, ParamGroup};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"P4DF";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub group: GroupKind,
    pub frozen: bool,
    pub lr_mult: f64,
}

/// Per-sample random streams derive from the seed and epoch, so these two
/// numbers are the whole generator state.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RngState {
    pub seed: u64,
    pub next_epoch: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub epoch: usize,
    pub rng: RngState,
    pub params: Vec<ParamEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: ModelParams<f32>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn encode_checkpoint(
    params: &ModelParams<f32>,
    model: &ModelConfig,
    train: &TrainConfig,
    epoch: usize,
) -> Result<Vec<u8>> {
    let entries = params
        .iter()
        .map(|(g, p)| ParamEntry {
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
            group: g.kind,
            frozen: g.frozen,
            lr_mult: g.lr_mult,
        })
        .collect();
    let header = CheckpointHeader {
        model: model.clone(),
        train: train.clone(),
        epoch,
        rng: RngState {
            seed: train.seed,
            next_epoch: epoch as u64,
        },
        params: entries,
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(16 + json.len() + 4 * params.num_scalars());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, p) in params.iter() {
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Parses a checkpoint and checks that its parameters fit its model config.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 16 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(bad("not a checkpoint (bad magic)"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported checkpoint version {version}")));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let body = &bytes[16..];
    let header_len = usize::try_from(header_len)
        .ok()
        .filter(|&n| n <= body.len())
        .ok_or_else(|| bad("truncated header"))?;
    let header: CheckpointHeader = serde_json::from_slice(&body[..header_len])?;
    let mut blobs = &body[header_len..];

    let expected = init_model(&header.model, 0)?;
    let layout: Vec<(GroupKind, &str, &[usize])> = expected
        .iter()
        .map(|(g, p)| (g.kind, p.name.as_str(), p.value.shape()))
        .collect();
    let stored: Vec<(GroupKind, &str, &[usize])> = header
        .params
        .iter()
        .map(|e| (e.group, e.name.as_str(), e.shape.as_slice()))
        .collect();
    if layout != stored {
        return Err(bad(format!(
            "parameters do not match variant {}",
            header.model.variant
        )));
    }

    let mut groups: Vec<ParamGroup<f32>> = GroupKind::ALL
        .iter()
        .map(|&kind| ParamGroup {
            kind,
            frozen: false,
            lr_mult: 1.0,
            params: Vec::new(),
        })
        .collect();
    for entry in &header.params {
        let n: usize = entry.shape.iter().product();
        if blobs.len() < 4 * n {
            return Err(bad(format!("truncated data for {}", entry.name)));
        }
        let data = blobs[..4 * n]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        blobs = &blobs[4 * n..];
        let group = &mut groups[entry.group as usize];
        group.frozen = entry.frozen;
        group.lr_mult = entry.lr_mult;
        group.params.push(Param {
            name: entry.name.clone(),
            value: Tensor::new(entry.shape.clone(), data)?,
        });
    }
    if !blobs.is_empty() {
        return Err(bad(format!("{} trailing bytes", blobs.len())));
    }
    let params = ModelParams::from_groups(groups)?;
    Ok(Checkpoint { header, params })
}

pub fn save_checkpoint(
    path: &Path,
    params: &ModelParams<f32>,
    model: &ModelConfig,
    train: &TrainConfig,
    epoch: usize,
) -> Result<()> {
    fs::write(path, encode_checkpoint(params, model, train, epoch)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Variant;

    #[test]
    fn round_trip_is_exact() {
        for v in [Variant::Rgb, Variant::RgbFftLbpPhaseCs] {
            let model = ModelConfig::with_variant(v);
            let mut params = init_model(&model, 5).unwrap();
            params.set_frozen(GroupKind::Backbone, true);
            params.group_mut(GroupKind::Head).lr_mult = 3e-4;
            let train = TrainConfig {
                seed: 9,
                ..TrainConfig::default()
            };
            let bytes = encode_checkpoint(&params, &model, &train, 20).unwrap();
            assert_eq!(&bytes[..4], b"P4DF");
            let ck = decode_checkpoint(&bytes).unwrap();
            assert_eq!(ck.params, params);
            assert_eq!(ck.header.model, model);
            assert_eq!(ck.header.train, train);
            assert_eq!(
                ck.header.rng,
                RngState {
                    seed: 9,
                    next_epoch: 20
                }
            );
            assert_eq!(
                encode_checkpoint(&ck.params, &model, &train, 20).unwrap(),
                bytes
            );
        }
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let model = ModelConfig::with_variant(Variant::RgbLbp);
        let params = init_model(&model, 0).unwrap();
        let bytes = encode_checkpoint(&params, &model, &TrainConfig::default(), 1).unwrap();
        assert!(decode_checkpoint(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode_checkpoint(&extra).is_err());
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(decode_checkpoint(&magic).is_err());
        let mut version = bytes.clone();
        version[4] = 7;
        assert!(decode_checkpoint(&version).is_err());
        // a header claiming another variant no longer matches the stored tensors
        let other = encode_checkpoint(
            &params,
            &ModelConfig::with_variant(Variant::Rgb),
            &TrainConfig::default(),
            1,
        );
        assert!(decode_checkpoint(&other.unwrap()).is_err());
    }
}
