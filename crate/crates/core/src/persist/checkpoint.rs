//! Binary checkpoint: `RFPX1` magic, a little-endian u32 header length, a
//! JSON header, an f32 little-endian payload and a trailing CRC32 of the
//! payload.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::depth::DepthStats;
use crate::error::{Error, Result};
use crate::fusion::{Vocabulary, UNK};
use crate::model::{Model, ModelConfig};
use crate::numerics::{ParamSet, Tensor};

pub const MAGIC: &[u8; 5] = b"RFPX1";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    /// Byte offset into the payload.
    pub offset: usize,
    pub trainable: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub config: ModelConfig,
    pub depth_stats: DepthStats,
    pub vocab: Vocabulary,
    /// Sorted by name; offsets ascend.
    pub tensors: Vec<TensorEntry>,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Corruption(msg.into())
}

pub fn encode_checkpoint(model: &Model) -> Result<Vec<u8>> {
    let mut tensors = Vec::with_capacity(model.params.len());
    let mut payload = Vec::new();
    // ParamSet iterates in name order, which makes the manifest canonical.
    for (name, p) in model.params.iter() {
        tensors.push(TensorEntry {
            name: name.to_string(),
            shape: p.value.shape().to_vec(),
            dtype: "f32".into(),
            offset: payload.len(),
            trainable: p.trainable,
        });
        for &v in p.value.data() {
            payload.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let header = Header {
        config: model.config.clone(),
        depth_stats: model.depth_stats,
        vocab: model.vocab.clone(),
        tensors,
    };
    let header = serde_json::to_vec(&header)?;
    let header_len = u32::try_from(header.len()).map_err(|_| Error::Contract("checkpoint header exceeds 4 GiB".into()))?;
    let mut out = Vec::with_capacity(MAGIC.len() + 4 + header.len() + payload.len() + 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&header_len.to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&payload);
    out.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Model> {
    let rest = bytes.strip_prefix(MAGIC.as_slice()).ok_or_else(|| corrupt("missing RFPX1 magic"))?;
    let (len, rest) = rest.split_first_chunk::<4>().ok_or_else(|| corrupt("truncated before header length"))?;
    let len = u32::from_le_bytes(*len) as usize;
    if rest.len() < len + 4 {
        return Err(corrupt(format!("header of {len} bytes does not fit in {} remaining", rest.len())));
    }
    let (header, rest) = rest.split_at(len);
    let header: Header = serde_json::from_slice(header).map_err(|e| corrupt(format!("header: {e}")))?;
    let (payload, crc) = rest.split_at(rest.len() - 4);
    let stored = u32::from_le_bytes(crc.try_into().expect("four bytes"));
    let actual = crc32fast::hash(payload);
    if stored != actual {
        return Err(corrupt(format!("payload crc {actual:08x} does not match stored {stored:08x}")));
    }

    let mut params = ParamSet::new();
    let mut cursor = 0;
    let mut previous: Option<&str> = None;
    for e in &header.tensors {
        if previous.is_some_and(|p| p >= e.name.as_str()) {
            return Err(corrupt(format!("manifest not sorted at {}", e.name)));
        }
        previous = Some(&e.name);
        if e.dtype != "f32" {
            return Err(corrupt(format!("{}: unsupported dtype {}", e.name, e.dtype)));
        }
        if e.offset != cursor {
            return Err(corrupt(format!("{}: offset {} overlaps or leaves a gap (expected {cursor})", e.name, e.offset)));
        }
        let count: usize = e.shape.iter().product();
        let end = cursor + 4 * count;
        let raw = payload.get(cursor..end).ok_or_else(|| corrupt(format!("{}: payload too short", e.name)))?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("four bytes")) as f64).collect();
        params.insert(e.name.clone(), Tensor::new(e.shape.clone(), data).map_err(|_| corrupt(format!("{}: bad shape", e.name)))?, e.trainable)?;
        cursor = end;
    }
    if cursor != payload.len() {
        return Err(corrupt(format!("{} trailing payload bytes", payload.len() - cursor)));
    }
    if header.vocab.word(0) != Some(UNK) {
        return Err(corrupt("vocabulary does not start with <unk>"));
    }
    header.config.validate()?;
    header.depth_stats.validate()?;
    Ok(Model {
        config: header.config,
        params,
        vocab: header.vocab,
        depth_stats: header.depth_stats,
    })
}

/// Checks that `model` has exactly the parameter layout `config` implies.
pub fn check_compatible(model: &Model, config: &ModelConfig) -> Result<()> {
    let reference = Model::new(config.clone(), model.vocab.clone(), model.depth_stats)?;
    let prefix = |name: &str| name.rsplit_once('.').map_or(name, |(p, _)| p).to_string();
    for (name, p) in reference.params.iter() {
        match model.params.get(name) {
            None => return Err(Error::Compatibility(format!("checkpoint is missing {} (parameter {name})", prefix(name)))),
            Some(q) if q.value.shape() != p.value.shape() => {
                return Err(Error::Compatibility(format!(
                    "{name}: checkpoint shape {:?}, config expects {:?}",
                    q.value.shape(),
                    p.value.shape()
                )))
            }
            Some(q) if q.trainable != p.trainable => {
                return Err(Error::Compatibility(format!("{name}: trainable flag differs from config")))
            }
            Some(_) => {}
        }
    }
    if let Some(extra) = model.params.names().find(|n| !reference.params.contains(n)) {
        return Err(Error::Compatibility(format!("checkpoint has {} that config does not expect (parameter {extra})", prefix(extra))));
    }
    Ok(())
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(model)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

/// Loads and verifies the layout against an expected model config.
pub fn load_checkpoint_for(path: &Path, config: &ModelConfig) -> Result<Model> {
    let model = load_checkpoint(path)?;
    check_compatible(&model, config)?;
    Ok(model)
}
