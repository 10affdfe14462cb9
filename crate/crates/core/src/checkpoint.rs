//! Binary checkpoint container.
//!
//! Layout: the magic line `FORGE-CKPT v1\n`, a little-endian `u64` header
//! length, a JSON header (model config, vocabularies, tensor manifest), then
//! the raw little-endian float32 buffers in manifest order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attention::AttentionRegistry;
use crate::data::Vocab;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, Seq2SeqModel};
use crate::tensor::{DType, Tensor};

pub const MAGIC: &[u8] = b"FORGE-CKPT v1\n";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: DType,
    /// Byte offset from the start of the data section.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub config: ModelConfig,
    pub src_vocab: Vocab,
    pub tgt_vocab: Vocab,
    pub tensors: Vec<TensorEntry>,
}

pub struct Checkpoint {
    pub model: Seq2SeqModel<f32>,
    pub src_vocab: Vocab,
    pub tgt_vocab: Vocab,
}

pub fn encode(model: &Seq2SeqModel<f32>, src_vocab: &Vocab, tgt_vocab: &Vocab) -> Result<Vec<u8>> {
    let mut tensors = Vec::new();
    let mut data = Vec::with_capacity(model.param_count() * 4);
    for p in model.params().iter() {
        tensors.push(TensorEntry {
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
            dtype: DType::Float32,
            offset: data.len(),
        });
        for v in p.value.data() {
            data.extend_from_slice(&v.to_le_bytes());
        }
    }
    let header = serde_json::to_vec(&Header {
        config: model.config().clone(),
        src_vocab: src_vocab.clone(),
        tgt_vocab: tgt_vocab.clone(),
        tensors,
    })?;
    let mut out = Vec::with_capacity(MAGIC.len() + 8 + header.len() + data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&data);
    Ok(out)
}

pub fn save(path: &Path, model: &Seq2SeqModel<f32>, src_vocab: &Vocab, tgt_vocab: &Vocab) -> Result<()> {
    let bytes = encode(model, src_vocab, tgt_vocab)?;
    fs::write(path, bytes).map_err(|e| Error::file(path, e))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    load_with_registry(path, &AttentionRegistry::default())
}

pub fn load_with_registry(path: &Path, registry: &AttentionRegistry<f32>) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::file(path, e))?;
    decode(&bytes, registry)
}

pub fn decode(bytes: &[u8], registry: &AttentionRegistry<f32>) -> Result<Checkpoint> {
    let bad = |msg: &str| Error::Checkpoint(msg.to_string());
    let rest = bytes.strip_prefix(MAGIC).ok_or_else(|| bad("missing magic line"))?;
    if rest.len() < 8 {
        return Err(bad("truncated header length"));
    }
    let (len, rest) = rest.split_at(8);
    let len = u64::from_le_bytes(len.try_into().expect("8 bytes")) as usize;
    if rest.len() < len {
        return Err(bad("truncated header"));
    }
    let (header, data) = rest.split_at(len);
    let header: Header = serde_json::from_slice(header)?;

    let mut model = Seq2SeqModel::build_with_registry(&header.config, 0, registry)?;
    if header.tensors.len() != model.params().len() {
        return Err(Error::Checkpoint(format!(
            "manifest lists {} tensors, model has {}",
            header.tensors.len(),
            model.params().len()
        )));
    }
    let mut expected_offset = 0;
    for entry in &header.tensors {
        if entry.dtype != DType::Float32 {
            return Err(Error::Checkpoint(format!("tensor `{}` has dtype {}, expected float32", entry.name, entry.dtype)));
        }
        let n: usize = entry.shape.iter().product();
        let end = entry.offset + 4 * n;
        if entry.offset != expected_offset || end > data.len() {
            return Err(Error::Checkpoint(format!("tensor `{}` has a bad offset", entry.name)));
        }
        expected_offset = end;
        let values = data[entry.offset..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        model.params_mut().set(&entry.name, Tensor::new(&entry.shape, values)?)?;
    }
    if expected_offset != data.len() {
        return Err(bad("trailing bytes after the last tensor"));
    }
    Ok(Checkpoint {
        model,
        src_vocab: header.src_vocab,
        tgt_vocab: header.tgt_vocab,
    })
}
