//! Model and trainer persistence.
//!
//! A checkpoint is a directory with `manifest.json` (names, shapes, config,
//! vocabulary and its hash, optimiser and batching position) and
//! `arrays.bin`, the arrays as little-endian `f64` concatenated in manifest
//! order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingTable;
use crate::error::{NocError, Result};
use crate::fusion::{TrainConfig, Trainer};
use crate::model::{ModelConfig, NocModel};
use crate::optim::{Adam, AdamConfig};
use crate::pipeline::PipelineConfig;
use crate::scalar::Real;
use crate::tensor::Tensor;
use crate::vocab::Vocabulary;

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.json";
pub const ARRAYS: &str = "arrays.bin";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the sidecar, in values.
    pub offset: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frozen: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainerState {
    pub config: TrainConfig,
    pub step: usize,
    pub adam: AdamConfig,
    pub adam_step: u64,
}

/// Batches are a pure function of seed and step, so these two fix the
/// position of every data stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub step: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub vocab_hash: String,
    pub vocab: Vec<String>,
    pub model: ModelConfig,
    pub pipeline: PipelineConfig,
    pub rng: RngState,
    pub trainer: Option<TrainerState>,
    pub arrays: Vec<ArrayEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub model: NocModel<T>,
    pub trainer: Option<Trainer<T>>,
    pub pipeline: PipelineConfig,
}

fn push<T: Real>(arrays: &mut Vec<ArrayEntry>, bytes: &mut Vec<u8>, name: String, t: &Tensor<T>, frozen: Option<bool>) {
    arrays.push(ArrayEntry { name, shape: t.shape().to_vec(), offset: bytes.len() / 8, frozen });
    for v in t.data() {
        bytes.extend_from_slice(&v.as_f64().to_le_bytes());
    }
}

fn encode<T: Real>(ck: &Checkpoint<T>) -> Result<(String, Vec<u8>)> {
    let model = &ck.model;
    let mut arrays = Vec::new();
    let mut bytes = Vec::new();
    for (_, p) in model.params.iter() {
        push(&mut arrays, &mut bytes, p.name.clone(), &p.value, Some(p.frozen));
    }
    let trainer = ck.trainer.as_ref().map(|tr| {
        for ((_, p), (m, v)) in model.params.iter().zip(&tr.optimizer.moments) {
            push(&mut arrays, &mut bytes, format!("adam.m/{}", p.name), m, None);
            push(&mut arrays, &mut bytes, format!("adam.v/{}", p.name), v, None);
        }
        TrainerState { config: tr.config.clone(), step: tr.step, adam: tr.optimizer.config, adam_step: tr.optimizer.step }
    });
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        vocab_hash: model.vocab.hash(),
        vocab: model.vocab.tokens().to_vec(),
        model: model.config.clone(),
        pipeline: ck.pipeline.clone(),
        rng: RngState {
            seed: ck.trainer.as_ref().map_or(ck.pipeline.seed, |t| t.config.seed),
            step: ck.trainer.as_ref().map_or(0, |t| t.step),
        },
        trainer,
        arrays,
    };
    let mut json = serde_json::to_string_pretty(&manifest)?;
    json.push('\n');
    Ok((json, bytes))
}

pub fn save_checkpoint<T: Real>(dir: &Path, ck: &Checkpoint<T>) -> Result<()> {
    let (json, bytes) = encode(ck)?;
    std::fs::create_dir_all(dir).map_err(|e| NocError::io(dir, e))?;
    let m = dir.join(MANIFEST);
    std::fs::write(&m, json).map_err(|e| NocError::io(&m, e))?;
    let a = dir.join(ARRAYS);
    std::fs::write(&a, bytes).map_err(|e| NocError::io(&a, e))
}

fn bad(message: impl Into<String>) -> NocError {
    NocError::Checkpoint(message.into())
}

fn take<T: Real>(values: &[f64], arrays: &[ArrayEntry], name: &str) -> Result<(Tensor<T>, Option<bool>)> {
    let e = arrays.iter().find(|e| e.name == name).ok_or_else(|| bad(format!("array `{name}` is missing")))?;
    let len: usize = e.shape.iter().product();
    let slice = values
        .get(e.offset..e.offset + len)
        .ok_or_else(|| bad(format!("array `{name}` runs past the end of {ARRAYS}")))?;
    Ok((Tensor::new(e.shape.clone(), slice.iter().map(|&v| T::lit(v)).collect())?, e.frozen))
}

/// Loads a checkpoint; with `expected_vocab_hash`, a different vocabulary is an error.
pub fn load_checkpoint<T: Real>(dir: &Path, expected_vocab_hash: Option<&str>) -> Result<Checkpoint<T>> {
    let m = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&m).map_err(|e| NocError::io(&m, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(bad(format!("unsupported format version {}", manifest.format_version)));
    }
    let a = dir.join(ARRAYS);
    let raw = std::fs::read(&a).map_err(|e| NocError::io(&a, e))?;
    if raw.len() % 8 != 0 {
        return Err(bad(format!("{ARRAYS} length {} is not a multiple of 8", raw.len())));
    }
    let values: Vec<f64> = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    let expected_len: usize = manifest.arrays.iter().map(|e| e.shape.iter().product::<usize>()).sum();
    if expected_len != values.len() {
        return Err(bad(format!("manifest describes {expected_len} values, {ARRAYS} holds {}", values.len())));
    }

    let vocab = Vocabulary::from_tokens(manifest.vocab.iter().map(String::as_str));
    if vocab.tokens() != manifest.vocab.as_slice() || vocab.hash() != manifest.vocab_hash {
        return Err(bad("stored vocabulary does not match its hash"));
    }
    if let Some(h) = expected_vocab_hash {
        if h != manifest.vocab_hash {
            return Err(bad(format!("vocabulary hash mismatch: checkpoint {}, data {h}", manifest.vocab_hash)));
        }
    }

    let (emb, _) = take::<T>(&values, &manifest.arrays, "embedding")?;
    let mut model = NocModel::zeros(vocab, EmbeddingTable::new(emb)?, manifest.model.clone())?;
    let ids: Vec<_> = model.params.ids().collect();
    for &id in &ids {
        let name = model.params.param(id).name.clone();
        let (t, frozen) = take::<T>(&values, &manifest.arrays, &name)?;
        if t.shape() != model.params.get(id).shape() {
            return Err(bad(format!("array `{name}` has shape {:?}, model expects {:?}", t.shape(), model.params.get(id).shape())));
        }
        *model.params.get_mut(id) = t;
        model.params.set_frozen(id, frozen.unwrap_or(false));
    }
    let mut known = ids.len();
    let trainer = match &manifest.trainer {
        None => None,
        Some(st) => {
            let mut opt = Adam::new(st.adam, &model.params);
            opt.step = st.adam_step;
            for (&id, slot) in ids.iter().zip(opt.moments.iter_mut()) {
                let name = &model.params.param(id).name;
                slot.0 = take(&values, &manifest.arrays, &format!("adam.m/{name}"))?.0;
                slot.1 = take(&values, &manifest.arrays, &format!("adam.v/{name}"))?.0;
            }
            known += 2 * ids.len();
            Some(Trainer { config: st.config.clone(), optimizer: opt, step: st.step })
        }
    };
    if known != manifest.arrays.len() {
        return Err(bad(format!("manifest lists {} arrays, the model uses {known}", manifest.arrays.len())));
    }
    Ok(Checkpoint { model, trainer, pipeline: manifest.pipeline })
}
