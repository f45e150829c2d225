//! Checkpoint directory: `manifest.json` plus one raw little-endian `f32`
//! file per named parameter array.
//!
//! The model computes in `f64`; values are rounded to `f32` when written, so
//! a loaded checkpoint saves back to identical bytes.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CarpError, Result};
use crate::model::{Model, ModelConfig, ModelParams};
use crate::training::TrainConfig;

const MANIFEST: &str = "manifest.json";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    shape: Vec<usize>,
    file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    model: ModelConfig,
    train: TrainConfig,
    vocab_hash: String,
    epoch: usize,
    val_mse: f64,
    dtype: String,
    arrays: Vec<ArrayEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub train: TrainConfig,
    pub vocab_hash: String,
    /// 1-based epoch the parameters were taken from; 0 before training.
    pub epoch: usize,
    pub val_mse: f64,
}

impl Checkpoint {
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| CarpError::io(dir, e))?;
        let mut arrays = Vec::new();
        for (name, view) in self.model.params.arrays() {
            let file = format!("{name}.f32");
            let mut bytes = Vec::with_capacity(view.len() * 4);
            for &x in view.iter() {
                bytes.extend_from_slice(&(x as f32).to_le_bytes());
            }
            let path = dir.join(&file);
            fs::write(&path, bytes).map_err(|e| CarpError::io(&path, e))?;
            arrays.push(ArrayEntry {
                name,
                shape: view.shape().to_vec(),
                file,
            });
        }
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            model: self.model.config.clone(),
            train: self.train.clone(),
            vocab_hash: self.vocab_hash.clone(),
            epoch: self.epoch,
            val_mse: self.val_mse,
            dtype: "f32le".into(),
            arrays,
        };
        let path = dir.join(MANIFEST);
        fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| CarpError::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| CarpError::io(&path, e))?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        if manifest.format_version != FORMAT_VERSION || manifest.dtype != "f32le" {
            return Err(CarpError::format(
                "checkpoint",
                format!("unsupported format {} / {}", manifest.format_version, manifest.dtype),
            ));
        }
        let mut params = ModelParams::zeros(&manifest.model);
        let expected = params.arrays().len();
        if manifest.arrays.len() != expected {
            return Err(CarpError::format(
                "checkpoint",
                format!("{} arrays listed, model has {expected}", manifest.arrays.len()),
            ));
        }
        for ((name, mut view), entry) in params.arrays_mut().into_iter().zip(&manifest.arrays) {
            if entry.name != name || entry.shape != view.shape() {
                return Err(CarpError::format(
                    "checkpoint",
                    format!("array {} {:?} does not match {name} {:?}", entry.name, entry.shape, view.shape()),
                ));
            }
            let path = dir.join(&entry.file);
            let bytes = fs::read(&path).map_err(|e| CarpError::io(&path, e))?;
            if bytes.len() != view.len() * 4 {
                return Err(CarpError::format(
                    "checkpoint",
                    format!("{} holds {} bytes, expected {}", entry.file, bytes.len(), view.len() * 4),
                ));
            }
            for (x, chunk) in view.iter_mut().zip(bytes.chunks_exact(4)) {
                *x = f32::from_le_bytes(chunk.try_into().expect("4-byte chunk")) as f64;
            }
        }
        Ok(Checkpoint {
            model: Model {
                config: manifest.model,
                params,
            },
            train: manifest.train,
            vocab_hash: manifest.vocab_hash,
            epoch: manifest.epoch,
            val_mse: manifest.val_mse,
        })
    }

    /// Loads and rejects a checkpoint trained on a different vocabulary.
    pub fn load_for(dir: &Path, vocab_hash: &str) -> Result<Self> {
        let ck = Self::load(dir)?;
        ck.check_vocab(vocab_hash)?;
        Ok(ck)
    }

    pub fn check_vocab(&self, vocab_hash: &str) -> Result<()> {
        if self.vocab_hash != vocab_hash {
            return Err(CarpError::VocabularyMismatch {
                expected: self.vocab_hash.clone(),
                found: vocab_hash.to_string(),
            });
        }
        Ok(())
    }
}
