//! Checkpoints: a directory holding `manifest.json` and one tensor file per
//! parameter under `tensors/`, in the feature-pack tensor encoding.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use candle_core::DType;
use serde::{Deserialize, Serialize};

use super::config::{TrainConfig, TrainMode};
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::tensor_io;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMetrics {
    pub val_accuracy: f64,
    pub val_loss: f64,
    pub train_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub mode: TrainMode,
    pub config_hash: String,
    pub epoch: usize,
    pub metrics: CheckpointMetrics,
    pub model: ModelConfig,
    pub train_config: TrainConfig,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub manifest: CheckpointManifest,
    pub tensors: BTreeMap<String, (Vec<usize>, Vec<f32>)>,
}

impl Checkpoint {
    /// Snapshot of every parameter of `model`.
    pub fn capture(
        model: &Model,
        cfg: &TrainConfig,
        epoch: usize,
        metrics: CheckpointMetrics,
    ) -> Result<Self> {
        let mut tensors = BTreeMap::new();
        let mut entries = Vec::new();
        for (name, _) in model.store.named() {
            let (shape, data) = model.store.to_f32(name)?;
            entries.push(TensorEntry {
                name: name.clone(),
                shape: shape.clone(),
                file: format!("tensors/{name}.bin"),
            });
            tensors.insert(name.clone(), (shape, data));
        }
        Ok(Checkpoint {
            manifest: CheckpointManifest {
                mode: cfg.mode,
                config_hash: cfg.hash(),
                epoch,
                metrics,
                model: model.config,
                train_config: cfg.clone(),
                tensors: entries,
            },
            tensors,
        })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir.join("tensors")).map_err(|e| Error::io(dir, e))?;
        for entry in &self.manifest.tensors {
            let (shape, data) = &self.tensors[&entry.name];
            tensor_io::write_f32(&dir.join(&entry.file), shape, data)?;
        }
        let path = dir.join("manifest.json");
        let json = serde_json::to_string_pretty(&self.manifest)?;
        fs::write(&path, json).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: CheckpointManifest = serde_json::from_str(&text)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        let mut tensors = BTreeMap::new();
        for entry in &manifest.tensors {
            let (shape, data) = tensor_io::read_f32(&dir.join(&entry.file))?;
            if shape != entry.shape {
                return Err(Error::Checkpoint(format!(
                    "tensor {} has shape {shape:?}, manifest says {:?}",
                    entry.name, entry.shape
                )));
            }
            tensors.insert(entry.name.clone(), (shape, data));
        }
        Ok(Checkpoint { manifest, tensors })
    }

    /// Copies every stored tensor into `model` by name. Every model parameter
    /// must be present with the same shape.
    pub fn apply(&self, model: &Model) -> Result<()> {
        for (name, _) in model.store.named() {
            let (shape, data) = self
                .tensors
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("checkpoint lacks parameter {name}")))?;
            model.store.assign(name, shape, data.clone())?;
        }
        Ok(())
    }

    /// Builds the stored model in `f32`.
    pub fn to_model(&self) -> Result<Model> {
        self.to_model_with(self.manifest.model, DType::F32)
    }

    pub fn to_model_with(&self, config: ModelConfig, dtype: DType) -> Result<Model> {
        let model = Model::new(config, dtype, 0)?;
        self.apply(&model)?;
        Ok(model)
    }
}
