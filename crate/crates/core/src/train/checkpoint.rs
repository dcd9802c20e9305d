//! Trained weights as a tensor archive plus a JSON sidecar.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::llm::LlmBranchConfig;
use crate::scalar::Scalar;
use crate::train::model::{DeepFeatModel, ModelConfig};
use crate::train::trainer::TrainConfig;
use crate::tsar::TensorArchive;

pub const WEIGHTS_FILE: &str = "model.tsar";
pub const META_FILE: &str = "checkpoint.json";

/// Everything needed to rebuild a model's inputs and architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub classes: Vec<String>,
    pub dataset_name: String,
    pub dataset_hash: String,
    pub rocket_seed: u64,
    pub rocket_kernels: usize,
    pub llm: Option<LlmBranchConfig>,
    pub llm_fingerprint: Option<String>,
    pub selected_epoch: usize,
}

/// Writes `model.tsar` and `checkpoint.json` into `dir`.
pub fn save_checkpoint<T: Scalar>(dir: impl AsRef<Path>, model: &DeepFeatModel<T>, meta: &CheckpointMeta) -> Result<PathBuf> {
    let dir = dir.as_ref();
    if meta.model != model.config {
        return Err(Error::InvalidArgument("checkpoint metadata describes a different model".into()));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    model.to_archive()?.write(dir.join(WEIGHTS_FILE))?;
    let meta_path = dir.join(META_FILE);
    let json = serde_json::to_string_pretty(meta)?;
    fs::write(&meta_path, json + "\n").map_err(|e| Error::io(&meta_path, e))?;
    Ok(dir.to_path_buf())
}

pub fn load_checkpoint<T: Scalar>(dir: impl AsRef<Path>) -> Result<(DeepFeatModel<T>, CheckpointMeta)> {
    let dir = dir.as_ref();
    let meta_path = dir.join(META_FILE);
    let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: CheckpointMeta = serde_json::from_str(&text)?;
    let archive = TensorArchive::read(dir.join(WEIGHTS_FILE))?;
    let model = DeepFeatModel::from_archive(meta.model.clone(), &archive)?;
    Ok((model, meta))
}
