use std::fs;
use std::path::{Path, PathBuf};

use deepfeat::llm::LlmBranchConfig;
use deepfeat::rocket;
use deepfeat::train::{AblationConfig, AblationMode, SelectionPolicy, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::commands::Failure;
use crate::TrainFlags;

/// Contents of a `--config` file; every field is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub dataset: Option<PathBuf>,
    pub weights: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub train: TrainConfig,
    pub rocket_seed: u64,
    pub rocket_kernels: usize,
    pub llm: LlmBranchConfig,
    pub modes: Vec<AblationMode>,
    pub runs: usize,
    pub jobs: usize,
}

impl Default for FileConfig {
    fn default() -> Self {
        let ablation = AblationConfig::default();
        FileConfig {
            dataset: None,
            weights: None,
            out: None,
            train: TrainConfig::default(),
            rocket_seed: rocket::DEFAULT_SEED,
            rocket_kernels: rocket::NUM_KERNELS,
            llm: LlmBranchConfig::default(),
            modes: ablation.modes,
            runs: ablation.runs,
            jobs: ablation.jobs,
        }
    }
}

pub fn read_config(path: &Path) -> Result<FileConfig, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

/// Fully resolved settings for `train` and `ablate`.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub dataset: PathBuf,
    pub weights: Option<PathBuf>,
    pub out: PathBuf,
    pub train: TrainConfig,
    pub rocket_seed: u64,
    pub rocket_kernels: usize,
    pub llm: LlmBranchConfig,
    pub modes: Vec<AblationMode>,
    pub runs: usize,
    pub jobs: usize,
}

pub fn parse_mode(s: &str) -> Result<AblationMode, Failure> {
    s.parse().map_err(|e: deepfeat::Error| Failure::Usage(e.to_string()))
}

impl Resolved {
    pub fn from_flags(flags: &TrainFlags) -> Result<Self, Failure> {
        let file = match &flags.config {
            Some(p) => read_config(p)?,
            None => FileConfig::default(),
        };
        let mut train = file.train;
        if let Some(v) = flags.epochs {
            train.epochs = v;
        }
        if let Some(v) = flags.batch_size {
            train.batch_size = v;
        }
        if let Some(v) = flags.lr {
            train.schedule.lr0 = v;
        }
        if let Some(v) = flags.seed {
            train.seed = v;
        }
        if let Some(v) = &flags.selection {
            train.selection_policy =
                v.parse::<SelectionPolicy>().map_err(|e| Failure::Usage(e.to_string()))?;
        }
        if let Some(v) = flags.split_seed {
            train.split_seed = v;
        }
        let missing = |what: &str| Failure::Usage(format!("--{what} is required (flag or config file)"));
        let resolved = Resolved {
            dataset: flags.dataset.clone().or(file.dataset).ok_or_else(|| missing("dataset"))?,
            weights: flags.weights.clone().or(file.weights),
            out: flags.out.clone().or(file.out).ok_or_else(|| missing("out"))?,
            train,
            rocket_seed: flags.rocket_seed.unwrap_or(file.rocket_seed),
            rocket_kernels: flags.kernels.unwrap_or(file.rocket_kernels),
            llm: file.llm,
            modes: file.modes,
            runs: file.runs,
            jobs: file.jobs,
        };
        if resolved.rocket_kernels == 0 {
            return Err(Failure::Usage("kernel count must be positive".into()));
        }
        resolved.llm.validate()?;
        Ok(resolved)
    }

    pub fn ablation(&self) -> AblationConfig {
        AblationConfig { base: self.train.clone(), modes: self.modes.clone(), runs: self.runs, jobs: self.jobs }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        fs::write(&path, r#"{"dataset": "d", "out": "o", "train": {"epochs": 7, "seed": 3}, "runs": 4}"#).unwrap();
        let flags = TrainFlags { config: Some(path.clone()), epochs: Some(9), ..Default::default() };
        let r = Resolved::from_flags(&flags).unwrap();
        assert_eq!(r.train.epochs, 9);
        assert_eq!(r.train.seed, 3);
        assert_eq!(r.runs, 4);
        assert_eq!(r.dataset, PathBuf::from("d"));
        fs::write(&path, r#"{"train": {"epoch": 7}}"#).unwrap();
        assert!(matches!(Resolved::from_flags(&flags), Err(Failure::Usage(_))));
    }
}
