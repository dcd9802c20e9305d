//! Training loop, evaluation, splitting and the ablation protocol.

pub mod ablation;
pub mod checkpoint;
pub mod features;
pub mod metrics;
pub mod model;
pub mod split;
pub mod stats;
pub mod trainer;

pub use ablation::{run_ablation, AblationConfig, AblationResult, Metric, ModeSummary, RunRecord};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
pub use features::{FeatureSources, FeatureTable, LlmResources};
pub use metrics::{classification_report, EvalReport};
pub use model::{AblationMode, BatchInputs, DeepFeatModel, ModelConfig};
pub use split::{stratified_split, stratified_subsplit, Split};
pub use stats::{cohens_d, mean, sample_std};
pub use trainer::{evaluate, train, write_history, EpochRecord, SelectionPolicy, TrainConfig, TrainOutcome};
