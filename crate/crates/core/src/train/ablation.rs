//! Repeated runs per ablation mode and their summaries.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::train::features::FeatureTable;
use crate::train::model::AblationMode;
use crate::train::split::Split;
use crate::train::stats::{cohens_d, mean, sample_std};
use crate::train::trainer::{train, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub base: TrainConfig,
    pub modes: Vec<AblationMode>,
    pub runs: usize,
    /// Upper bound on concurrently training runs.
    pub jobs: usize,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig { base: TrainConfig::default(), modes: AblationMode::ALL.to_vec(), runs: 10, jobs: 1 }
    }
}

impl AblationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.runs < 2 {
            return Err(Error::InvalidArgument(format!("an ablation needs at least 2 runs per mode, got {}", self.runs)));
        }
        if self.jobs == 0 {
            return Err(Error::InvalidArgument("jobs must be at least 1".into()));
        }
        if self.modes.is_empty() {
            return Err(Error::InvalidArgument("no ablation modes selected".into()));
        }
        let unique: BTreeSet<&str> = self.modes.iter().map(|m| m.as_str()).collect();
        if unique.len() != self.modes.len() {
            return Err(Error::InvalidArgument("ablation modes must be distinct".into()));
        }
        self.base.validate()
    }

    /// Seed of run `run` (0-based): the base seed plus the run index.
    pub fn run_seed(&self, run: usize) -> u64 {
        self.base.seed.wrapping_add(run as u64)
    }
}

/// Test metrics of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub dataset: String,
    pub mode: AblationMode,
    pub run: usize,
    pub seed: u64,
    pub accuracy: f64,
    pub macro_f1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Accuracy,
    MacroF1,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Accuracy => "accuracy",
            Metric::MacroF1 => "macro_f1",
        }
    }

    fn of(self, r: &RunRecord) -> f64 {
        match self {
            Metric::Accuracy => r.accuracy,
            Metric::MacroF1 => r.macro_f1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub dataset: String,
    pub mode: AblationMode,
    pub runs: usize,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub macro_f1_mean: f64,
    pub macro_f1_std: f64,
}

/// Every run of one or more ablations.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AblationResult {
    pub runs: Vec<RunRecord>,
}

impl AblationResult {
    /// Datasets in order of first appearance.
    pub fn datasets(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.runs {
            if !out.contains(&r.dataset) {
                out.push(r.dataset.clone());
            }
        }
        out
    }

    /// Modes present, in table order.
    pub fn modes(&self) -> Vec<AblationMode> {
        AblationMode::ALL.into_iter().filter(|m| self.runs.iter().any(|r| r.mode == *m)).collect()
    }

    pub fn values(&self, dataset: &str, mode: AblationMode, metric: Metric) -> Vec<f64> {
        self.runs.iter().filter(|r| r.dataset == dataset && r.mode == mode).map(|r| metric.of(r)).collect()
    }

    pub fn summary(&self) -> Vec<ModeSummary> {
        let mut out = Vec::new();
        for ds in self.datasets() {
            for mode in self.modes() {
                let acc = self.values(&ds, mode, Metric::Accuracy);
                if acc.is_empty() {
                    continue;
                }
                let f1 = self.values(&ds, mode, Metric::MacroF1);
                out.push(ModeSummary {
                    dataset: ds.clone(),
                    mode,
                    runs: acc.len(),
                    accuracy_mean: mean(&acc),
                    accuracy_std: sample_std(&acc),
                    macro_f1_mean: mean(&f1),
                    macro_f1_std: sample_std(&f1),
                });
            }
        }
        out
    }

    /// `d[i][j]` compares mode `i` against mode `j`; `None` where undefined.
    pub fn effect_sizes(&self, dataset: &str, metric: Metric) -> Vec<Vec<Option<f64>>> {
        let modes = self.modes();
        modes
            .iter()
            .map(|&a| {
                let va = self.values(dataset, a, metric);
                modes.iter().map(|&b| cohens_d(&va, &self.values(dataset, b, metric)).ok()).collect()
            })
            .collect()
    }

    pub fn write_runs(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path.as_ref())?;
        for r in &self.runs {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io(path.as_ref(), e))
    }

    pub fn read_runs(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::InvalidArgument(format!("run file {} does not exist", path.display())));
        }
        let mut r = csv::Reader::from_path(path)?;
        let runs = r.deserialize().collect::<std::result::Result<Vec<RunRecord>, _>>()?;
        Ok(AblationResult { runs })
    }

    pub fn write_summary(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path.as_ref())?;
        for s in self.summary() {
            w.serialize(s)?;
        }
        w.flush().map_err(|e| Error::io(path.as_ref(), e))
    }

    /// Mode rows by dataset columns, cells `mean±std` in percent.
    pub fn table(&self, metric: Metric) -> Vec<Vec<String>> {
        let datasets = self.datasets();
        let mut rows = vec![std::iter::once("model".to_string()).chain(datasets.iter().cloned()).collect::<Vec<_>>()];
        for mode in self.modes() {
            let mut row = vec![mode.label().to_string()];
            for ds in &datasets {
                let v = self.values(ds, mode, metric);
                row.push(if v.is_empty() {
                    String::new()
                } else {
                    format!("{:.1}±{:.1}", 100.0 * mean(&v), 100.0 * sample_std(&v))
                });
            }
            rows.push(row);
        }
        rows
    }

    pub fn write_table(&self, path: impl AsRef<Path>, metric: Metric) -> Result<()> {
        write_rows(path.as_ref(), &self.table(metric))
    }

    /// Pairwise effect sizes for both metrics, one block per dataset.
    pub fn cohens_d_rows(&self) -> Vec<Vec<String>> {
        let modes = self.modes();
        let mut rows = vec![["dataset", "metric", "model"]
            .iter()
            .map(|s| s.to_string())
            .chain(modes.iter().map(|m| m.label().to_string()))
            .collect::<Vec<_>>()];
        for ds in self.datasets() {
            for metric in [Metric::Accuracy, Metric::MacroF1] {
                for (a, ds_row) in modes.iter().zip(self.effect_sizes(&ds, metric)) {
                    let mut row = vec![ds.clone(), metric.as_str().to_string(), a.label().to_string()];
                    row.extend(ds_row.iter().map(|d| d.map_or_else(|| "undefined".to_string(), |d| format!("{d:.4}"))));
                    rows.push(row);
                }
            }
        }
        rows
    }

    pub fn write_cohens_d(&self, path: impl AsRef<Path>) -> Result<()> {
        write_rows(path.as_ref(), &self.cohens_d_rows())
    }

    /// Writes `runs.csv`, `summary.csv`, `table_accuracy.csv`,
    /// `table_macro_f1.csv` and `cohens_d.csv` into `dir`.
    pub fn write_report(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.write_runs(dir.join("runs.csv"))?;
        self.write_summary(dir.join("summary.csv"))?;
        self.write_table(dir.join("table_accuracy.csv"), Metric::Accuracy)?;
        self.write_table(dir.join("table_macro_f1.csv"), Metric::MacroF1)?;
        self.write_cohens_d(dir.join("cohens_d.csv"))
    }
}

fn write_rows(path: &Path, rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Trains `config.runs` models per mode over a fixed split.
pub fn run_ablation<T: Scalar>(
    config: &AblationConfig,
    dataset: &str,
    table: &FeatureTable<T>,
    split: &Split,
) -> Result<AblationResult> {
    config.validate()?;
    if let Some(m) = config.modes.iter().find(|m| !table.supports(**m)) {
        return Err(Error::InvalidArgument(format!("feature table lacks inputs for mode `{m}`")));
    }
    let tasks: Vec<(AblationMode, usize)> =
        config.modes.iter().flat_map(|&m| (0..config.runs).map(move |r| (m, r))).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.jobs)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot start {} workers: {e}", config.jobs)))?;
    let runs = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(mode, run)| {
                let seed = config.run_seed(run);
                let cfg = TrainConfig { mode, seed, ..config.base.clone() };
                log::info!("ablation: mode `{mode}` run {} of {} (seed {seed})", run + 1, config.runs);
                let out = train(&cfg, table, split)?;
                Ok(RunRecord {
                    dataset: dataset.to_string(),
                    mode,
                    run,
                    seed,
                    accuracy: out.test_report.accuracy,
                    macro_f1: out.test_report.macro_f1,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(AblationResult { runs })
}
