//! Mini-batch training with focal loss, Adam and checkpoint selection.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{DftConfig, HeadConfig, LLM_DIM, ROCKET_DIM};
use crate::learned::{GlobalBranchConfig, LocalBranchConfig};
use crate::nn::graph::Graph;
use crate::nn::ops::Mode;
use crate::nn::optim::{Adam, AdamConfig, LrSchedule};
use crate::nn::param::ParamStore;
use crate::rng::{shuffle, stream, Stream};
use crate::scalar::Scalar;
use crate::train::features::FeatureTable;
use crate::train::metrics::{classification_report, EvalReport};
use crate::train::model::{AblationMode, DeepFeatModel, ModelConfig};
use crate::train::split::{stratified_split, stratified_subsplit, Split};

const EVAL_BATCH: usize = 64;

/// Which epoch's weights a run keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionPolicy {
    /// Highest test accuracy; earliest epoch on ties.
    TestBest,
    /// Highest accuracy on a stratified slice held out from the training
    /// split; lower validation loss breaks ties, then the earlier epoch.
    ValBest,
    /// Final epoch.
    Last,
}

impl SelectionPolicy {
    pub fn as_str(self) -> &'static str {
        match self {
            SelectionPolicy::TestBest => "test_best",
            SelectionPolicy::ValBest => "val_best",
            SelectionPolicy::Last => "last",
        }
    }
}

impl fmt::Display for SelectionPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SelectionPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [SelectionPolicy::TestBest, SelectionPolicy::ValBest, SelectionPolicy::Last]
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown selection policy `{s}` (expected test_best, val_best or last)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub schedule: LrSchedule,
    pub adam: AdamConfig,
    pub focal_gamma: f64,
    pub focal_alpha: f64,
    pub seed: u64,
    pub mode: AblationMode,
    pub selection_policy: SelectionPolicy,
    /// Share of each class of the training split held out for `val_best`.
    pub val_fraction: f64,
    pub split_ratio: f64,
    pub split_seed: u64,
    pub global: GlobalBranchConfig,
    pub local: LocalBranchConfig,
    pub dft: DftConfig,
    pub head: HeadConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 16,
            schedule: LrSchedule::default(),
            adam: AdamConfig::default(),
            focal_gamma: 2.0,
            focal_alpha: 0.25,
            seed: 0,
            mode: AblationMode::Full,
            selection_policy: SelectionPolicy::ValBest,
            val_fraction: 0.15,
            split_ratio: crate::train::split::DEFAULT_RATIO,
            split_seed: crate::train::split::DEFAULT_SEED,
            global: GlobalBranchConfig::default(),
            local: LocalBranchConfig::default(),
            dft: DftConfig::default(),
            head: HeadConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if !(self.focal_gamma >= 0.0 && self.focal_gamma.is_finite()) {
            return bad(format!("focal gamma must be finite and non-negative, got {}", self.focal_gamma));
        }
        if !(self.focal_alpha > 0.0 && self.focal_alpha.is_finite()) {
            return bad(format!("focal alpha must be finite and positive, got {}", self.focal_alpha));
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return bad(format!("split ratio must lie in (0, 1), got {}", self.split_ratio));
        }
        if self.selection_policy == SelectionPolicy::ValBest && !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return bad(format!("validation fraction must lie in (0, 1), got {}", self.val_fraction));
        }
        self.schedule.validate()
    }

    pub fn model_config(&self, num_classes: usize, rocket_dim: Option<usize>, llm_dim: Option<usize>) -> ModelConfig {
        ModelConfig {
            mode: self.mode,
            num_classes,
            global: self.global.clone(),
            local: self.local.clone(),
            dft: self.dft.clone(),
            head: self.head.clone(),
            rocket_dim: rocket_dim.unwrap_or(ROCKET_DIM),
            llm_dim: llm_dim.unwrap_or(LLM_DIM),
        }
    }

    /// The seed-fixed train/test partition.
    pub fn split(&self, labels: &[usize], num_classes: usize) -> Result<Split> {
        stratified_split(labels, num_classes, self.split_ratio, self.split_seed)
    }
}

/// One row of the training history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_acc: f64,
    pub test_macro_f1: f64,
    /// Rate applied at the epoch's last update.
    pub lr: f64,
    #[serde(skip)]
    pub val: Option<(f64, f64)>,
}

impl EpochRecord {
    pub fn val_acc(&self) -> Option<f64> {
        self.val.map(|(acc, _)| acc)
    }

    pub fn val_loss(&self) -> Option<f64> {
        self.val.map(|(_, loss)| loss)
    }
}

pub const HISTORY_HEADER: [&str; 6] = ["epoch", "train_loss", "train_acc", "test_acc", "test_macro_f1", "lr"];

pub fn write_history(path: impl AsRef<Path>, history: &[EpochRecord]) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_history_to(std::io::BufWriter::new(file), history)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub model: DeepFeatModel<T>,
    pub history: Vec<EpochRecord>,
    /// 1-based epoch whose weights `model` holds.
    pub selected_epoch: usize,
    pub test_report: EvalReport,
    pub val_report: Option<EvalReport>,
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
}

/// Argmax predictions and mean focal loss of `model` on `indices`.
pub fn predict<T: Scalar>(
    model: &DeepFeatModel<T>,
    table: &FeatureTable<T>,
    indices: &[usize],
    focal: (f64, f64),
) -> Result<(Vec<usize>, f64)> {
    let mut preds = Vec::with_capacity(indices.len());
    let mut loss_sum = 0.0;
    for chunk in indices.chunks(EVAL_BATCH) {
        let (inputs, targets) = table.batch(model.config.mode, chunk)?;
        let mut g = Graph::new(&model.store);
        let mut unused = stream(0, Stream::Dropout);
        let probs = model.forward(&mut g, &inputs, Mode::Eval, &mut unused)?;
        let loss = g.focal_loss(probs, &targets, T::c(focal.0), T::c(focal.1))?;
        loss_sum += g.value(loss).data()[0].as_f64() * chunk.len() as f64;
        preds.extend(argmax_rows(g.value(probs).data(), model.config.num_classes));
    }
    Ok((preds, loss_sum / indices.len().max(1) as f64))
}

/// Eval-mode metrics of `model` on the samples at `indices`.
pub fn evaluate<T: Scalar>(model: &DeepFeatModel<T>, table: &FeatureTable<T>, indices: &[usize]) -> Result<EvalReport> {
    if indices.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate an empty split".into()));
    }
    let start = Instant::now();
    let (preds, _) = predict(model, table, indices, (0.0, 1.0))?;
    let actual: Vec<usize> = indices.iter().map(|&i| table.labels[i]).collect();
    let mut report = classification_report(&actual, &preds, model.config.num_classes)?;
    report.runtime_secs = start.elapsed().as_secs_f64();
    Ok(report)
}

fn argmax_rows<T: Scalar>(probs: &[T], classes: usize) -> impl Iterator<Item = usize> + '_ {
    probs.chunks(classes).map(|row| {
        let mut best = 0;
        for (c, &p) in row.iter().enumerate() {
            if p > row[best] {
                best = c;
            }
        }
        best
    })
}

fn improves(policy: SelectionPolicy, rec: &EpochRecord, best: Option<&EpochRecord>) -> bool {
    let Some(best) = best else { return true };
    match policy {
        SelectionPolicy::Last => true,
        SelectionPolicy::TestBest => rec.test_acc > best.test_acc,
        SelectionPolicy::ValBest => match (rec.val, best.val) {
            (Some((acc, loss)), Some((best_acc, best_loss))) => acc > best_acc || (acc == best_acc && loss < best_loss),
            _ => false,
        },
    }
}

/// Trains a fresh model on `split.train` and reports on `split.test`.
pub fn train<T: Scalar>(config: &TrainConfig, table: &FeatureTable<T>, split: &Split) -> Result<TrainOutcome<T>> {
    config.validate()?;
    if !table.supports(config.mode) {
        return Err(Error::InvalidArgument(format!("feature table lacks inputs for mode `{}`", config.mode)));
    }
    if split.train.is_empty() || split.test.is_empty() {
        return Err(Error::InvalidArgument("train and test splits must both be non-empty".into()));
    }
    let num_classes = table.num_classes;
    let (train_idx, val_idx) = if config.selection_policy == SelectionPolicy::ValBest {
        let s = stratified_subsplit(&split.train, &table.labels, num_classes, 1.0 - config.val_fraction, config.split_seed)?;
        (s.train, s.test)
    } else {
        (split.train.clone(), Vec::new())
    };
    let model_cfg = config.model_config(num_classes, table.rocket_dim(), table.llm_dim());
    let mut model = DeepFeatModel::<T>::new(model_cfg, config.seed)?;
    log::info!(
        "training mode `{}`: {} parameters, {} train / {} val / {} test samples",
        config.mode,
        model.store.scalar_count(),
        train_idx.len(),
        val_idx.len(),
        split.test.len()
    );
    let mut adam = Adam::new(&model.store, config.adam);
    let mut shuffle_rng = stream(config.seed, Stream::Shuffle);
    let mut dropout_rng = stream(config.seed, Stream::Dropout);
    let (gamma, alpha) = (T::c(config.focal_gamma), T::c(config.focal_alpha));
    let mut order = train_idx.clone();
    let mut history: Vec<EpochRecord> = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, ParamStore<T>)> = None;
    let mut step: u64 = 0;
    for epoch in 1..=config.epochs {
        let start = Instant::now();
        shuffle(&mut order, &mut shuffle_rng);
        let (mut loss_sum, mut correct, mut lr) = (0.0, 0usize, 0.0);
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let (inputs, targets) = table.batch(config.mode, batch)?;
            let grads = {
                let mut g = Graph::new(&model.store);
                let probs = model.forward(&mut g, &inputs, Mode::Train, &mut dropout_rng)?;
                let loss = g.focal_loss(probs, &targets, gamma, alpha)?;
                let value = g.value(loss).data()[0].as_f64();
                if !value.is_finite() {
                    return Err(Error::Divergence(format!("loss is {value} at epoch {epoch}, batch {}", b + 1)));
                }
                loss_sum += value * batch.len() as f64;
                correct += argmax_rows(g.value(probs).data(), num_classes).zip(&targets).filter(|(p, t)| p == *t).count();
                g.backward(loss)?
            };
            model.store.zero_grad();
            model.store.accumulate(&grads)?;
            lr = config.schedule.lr_at(step);
            adam.step(&mut model.store, T::c(lr)).map_err(|e| match e {
                Error::Divergence(msg) => Error::Divergence(format!("{msg} at epoch {epoch}, batch {}", b + 1)),
                other => other,
            })?;
            step += 1;
        }
        let test = evaluate(&model, table, &split.test)?;
        let val = if val_idx.is_empty() {
            None
        } else {
            let (preds, loss) = predict(&model, table, &val_idx, (config.focal_gamma, config.focal_alpha))?;
            let hits = preds.iter().zip(&val_idx).filter(|(p, &i)| **p == table.labels[i]).count();
            Some((hits as f64 / val_idx.len() as f64, loss))
        };
        let rec = EpochRecord {
            epoch,
            train_loss: loss_sum / order.len() as f64,
            train_acc: correct as f64 / order.len() as f64,
            test_acc: test.accuracy,
            test_macro_f1: test.macro_f1,
            lr,
            val,
        };
        log::info!(
            "epoch {epoch}/{}: loss {:.4} train acc {:.3} test acc {:.3}{} ({:.1}s)",
            config.epochs,
            rec.train_loss,
            rec.train_acc,
            rec.test_acc,
            rec.val_acc().map(|a| format!(" val acc {a:.3}")).unwrap_or_default(),
            start.elapsed().as_secs_f64()
        );
        let best_rec = best.as_ref().map(|(e, _)| &history[e - 1]);
        if improves(config.selection_policy, &rec, best_rec) {
            match &mut best {
                Some((e, store)) => {
                    *e = epoch;
                    store.load_values_from(&model.store)?;
                }
                None => best = Some((epoch, model.store.clone())),
            }
        }
        history.push(rec);
    }
    let (selected_epoch, store) = best.ok_or_else(|| Error::InvalidArgument("no epoch was run".into()))?;
    model.store.load_values_from(&store)?;
    let test_report = evaluate(&model, table, &split.test)?;
    let val_report = if val_idx.is_empty() { None } else { Some(evaluate(&model, table, &val_idx)?) };
    log::info!("selected epoch {selected_epoch} ({}): test accuracy {:.4}", config.selection_policy, test_report.accuracy);
    Ok(TrainOutcome {
        model,
        history,
        selected_epoch,
        test_report,
        val_report,
        train_indices: train_idx,
        val_indices: val_idx,
        test_indices: split.test.clone(),
    })
}

/// Writes the history CSV to any writer.
pub fn write_history_to(mut out: impl Write, history: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(&mut out);
    w.write_record(HISTORY_HEADER)?;
    for r in history {
        w.serialize((r.epoch, r.train_loss, r.train_acc, r.test_acc, r.test_macro_f1, r.lr))?;
    }
    w.flush().map_err(|e| Error::io("<history>", e))
}
