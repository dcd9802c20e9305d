//! Precomputed per-sample inputs for training and evaluation.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::learned::batch_series;
use crate::llm::{llm_features_all, BpeVocab, FeatureCache, Gpt2Weights, LlmBranchConfig};
use crate::rocket::KernelBank;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::train::model::{AblationMode, BatchInputs};

/// Frozen language model and tokenizer with an optional on-disk cache.
#[derive(Debug)]
pub struct LlmResources {
    pub vocab: BpeVocab,
    pub weights: Gpt2Weights<f32>,
    pub config: LlmBranchConfig,
    pub cache: Option<FeatureCache>,
}

impl LlmResources {
    pub fn new(vocab: BpeVocab, weights: Gpt2Weights<f32>, config: LlmBranchConfig) -> Result<Self> {
        config.validate()?;
        Ok(LlmResources { vocab, weights, config, cache: None })
    }

    pub fn with_cache(mut self, cache: FeatureCache) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn feature_dim(&self) -> usize {
        self.weights.config.n_embd
    }

    /// One pooled row per sample of `dataset`, read from or written to the
    /// cache when one is configured.
    pub fn features(&self, dataset: &Dataset) -> Result<Vec<Tensor<f32>>> {
        let key = self.cache.as_ref().map(|_| {
            FeatureCache::key(&dataset.content_hash(), &self.config.serialization, &self.weights.fingerprint())
        });
        if let (Some(cache), Some(key)) = (&self.cache, &key) {
            if let Some(rows) = cache.load(key, dataset.len()) {
                log::info!("language-model features for `{}` read from cache", dataset.name);
                return Ok(rows);
            }
        }
        log::info!("computing language-model features for {} series", dataset.len());
        let rows = llm_features_all(&dataset.series(), &self.config.serialization, &self.vocab, &self.weights)?;
        if let (Some(cache), Some(key)) = (&self.cache, &key) {
            let path = cache.store(key, &rows)?;
            log::info!("cached language-model features at {}", path.display());
        }
        Ok(rows)
    }
}

/// Frozen feature extractors available to a run.
#[derive(Debug, Clone, Copy, Default)]
pub struct FeatureSources<'a> {
    pub rocket: Option<&'a KernelBank>,
    pub llm: Option<&'a LlmResources>,
}

/// Inputs for a set of modes, one entry per dataset sample.
#[derive(Debug, Clone)]
pub struct FeatureTable<T> {
    pub num_classes: usize,
    pub labels: Vec<usize>,
    pub series: Vec<Vec<T>>,
    pub rocket: Option<Vec<Tensor<T>>>,
    pub llm: Option<Vec<Tensor<T>>>,
}

impl<T: Scalar> FeatureTable<T> {
    /// Extracts the frozen features any of `modes` needs.
    pub fn build(dataset: &Dataset, modes: &[AblationMode], sources: FeatureSources<'_>) -> Result<Self> {
        dataset.validate()?;
        let series: Vec<Vec<T>> =
            dataset.samples.iter().map(|s| s.values.iter().map(|&v| T::c(v)).collect()).collect();
        let rocket = if let Some(mode) = modes.iter().find(|m| m.uses_rocket()) {
            let bank = sources
                .rocket
                .ok_or_else(|| Error::InvalidArgument(format!("mode `{mode}` needs a random kernel bank")))?;
            log::info!("extracting {} random-kernel features per series", bank.feature_dim());
            Some(bank.extract_all(&series)?)
        } else {
            None
        };
        let llm = if let Some(mode) = modes.iter().find(|m| m.uses_llm()) {
            let res = sources
                .llm
                .ok_or_else(|| Error::InvalidArgument(format!("mode `{mode}` needs language-model weights")))?;
            Some(res.features(dataset)?.iter().map(Tensor::cast).collect())
        } else {
            None
        };
        Ok(FeatureTable { num_classes: dataset.num_classes(), labels: dataset.labels(), series, rocket, llm })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn rocket_dim(&self) -> Option<usize> {
        self.rocket.as_ref().and_then(|r| r.first()).map(Tensor::len)
    }

    pub fn llm_dim(&self) -> Option<usize> {
        self.llm.as_ref().and_then(|r| r.first()).map(Tensor::len)
    }

    /// True when every input of `mode` is present.
    pub fn supports(&self, mode: AblationMode) -> bool {
        (!mode.uses_rocket() || self.rocket.is_some()) && (!mode.uses_llm() || self.llm.is_some())
    }

    /// Inputs of `mode` and targets for the samples at `indices`.
    pub fn batch(&self, mode: AblationMode, indices: &[usize]) -> Result<(BatchInputs<T>, Vec<usize>)> {
        if !self.supports(mode) {
            return Err(Error::InvalidArgument(format!("feature table lacks inputs for mode `{mode}`")));
        }
        if indices.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::InvalidArgument(format!("sample index {bad} outside table of {}", self.len())));
        }
        let series = if mode.uses_learned() {
            let rows: Vec<&[T]> = indices.iter().map(|&i| self.series[i].as_slice()).collect();
            Some(batch_series(&rows)?)
        } else {
            None
        };
        let inputs = BatchInputs {
            series,
            rocket: self.rocket.as_ref().filter(|_| mode.uses_rocket()).map(|r| stack_rows(r, indices)).transpose()?,
            llm: self.llm.as_ref().filter(|_| mode.uses_llm()).map(|r| stack_rows(r, indices)).transpose()?,
        };
        Ok((inputs, indices.iter().map(|&i| self.labels[i]).collect()))
    }
}

fn stack_rows<T: Scalar>(rows: &[Tensor<T>], indices: &[usize]) -> Result<Tensor<T>> {
    let width = rows[indices[0]].len();
    let mut data = Vec::with_capacity(width * indices.len());
    for &i in indices {
        if rows[i].len() != width {
            return Err(Error::Shape(format!("feature row {i} has width {}, expected {width}", rows[i].len())));
        }
        data.extend_from_slice(rows[i].data());
    }
    Tensor::from_vec(&[indices.len(), width], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::{synth_generate, SynthSpec};

    #[test]
    fn rf_table_batches_rows_in_order() {
        let spec = SynthSpec { samples_per_class: 3, length: 20, ..SynthSpec::default() };
        let ds = synth_generate(&spec, 1).unwrap();
        let bank = KernelBank::with_size(100, 8);
        let sources = FeatureSources { rocket: Some(&bank), llm: None };
        let t = FeatureTable::<f64>::build(&ds, &[AblationMode::Rf], sources).unwrap();
        assert_eq!(t.rocket_dim(), Some(16));
        assert!(!t.supports(AblationMode::Full));
        assert!(t.batch(AblationMode::Pf, &[0]).is_err());
        let (b, y) = t.batch(AblationMode::Rf, &[4, 0]).unwrap();
        assert!(b.series.is_none() && b.llm.is_none());
        let r = b.rocket.unwrap();
        assert_eq!(r.shape(), &[2, 16]);
        assert_eq!(r.row(0), bank.extract(&ds.samples[4].values).unwrap().data());
        assert_eq!(y, vec![ds.samples[4].label, ds.samples[0].label]);
        assert!(t.batch(AblationMode::Rf, &[]).is_err());
        assert!(FeatureTable::<f64>::build(&ds, &[AblationMode::Pf], FeatureSources::default()).is_err());
    }
}
