//! Pooled transformer features of a serialized series.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::llm::bpe::BpeVocab;
use crate::llm::gpt2::Gpt2Weights;
use crate::llm::serialize::{serialize_chunks, SerializationConfig};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmBranchConfig {
    pub serialization: SerializationConfig,
    /// Back-propagation into the transformer. Not supported.
    pub fine_tune: bool,
}

impl LlmBranchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.fine_tune {
            return Err(Error::InvalidArgument("fine-tuning the language model branch is not supported".into()));
        }
        self.serialization.validate()
    }
}

/// Token ids per rendered value (the separator travels with the value
/// that follows it).
pub fn tokenize_series(series: &[f64], cfg: &SerializationConfig, vocab: &BpeVocab) -> Result<Vec<Vec<u32>>> {
    serialize_chunks(series, cfg)?.iter().map(|c| vocab.encode(c)).collect()
}

/// Packs consecutive chunks greedily into windows of at most `max_len`
/// tokens. A chunk longer than `max_len` on its own is split.
pub fn pack_windows(chunks: &[Vec<u32>], max_len: usize) -> Result<Vec<Vec<u32>>> {
    if max_len == 0 {
        return Err(Error::InvalidArgument("window length must be positive".into()));
    }
    let mut windows: Vec<Vec<u32>> = Vec::new();
    let mut current: Vec<u32> = Vec::new();
    for chunk in chunks {
        if current.len() + chunk.len() > max_len && !current.is_empty() {
            windows.push(std::mem::take(&mut current));
        }
        if chunk.len() > max_len {
            let mut parts = chunk.chunks(max_len).map(<[u32]>::to_vec).collect::<Vec<_>>();
            current = parts.pop().unwrap_or_default();
            windows.extend(parts);
        } else {
            current.extend_from_slice(chunk);
        }
    }
    if !current.is_empty() {
        windows.push(current);
    }
    if windows.is_empty() {
        return Err(Error::InvalidArgument("series produced no tokens".into()));
    }
    Ok(windows)
}

/// Mean over the rows of all windows taken together.
pub fn pool_rows<T: Scalar>(outputs: &[Tensor<T>]) -> Result<Tensor<T>> {
    let first = outputs.first().ok_or_else(|| Error::InvalidArgument("nothing to pool".into()))?;
    let width = first.dim(1);
    let mut sum = vec![T::zero(); width];
    let mut rows = 0usize;
    for o in outputs {
        if o.rank() != 2 || o.dim(1) != width {
            return Err(Error::Shape(format!("cannot pool {:?} with width {width}", o.shape())));
        }
        for r in 0..o.dim(0) {
            sum.iter_mut().zip(o.row(r)).for_each(|(s, &v)| *s += v);
        }
        rows += o.dim(0);
    }
    let inv = T::c(1.0 / rows as f64);
    Ok(Tensor::vector(sum.into_iter().map(|s| s * inv).collect()))
}

pub fn llm_features<T: Scalar>(
    series: &[f64],
    cfg: &SerializationConfig,
    vocab: &BpeVocab,
    weights: &Gpt2Weights<T>,
) -> Result<Tensor<T>> {
    let chunks = tokenize_series(series, cfg, vocab)?;
    let windows = pack_windows(&chunks, weights.config.n_ctx)?;
    let outputs = windows.iter().map(|w| weights.forward(w)).collect::<Result<Vec<_>>>()?;
    pool_rows(&outputs)
}

/// [`llm_features`] of every series, in input order.
pub fn llm_features_all<T: Scalar>(
    series: &[Vec<f64>],
    cfg: &SerializationConfig,
    vocab: &BpeVocab,
    weights: &Gpt2Weights<T>,
) -> Result<Vec<Tensor<T>>> {
    series.par_iter().map(|s| llm_features(s, cfg, vocab, weights)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn windows_respect_chunk_boundaries() {
        let chunks = vec![vec![1, 2], vec![3, 4, 5], vec![6], vec![7, 8, 9, 10, 11, 12, 13]];
        let w = pack_windows(&chunks, 5).unwrap();
        assert_eq!(w, vec![vec![1, 2, 3, 4, 5], vec![6], vec![7, 8, 9, 10, 11], vec![12, 13]]);
        assert!(pack_windows(&chunks, 0).is_err());
    }

    #[test]
    fn pooling_weights_by_rows() {
        let a = Tensor::from_vec(&[1, 2], vec![0.0, 3.0]).unwrap();
        let b = Tensor::from_vec(&[2, 2], vec![3.0, 0.0, 3.0, 0.0]).unwrap();
        assert_eq!(pool_rows(&[a, b]).unwrap().data(), &[2.0, 1.0]);
    }

    #[test]
    fn fine_tuning_is_rejected() {
        let cfg = LlmBranchConfig { fine_tune: true, ..Default::default() };
        assert!(cfg.validate().is_err());
        assert!(LlmBranchConfig::default().validate().is_ok());
    }
}
