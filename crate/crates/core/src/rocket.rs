//! Random convolutional kernel features.
//!
//! A bank of 10 000 fixed kernels (length 9, dilation 4, zero bias, padding
//! 16) is convolved with the series; each kernel contributes its global max
//! and its proportion of positive values.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::{stream, BoxMuller, Stream};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const NUM_KERNELS: usize = 10_000;
pub const KERNEL_LEN: usize = 9;
pub const DILATION: usize = 4;
pub const PADDING: usize = (KERNEL_LEN - 1) * DILATION / 2;
pub const WEIGHT_STD: f64 = 0.05;
/// Features per kernel: `[max, ppv]`.
pub const FEATURES_PER_KERNEL: usize = 2;
pub const FEATURE_DIM: usize = NUM_KERNELS * FEATURES_PER_KERNEL;
pub const DEFAULT_SEED: u64 = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct RandomKernel {
    pub weights: [f64; KERNEL_LEN],
    pub dilation: usize,
    pub bias: f64,
    pub padding: usize,
}

impl RandomKernel {
    pub fn new(weights: [f64; KERNEL_LEN]) -> Self {
        RandomKernel { weights, dilation: DILATION, bias: 0.0, padding: PADDING }
    }

    /// Convolution output written into `out` (cleared first).
    pub fn convolve<T: Scalar>(&self, series: &[T], out: &mut Vec<T>) {
        let w: [T; KERNEL_LEN] = self.weights.map(T::c);
        convolve_with(series, &w, T::c(self.bias), self.dilation, self.padding, out);
    }

    /// `[max, ppv]` of the convolution output.
    pub fn features<T: Scalar>(&self, series: &[T]) -> Result<[T; 2]> {
        if series.is_empty() {
            return Err(Error::InvalidArgument("cannot extract features from an empty series".into()));
        }
        let mut out = Vec::with_capacity(series.len());
        self.convolve(series, &mut out);
        pooled(&out)
    }
}

fn convolve_with<T: Scalar>(x: &[T], w: &[T; KERNEL_LEN], bias: T, dilation: usize, padding: usize, out: &mut Vec<T>) {
    out.clear();
    let len = x.len();
    let span = (KERNEL_LEN - 1) * dilation;
    let out_len = (len + 2 * padding).saturating_sub(span);
    for t in 0..out_len {
        let mut acc = bias;
        for (j, &wj) in w.iter().enumerate() {
            let src = t + j * dilation;
            if src < padding || src - padding >= len {
                continue;
            }
            acc += wj * x[src - padding];
        }
        out.push(acc);
    }
}

fn pooled<T: Scalar>(v: &[T]) -> Result<[T; 2]> {
    let max = v.iter().copied().fold(T::neg_infinity(), T::max);
    Ok([max, ppv(v)?])
}

/// Fraction of strictly positive entries.
pub fn ppv<T: Scalar>(v: &[T]) -> Result<T> {
    if v.is_empty() {
        return Err(Error::InvalidArgument("ppv of an empty vector".into()));
    }
    let positive = v.iter().filter(|&&x| x > T::zero()).count();
    Ok(T::c(positive as f64 / v.len() as f64))
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelBank {
    pub kernels: Vec<RandomKernel>,
    pub seed: u64,
}

impl KernelBank {
    /// The standard 10 000-kernel bank.
    pub fn generate(seed: u64) -> Self {
        Self::with_size(seed, NUM_KERNELS)
    }

    /// A bank with `count` kernels; the first `n` kernels of any two banks
    /// with the same seed agree.
    pub fn with_size(seed: u64, count: usize) -> Self {
        let mut rng = stream(seed, Stream::Kernels);
        let mut normal = BoxMuller::new();
        let kernels = (0..count)
            .map(|_| {
                let mut w = [0.0; KERNEL_LEN];
                for v in &mut w {
                    *v = WEIGHT_STD * normal.sample(&mut rng);
                }
                RandomKernel::new(w)
            })
            .collect();
        KernelBank { kernels, seed }
    }

    pub fn len(&self) -> usize {
        self.kernels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kernels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.kernels.len() * FEATURES_PER_KERNEL
    }

    /// Every weight, kernel-major.
    pub fn weights(&self) -> impl Iterator<Item = f64> + '_ {
        self.kernels.iter().flat_map(|k| k.weights.iter().copied())
    }

    /// Kernel-major `[max_0, ppv_0, max_1, ppv_1, …]`.
    pub fn extract<T: Scalar>(&self, series: &[T]) -> Result<Tensor<T>> {
        if series.is_empty() {
            return Err(Error::InvalidArgument("cannot extract features from an empty series".into()));
        }
        if let Some(i) = series.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("series value {i} is not finite")));
        }
        let mut out = vec![T::zero(); self.feature_dim()];
        out.par_chunks_mut(FEATURES_PER_KERNEL * 256)
            .zip(self.kernels.par_chunks(256))
            .try_for_each(|(dst, kernels)| -> Result<()> {
                let mut buf = Vec::with_capacity(series.len());
                for (pair, kernel) in dst.chunks_mut(FEATURES_PER_KERNEL).zip(kernels) {
                    kernel.convolve(series, &mut buf);
                    pair.copy_from_slice(&pooled(&buf)?);
                }
                Ok(())
            })?;
        Ok(Tensor::vector(out))
    }

    /// One feature row per series, in input order.
    pub fn extract_all<T: Scalar>(&self, series: &[Vec<T>]) -> Result<Vec<Tensor<T>>> {
        series.par_iter().map(|s| self.extract(s)).collect()
    }
}

/// Standard bank extraction of one series.
pub fn extract<T: Scalar>(series: &[T], bank: &KernelBank) -> Result<Tensor<T>> {
    bank.extract(series)
}
