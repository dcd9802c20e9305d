//! Trainable feature branches: a bidirectional GRU stack for global shape
//! and parallel convolution stacks for local sub-patterns.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::graph::{Graph, Var};
use crate::nn::param::{ParamId, ParamStore};
use crate::nn::recurrent::{bigru_stack, BiGruParams};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalBranchConfig {
    pub layers: usize,
    pub hidden: usize,
}

impl Default for GlobalBranchConfig {
    fn default() -> Self {
        GlobalBranchConfig { layers: 2, hidden: 64 }
    }
}

impl GlobalBranchConfig {
    pub fn output_dim(&self) -> usize {
        2 * self.hidden
    }
}

#[derive(Debug, Clone)]
pub struct GlobalBranch {
    pub config: GlobalBranchConfig,
    pub layers: Vec<BiGruParams>,
}

impl GlobalBranch {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, config: GlobalBranchConfig, rng: &mut impl RngCore) -> Result<Self> {
        if config.layers == 0 || config.hidden == 0 {
            return Err(Error::InvalidArgument("global branch needs at least one layer of positive width".into()));
        }
        let mut layers = Vec::with_capacity(config.layers);
        let mut input = 1;
        for i in 0..config.layers {
            layers.push(BiGruParams::new(store, &format!("global.gru{i}"), input, config.hidden, rng));
            input = 2 * config.hidden;
        }
        Ok(GlobalBranch { config, layers })
    }

    /// `[B, T, 1]` → ReLU of the final forward ‖ backward states, `[B, 2H]`.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, seq: Var) -> Result<Var> {
        let h = bigru_stack(g, seq, &self.layers)?;
        Ok(g.relu(h))
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.layers
            .iter()
            .flat_map(|l| [l.forward, l.backward])
            .flat_map(|d| [d.w_input, d.w_hidden, d.bias])
            .collect()
    }

    /// Features of one series.
    pub fn features<T: Scalar>(&self, store: &ParamStore<T>, series: &[T]) -> Result<Tensor<T>> {
        single_series(store, series, |g, x| self.forward(g, x))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalBranchConfig {
    pub kernel_sizes: Vec<usize>,
    pub filters: usize,
    pub depth: usize,
}

impl Default for LocalBranchConfig {
    fn default() -> Self {
        LocalBranchConfig { kernel_sizes: vec![3, 5, 7, 11], filters: 64, depth: 2 }
    }
}

impl LocalBranchConfig {
    pub fn output_dim(&self) -> usize {
        self.kernel_sizes.len() * self.filters
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ConvLayer {
    pub weights: ParamId,
    pub bias: ParamId,
    pub kernel: usize,
}

#[derive(Debug, Clone)]
pub struct LocalBranch {
    pub config: LocalBranchConfig,
    /// One stack per kernel size, in configuration order.
    pub stacks: Vec<Vec<ConvLayer>>,
}

impl LocalBranch {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, config: LocalBranchConfig, rng: &mut impl RngCore) -> Result<Self> {
        if config.kernel_sizes.is_empty() || config.filters == 0 || config.depth == 0 {
            return Err(Error::InvalidArgument("local branch needs kernels, filters and depth".into()));
        }
        if let Some(k) = config.kernel_sizes.iter().find(|&&k| k % 2 == 0) {
            return Err(Error::InvalidArgument(format!("kernel size {k} is even; same padding needs odd sizes")));
        }
        let f = config.filters;
        let mut stacks = Vec::new();
        for &k in &config.kernel_sizes {
            let mut layers = Vec::new();
            let mut cin = 1;
            for d in 0..config.depth {
                let name = format!("local.k{k}.conv{d}");
                layers.push(ConvLayer {
                    weights: store.add_glorot(format!("{name}.w"), &[k, cin, f], k * cin, k * f, rng),
                    bias: store.add_zeros(format!("{name}.b"), &[f]),
                    kernel: k,
                });
                cin = f;
            }
            stacks.push(layers);
        }
        Ok(LocalBranch { config, stacks })
    }

    /// `[B, T, 1]` → per-stack global max pools concatenated, `[B, S·F]`.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, seq: Var) -> Result<Var> {
        let mut pooled = Vec::with_capacity(self.stacks.len());
        for stack in &self.stacks {
            let mut h = seq;
            for layer in stack {
                let (w, b) = (g.param(layer.weights), g.param(layer.bias));
                let y = g.conv1d(h, w, b, 1, (layer.kernel - 1) / 2)?;
                h = g.relu(y);
            }
            pooled.push(g.max_time(h)?);
        }
        g.concat(&pooled)
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.stacks.iter().flatten().flat_map(|l| [l.weights, l.bias]).collect()
    }

    pub fn features<T: Scalar>(&self, store: &ParamStore<T>, series: &[T]) -> Result<Tensor<T>> {
        single_series(store, series, |g, x| self.forward(g, x))
    }
}

/// Packs series of equal length into a `[B, T, 1]` tensor.
pub fn batch_series<T: Scalar>(series: &[&[T]]) -> Result<Tensor<T>> {
    let len = series.first().map_or(0, |s| s.len());
    if len == 0 {
        return Err(Error::InvalidArgument("empty series".into()));
    }
    if series.iter().any(|s| s.len() != len) {
        return Err(Error::Shape("series in a batch must share one length".into()));
    }
    let data = series.iter().flat_map(|s| s.iter().copied()).collect();
    Tensor::from_vec(&[series.len(), len, 1], data)
}

fn single_series<T: Scalar>(
    store: &ParamStore<T>,
    series: &[T],
    f: impl FnOnce(&mut Graph<'_, T>, Var) -> Result<Var>,
) -> Result<Tensor<T>> {
    let x = batch_series(&[series])?;
    let mut g = Graph::new(store);
    let xv = g.input(x);
    let y = f(&mut g, xv)?;
    let n = g.value(y).len();
    g.value(y).clone().reshape(&[n])
}
