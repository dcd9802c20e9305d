//! Dense feature transformation, direct concatenation and the classifier
//! head.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::graph::{Graph, Var};
use crate::nn::ops::{check_dropout_rate, dropout_mask, Mode};
use crate::nn::param::{ParamId, ParamStore};
use crate::scalar::Scalar;

pub const GLOBAL_DIM: usize = 128;
pub const LOCAL_DIM: usize = 256;
pub const ROCKET_DIM: usize = crate::rocket::FEATURE_DIM;
pub const LLM_DIM: usize = 768;
pub const DC_DIM: usize = GLOBAL_DIM + LOCAL_DIM + ROCKET_DIM + LLM_DIM;

/// Dense → layer norm → ReLU.
#[derive(Debug, Clone, Copy)]
pub struct DenseBlock {
    pub weights: ParamId,
    pub bias: ParamId,
    pub gamma: ParamId,
    pub beta: ParamId,
    pub input: usize,
    pub output: usize,
}

impl DenseBlock {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, input: usize, output: usize, rng: &mut impl RngCore) -> Self {
        DenseBlock {
            weights: store.add_glorot(format!("{name}.w"), &[output, input], input, output, rng),
            bias: store.add_zeros(format!("{name}.b"), &[output]),
            gamma: store.add_ones(format!("{name}.ln.g"), &[output]),
            beta: store.add_zeros(format!("{name}.ln.b"), &[output]),
            input,
            output,
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var, eps: T) -> Result<Var> {
        let y = g.linear(x, self.weights, self.bias)?;
        let (gamma, beta) = (g.param(self.gamma), g.param(self.beta));
        let y = g.layer_norm(y, gamma, beta, eps)?;
        Ok(g.relu(y))
    }

    pub fn param_ids(&self) -> [ParamId; 4] {
        [self.weights, self.bias, self.gamma, self.beta]
    }
}

/// Branch outputs as graph nodes; absent branches are `None`.
#[derive(Debug, Clone, Copy, Default)]
pub struct BranchVars {
    pub global: Option<Var>,
    pub local: Option<Var>,
    pub rocket: Option<Var>,
    pub llm: Option<Var>,
}

impl BranchVars {
    fn ordered(&self) -> [Option<Var>; 4] {
        [self.global, self.local, self.rocket, self.llm]
    }
}

/// Which branches feed the fusion stage, with their widths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BranchWidths {
    pub global: Option<usize>,
    pub local: Option<usize>,
    pub rocket: Option<usize>,
    pub llm: Option<usize>,
}

impl BranchWidths {
    pub fn all() -> Self {
        BranchWidths { global: Some(GLOBAL_DIM), local: Some(LOCAL_DIM), rocket: Some(ROCKET_DIM), llm: Some(LLM_DIM) }
    }

    pub fn total(&self) -> usize {
        [self.global, self.local, self.rocket, self.llm].iter().flatten().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DftConfig {
    pub width: usize,
    pub rocket_hidden: usize,
    pub ln_eps: f64,
}

impl Default for DftConfig {
    fn default() -> Self {
        DftConfig { width: 64, rocket_hidden: 1024, ln_eps: 1e-5 }
    }
}

/// Per-branch projections into equal-width dense spaces.
#[derive(Debug, Clone)]
pub struct Dft {
    pub config: DftConfig,
    pub global: Option<DenseBlock>,
    pub local: Option<DenseBlock>,
    pub rocket: Option<[DenseBlock; 2]>,
    pub llm: Option<DenseBlock>,
}

impl Dft {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, config: DftConfig, widths: BranchWidths, rng: &mut impl RngCore) -> Result<Self> {
        if widths.total() == 0 {
            return Err(Error::InvalidArgument("fusion needs at least one branch".into()));
        }
        let w = config.width;
        let global = widths.global.map(|n| DenseBlock::new(store, "dft.global", n, w, rng));
        let local = widths.local.map(|n| DenseBlock::new(store, "dft.local", n, w, rng));
        let rocket = widths.rocket.map(|n| {
            [
                DenseBlock::new(store, "dft.rocket0", n, config.rocket_hidden, rng),
                DenseBlock::new(store, "dft.rocket1", config.rocket_hidden, w, rng),
            ]
        });
        let llm = widths.llm.map(|n| DenseBlock::new(store, "dft.llm", n, w, rng));
        Ok(Dft { config, global, local, rocket, llm })
    }

    pub fn output_dim(&self) -> usize {
        let n = [self.global.is_some(), self.local.is_some(), self.rocket.is_some(), self.llm.is_some()];
        n.iter().filter(|&&b| b).count() * self.config.width
    }

    /// Projected blocks concatenated in the order global, local, rocket, llm.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, inputs: &BranchVars) -> Result<Var> {
        let eps = T::c(self.config.ln_eps);
        let mut blocks = Vec::new();
        let pairs: [(Option<Var>, bool, &str); 4] = [
            (inputs.global, self.global.is_some(), "global"),
            (inputs.local, self.local.is_some(), "local"),
            (inputs.rocket, self.rocket.is_some(), "rocket"),
            (inputs.llm, self.llm.is_some(), "llm"),
        ];
        for (x, expected, name) in pairs {
            if x.is_some() != expected {
                return Err(Error::Shape(format!("fusion input `{name}` presence does not match the configured branches")));
            }
        }
        if let (Some(x), Some(b)) = (inputs.global, &self.global) {
            blocks.push(b.forward(g, x, eps)?);
        }
        if let (Some(x), Some(b)) = (inputs.local, &self.local) {
            blocks.push(b.forward(g, x, eps)?);
        }
        if let (Some(x), Some([b0, b1])) = (inputs.rocket, &self.rocket) {
            let h = b0.forward(g, x, eps)?;
            blocks.push(b1.forward(g, h, eps)?);
        }
        if let (Some(x), Some(b)) = (inputs.llm, &self.llm) {
            blocks.push(b.forward(g, x, eps)?);
        }
        g.concat(&blocks)
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = Vec::new();
        for b in [self.global, self.local].iter().flatten() {
            ids.extend(b.param_ids());
        }
        for b in self.rocket.iter().flatten() {
            ids.extend(b.param_ids());
        }
        for b in self.llm.iter() {
            ids.extend(b.param_ids());
        }
        ids
    }
}

/// Raw concatenation of the present branches in the order global, local,
/// rocket, llm.
pub fn direct_concat<T: Scalar>(g: &mut Graph<'_, T>, inputs: &BranchVars) -> Result<Var> {
    let parts: Vec<Var> = inputs.ordered().into_iter().flatten().collect();
    if parts.is_empty() {
        return Err(Error::InvalidArgument("direct concatenation of no branches".into()));
    }
    g.concat(&parts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub hidden: Vec<usize>,
    pub dropout: f64,
    pub ln_eps: f64,
}

impl Default for HeadConfig {
    fn default() -> Self {
        HeadConfig { hidden: vec![128, 64], dropout: 0.5, ln_eps: 1e-5 }
    }
}

/// Hidden blocks with dropout, then a dense layer and softmax.
#[derive(Debug, Clone)]
pub struct MlpHead {
    pub config: HeadConfig,
    pub hidden: Vec<DenseBlock>,
    pub out_weights: ParamId,
    pub out_bias: ParamId,
    pub classes: usize,
}

impl MlpHead {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        config: HeadConfig,
        input: usize,
        classes: usize,
        rng: &mut impl RngCore,
    ) -> Result<Self> {
        if classes < 2 {
            return Err(Error::InvalidArgument(format!("classifier needs at least 2 classes, got {classes}")));
        }
        check_dropout_rate(config.dropout)?;
        let mut hidden = Vec::new();
        let mut n = input;
        for (i, &h) in config.hidden.iter().enumerate() {
            hidden.push(DenseBlock::new(store, &format!("head.hidden{i}"), n, h, rng));
            n = h;
        }
        let out_weights = store.add_glorot("head.out.w", &[classes, n], n, classes, rng);
        let out_bias = store.add_zeros("head.out.b", &[classes]);
        Ok(MlpHead { config, hidden, out_weights, out_bias, classes })
    }

    /// Class distribution `[B, C]`. Dropout masks are drawn from `rng` in
    /// training mode only.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var, mode: Mode, rng: &mut impl RngCore) -> Result<Var> {
        let eps = T::c(self.config.ln_eps);
        let mut h = x;
        for block in &self.hidden {
            h = block.forward(g, h, eps)?;
            if mode == Mode::Train && self.config.dropout > 0.0 {
                let mask = dropout_mask(g.value(h).len(), self.config.dropout, rng)?;
                h = g.mask(h, mask)?;
            }
        }
        let logits = g.linear(h, self.out_weights, self.out_bias)?;
        Ok(g.softmax(logits))
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids: Vec<ParamId> = self.hidden.iter().flat_map(|b| b.param_ids()).collect();
        ids.extend([self.out_weights, self.out_bias]);
        ids
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};
    use crate::tensor::Tensor;

    #[test]
    fn dc_width() {
        assert_eq!(DC_DIM, 21_152);
        assert_eq!(BranchWidths::all().total(), DC_DIM);
    }

    #[test]
    fn head_rejects_single_class() {
        let mut store = ParamStore::<f64>::new();
        assert!(MlpHead::new(&mut store, HeadConfig::default(), 8, 1, &mut stream(0, Stream::Init)).is_err());
    }

    #[test]
    fn dft_zero_input_gives_zero() {
        let mut store = ParamStore::<f64>::new();
        let widths = BranchWidths { global: Some(4), local: None, rocket: Some(6), llm: None };
        let cfg = DftConfig { width: 3, rocket_hidden: 5, ln_eps: 1e-5 };
        let dft = Dft::new(&mut store, cfg, widths, &mut stream(0, Stream::Init)).unwrap();
        let mut g = Graph::new(&store);
        let inputs = BranchVars {
            global: Some(g.input(Tensor::zeros(&[2, 4]))),
            rocket: Some(g.input(Tensor::zeros(&[2, 6]))),
            ..Default::default()
        };
        let y = dft.forward(&mut g, &inputs).unwrap();
        assert_eq!(g.shape(y), &[2, 6]);
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
        let missing = BranchVars { global: inputs.global, ..Default::default() };
        assert!(dft.forward(&mut g, &missing).is_err());
    }
}
