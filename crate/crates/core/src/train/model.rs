//! The assembled classifier for each ablation mode.

use std::fmt;
use std::str::FromStr;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{direct_concat, BranchVars, BranchWidths, Dft, DftConfig, HeadConfig, MlpHead};
use crate::learned::{GlobalBranch, GlobalBranchConfig, LocalBranch, LocalBranchConfig};
use crate::nn::graph::{Graph, Var};
use crate::nn::ops::Mode;
use crate::nn::param::{ParamId, ParamStore};
use crate::rng::{stream, Stream};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::tsar::TensorArchive;

/// Which branches feed the head, and whether they pass through the dense
/// feature transformation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationMode {
    /// All four branches through the dense feature transformation.
    Full,
    /// Random-kernel features only.
    Rf,
    /// Language-model features only.
    Pf,
    /// Random-kernel and language-model features.
    RfPf,
    /// All four branches concatenated raw, no transformation.
    Dc,
}

impl AblationMode {
    pub const ALL: [AblationMode; 5] = [AblationMode::Rf, AblationMode::Pf, AblationMode::RfPf, AblationMode::Dc, AblationMode::Full];

    pub fn uses_learned(self) -> bool {
        matches!(self, AblationMode::Full | AblationMode::Dc)
    }

    pub fn uses_rocket(self) -> bool {
        !matches!(self, AblationMode::Pf)
    }

    pub fn uses_llm(self) -> bool {
        !matches!(self, AblationMode::Rf)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AblationMode::Full => "full",
            AblationMode::Rf => "rf",
            AblationMode::Pf => "pf",
            AblationMode::RfPf => "rf_pf",
            AblationMode::Dc => "dc",
        }
    }

    /// Row label in ablation tables.
    pub fn label(self) -> &'static str {
        match self {
            AblationMode::Full => "Full",
            AblationMode::Rf => "RF",
            AblationMode::Pf => "PF",
            AblationMode::RfPf => "RF & PF",
            AblationMode::Dc => "DC",
        }
    }
}

impl fmt::Display for AblationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AblationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AblationMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown ablation mode `{s}` (expected full, rf, pf, rf_pf or dc)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub mode: AblationMode,
    pub num_classes: usize,
    pub global: GlobalBranchConfig,
    pub local: LocalBranchConfig,
    pub dft: DftConfig,
    pub head: HeadConfig,
    pub rocket_dim: usize,
    pub llm_dim: usize,
}

impl ModelConfig {
    pub fn new(mode: AblationMode, num_classes: usize) -> Self {
        ModelConfig {
            mode,
            num_classes,
            global: GlobalBranchConfig::default(),
            local: LocalBranchConfig::default(),
            dft: DftConfig::default(),
            head: HeadConfig::default(),
            rocket_dim: crate::fusion::ROCKET_DIM,
            llm_dim: crate::fusion::LLM_DIM,
        }
    }

    pub fn branch_widths(&self) -> BranchWidths {
        let m = self.mode;
        BranchWidths {
            global: m.uses_learned().then(|| self.global.output_dim()),
            local: m.uses_learned().then(|| self.local.output_dim()),
            rocket: m.uses_rocket().then_some(self.rocket_dim),
            llm: m.uses_llm().then_some(self.llm_dim),
        }
    }
}

/// Per-batch inputs. `series` is `[B, T, 1]`, `rocket` `[B, rocket_dim]`,
/// `llm` `[B, llm_dim]`; each is required exactly when the mode uses it.
#[derive(Debug, Clone, Default)]
pub struct BatchInputs<T> {
    pub series: Option<Tensor<T>>,
    pub rocket: Option<Tensor<T>>,
    pub llm: Option<Tensor<T>>,
}

impl<T: Scalar> BatchInputs<T> {
    pub fn batch_size(&self) -> usize {
        [&self.series, &self.rocket, &self.llm].iter().flat_map(|t| t.as_ref().map(|t| t.dim(0))).next().unwrap_or(0)
    }
}

#[derive(Debug, Clone)]
pub struct DeepFeatModel<T> {
    pub config: ModelConfig,
    pub store: ParamStore<T>,
    pub global: Option<GlobalBranch>,
    pub local: Option<LocalBranch>,
    pub dft: Option<Dft>,
    pub head: MlpHead,
}

impl<T: Scalar> DeepFeatModel<T> {
    /// Fresh Glorot-initialised model; weights come from the `init` stream
    /// of `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut rng = stream(seed, Stream::Init);
        let mut store = ParamStore::new();
        let (global, local) = if config.mode.uses_learned() {
            (
                Some(GlobalBranch::new(&mut store, config.global.clone(), &mut rng)?),
                Some(LocalBranch::new(&mut store, config.local.clone(), &mut rng)?),
            )
        } else {
            (None, None)
        };
        let widths = config.branch_widths();
        let (dft, head_in) = if config.mode == AblationMode::Dc {
            (None, widths.total())
        } else {
            let dft = Dft::new(&mut store, config.dft.clone(), widths, &mut rng)?;
            let n = dft.output_dim();
            (Some(dft), n)
        };
        let head = MlpHead::new(&mut store, config.head.clone(), head_in, config.num_classes, &mut rng)?;
        Ok(DeepFeatModel { config, store, global, local, dft, head })
    }

    /// Class distribution `[B, C]` as a graph node over `self.store`.
    pub fn forward(&self, g: &mut Graph<'_, T>, inputs: &BatchInputs<T>, mode: Mode, rng: &mut impl RngCore) -> Result<Var> {
        let need = |present: bool, used: bool, what: &str| -> Result<()> {
            if present != used {
                let verb = if used { "needs" } else { "does not use" };
                return Err(Error::InvalidArgument(format!("mode `{}` {verb} {what} inputs", self.config.mode)));
            }
            Ok(())
        };
        let m = self.config.mode;
        need(inputs.series.is_some(), m.uses_learned(), "raw series")?;
        need(inputs.rocket.is_some(), m.uses_rocket(), "random-kernel feature")?;
        need(inputs.llm.is_some(), m.uses_llm(), "language-model feature")?;
        let mut vars = BranchVars::default();
        if let Some(series) = &inputs.series {
            let x = g.input(series.clone());
            if let (Some(gb), Some(lb)) = (&self.global, &self.local) {
                vars.global = Some(gb.forward(g, x)?);
                vars.local = Some(lb.forward(g, x)?);
            }
        }
        if let Some(r) = &inputs.rocket {
            vars.rocket = Some(g.input(r.clone()));
        }
        if let Some(l) = &inputs.llm {
            vars.llm = Some(g.input(l.clone()));
        }
        let fused = match &self.dft {
            Some(dft) => dft.forward(g, &vars)?,
            None => direct_concat(g, &vars)?,
        };
        self.head.forward(g, fused, mode, rng)
    }

    /// Eval-mode class distribution, `[B, C]`.
    pub fn predict_proba(&self, inputs: &BatchInputs<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new(&self.store);
        let mut unused = stream(0, Stream::Dropout);
        let p = self.forward(&mut g, inputs, Mode::Eval, &mut unused)?;
        Ok(g.value(p).clone())
    }

    /// Parameters grouped by component name, in registration order.
    pub fn census(&self) -> Vec<(&'static str, Vec<ParamId>)> {
        let mut out = Vec::new();
        if let Some(gb) = &self.global {
            out.push(("global", gb.param_ids()));
        }
        if let Some(lb) = &self.local {
            out.push(("local", lb.param_ids()));
        }
        if let Some(dft) = &self.dft {
            out.push(("dft", dft.param_ids()));
        }
        out.push(("head", self.head.param_ids()));
        out
    }

    pub fn to_archive(&self) -> Result<TensorArchive> {
        let mut a = TensorArchive::new();
        for (_, p) in self.store.iter() {
            a.insert(p.name.clone(), &p.value)?;
        }
        Ok(a)
    }

    /// Model with `config` whose parameters are read from `archive`.
    pub fn from_archive(config: ModelConfig, archive: &TensorArchive) -> Result<Self> {
        let mut model = Self::new(config, 0)?;
        if archive.len() != model.store.len() {
            return Err(Error::format("TSAR", format!("checkpoint holds {} tensors, model has {}", archive.len(), model.store.len())));
        }
        for p in model.store.params_mut() {
            p.value = archive.tensor(&p.name, Some(p.value.shape()))?;
        }
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mode_names_round_trip() {
        for m in AblationMode::ALL {
            assert_eq!(m.as_str().parse::<AblationMode>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{m}\""));
        }
        assert!("both".parse::<AblationMode>().is_err());
    }

    #[test]
    fn rf_mode_has_no_learned_parameters() {
        let mut cfg = ModelConfig::new(AblationMode::Rf, 3);
        cfg.rocket_dim = 40;
        cfg.dft.rocket_hidden = 16;
        let m = DeepFeatModel::<f32>::new(cfg, 1).unwrap();
        assert!(m.global.is_none() && m.local.is_none());
        assert!(m.store.census().iter().all(|n| n.starts_with("dft.rocket") || n.starts_with("head.")));
        assert_eq!(m.dft.as_ref().unwrap().output_dim(), 64);
    }

    #[test]
    fn dc_head_input_is_sum_of_widths() {
        let mut cfg = ModelConfig::new(AblationMode::Dc, 2);
        cfg.rocket_dim = 10;
        cfg.llm_dim = 6;
        let m = DeepFeatModel::<f32>::new(cfg, 1).unwrap();
        assert!(m.dft.is_none());
        assert_eq!(m.head.hidden[0].input, 128 + 256 + 10 + 6);
    }
}
