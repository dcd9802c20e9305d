//! Seeded synthetic datasets with one signal family per class.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::rng::{stream, BoxMuller, Stream};

/// Noise-free signal of one class; every sample adds i.i.d. Gaussian noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClassGenerator {
    /// `amp · sin(2π · freq · t)`.
    Sinusoid { freq: f64, amp: f64 },
    /// `slope · (t − (n − 1) / 2)`.
    LinearTrend { slope: f64 },
    /// Stationary AR(1) with unit marginal variance:
    /// `x_t = phi · x_{t−1} + sqrt(1 − phi²) · ε_t`.
    Ar1 { phi: f64 },
    /// `sign(sin(2π · freq · t))`, with zero mapped to +1.
    SquareWave { freq: f64 },
}

impl ClassGenerator {
    fn validate(&self) -> Result<()> {
        let ok = match *self {
            ClassGenerator::Sinusoid { freq, amp } => freq.is_finite() && amp.is_finite(),
            ClassGenerator::LinearTrend { slope } => slope.is_finite(),
            ClassGenerator::Ar1 { phi } => phi.abs() < 1.0,
            ClassGenerator::SquareWave { freq } => freq.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid generator parameters {self:?}")))
        }
    }

    fn render(&self, len: usize, normal: &mut BoxMuller, rng: &mut impl rand::RngCore) -> Vec<f64> {
        let tau = 2.0 * std::f64::consts::PI;
        match *self {
            ClassGenerator::Sinusoid { freq, amp } => (0..len).map(|t| amp * (tau * freq * t as f64).sin()).collect(),
            ClassGenerator::LinearTrend { slope } => {
                let mid = (len as f64 - 1.0) / 2.0;
                (0..len).map(|t| slope * (t as f64 - mid)).collect()
            }
            ClassGenerator::Ar1 { phi } => {
                let scale = (1.0 - phi * phi).sqrt();
                let mut x = normal.sample(rng);
                let mut out = Vec::with_capacity(len);
                for _ in 0..len {
                    out.push(x);
                    x = phi * x + scale * normal.sample(rng);
                }
                out
            }
            ClassGenerator::SquareWave { freq } => {
                (0..len).map(|t| if (tau * freq * t as f64).sin() >= 0.0 { 1.0 } else { -1.0 }).collect()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthClass {
    pub name: String,
    #[serde(flatten)]
    pub generator: ClassGenerator,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub name: String,
    pub length: usize,
    pub samples_per_class: usize,
    pub noise: f64,
    pub classes: Vec<SynthClass>,
}

impl Default for SynthSpec {
    /// Four classes × 50 samples × length 128, noise σ = 0.1.
    fn default() -> Self {
        let class = |name: &str, generator| SynthClass { name: name.into(), generator };
        SynthSpec {
            name: "synthetic".into(),
            length: 128,
            samples_per_class: 50,
            noise: 0.1,
            classes: vec![
                class("sinusoid", ClassGenerator::Sinusoid { freq: 1.0 / 16.0, amp: 1.0 }),
                class("trend", ClassGenerator::LinearTrend { slope: 2.0 / 128.0 }),
                class("ar1", ClassGenerator::Ar1 { phi: 0.9 }),
                class("square", ClassGenerator::SquareWave { freq: 1.0 / 32.0 }),
            ],
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes.len() < 2 {
            return Err(Error::InvalidArgument(format!("need at least 2 classes, got {}", self.classes.len())));
        }
        if self.length == 0 || self.samples_per_class == 0 {
            return Err(Error::InvalidArgument("length and samples_per_class must be positive".into()));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::InvalidArgument(format!("noise must be a finite non-negative σ, got {}", self.noise)));
        }
        let mut names: Vec<&str> = self.classes.iter().map(|c| c.name.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        if names.len() != self.classes.len() {
            return Err(Error::InvalidArgument("class names must be unique".into()));
        }
        self.classes.iter().try_for_each(|c| c.generator.validate())
    }
}

/// Samples are ordered class by class, `samples_per_class` each.
pub fn synth_generate(spec: &SynthSpec, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = stream(seed, Stream::Synth);
    let mut normal = BoxMuller::new();
    let mut samples = Vec::with_capacity(spec.classes.len() * spec.samples_per_class);
    for (label, class) in spec.classes.iter().enumerate() {
        for i in 0..spec.samples_per_class {
            let mut values = class.generator.render(spec.length, &mut normal, &mut rng);
            for v in &mut values {
                *v += spec.noise * normal.sample(&mut rng);
            }
            samples.push(Sample { id: format!("{}-{i:04}", class.name), label, values });
        }
    }
    let ds = Dataset {
        name: spec.name.clone(),
        classes: spec.classes.iter().map(|c| c.name.clone()).collect(),
        length: Some(spec.length),
        samples,
    };
    ds.validate()?;
    Ok(ds)
}
