//! Inference-only GPT-2 transformer.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::ops::{gelu_tanh, normalize_row, softmax_in_place};
use crate::rng::{stream, BoxMuller, Stream};
use crate::scalar::{gemm, MatRef, Scalar};
use crate::tensor::Tensor;
use crate::tsar::TensorArchive;

pub const HEAD_DIM: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gpt2Config {
    pub vocab_size: usize,
    pub n_ctx: usize,
    pub n_embd: usize,
    pub n_layer: usize,
    pub n_head: usize,
    pub layer_norm_eps: f64,
}

impl Gpt2Config {
    /// The 124M-parameter configuration.
    pub fn small() -> Self {
        Gpt2Config { vocab_size: 50_257, n_ctx: 1024, n_embd: 768, n_layer: 12, n_head: 12, layer_norm_eps: 1e-5 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 || self.n_ctx == 0 || self.n_layer == 0 || self.n_head == 0 {
            return Err(Error::InvalidArgument(format!("degenerate GPT-2 config {self:?}")));
        }
        if self.n_embd != self.n_head * HEAD_DIM {
            return Err(Error::InvalidArgument(format!(
                "n_embd {} must equal n_head {} × head width {HEAD_DIM}",
                self.n_embd, self.n_head
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct LayerNormParams<T> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

/// Dense weights use the `[in, out]` layout of the published checkpoint.
#[derive(Debug, Clone)]
pub struct Block<T> {
    pub ln_1: LayerNormParams<T>,
    pub qkv_w: Tensor<T>,
    pub qkv_b: Tensor<T>,
    pub proj_w: Tensor<T>,
    pub proj_b: Tensor<T>,
    pub ln_2: LayerNormParams<T>,
    pub fc_w: Tensor<T>,
    pub fc_b: Tensor<T>,
    pub mlp_proj_w: Tensor<T>,
    pub mlp_proj_b: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct Gpt2Weights<T> {
    pub config: Gpt2Config,
    pub wte: Tensor<T>,
    pub wpe: Tensor<T>,
    pub blocks: Vec<Block<T>>,
    pub ln_f: LayerNormParams<T>,
}

fn block_tensor_names(i: usize) -> [String; 12] {
    [
        format!("h{i}.ln_1.w"),
        format!("h{i}.ln_1.b"),
        format!("h{i}.attn.qkv.w"),
        format!("h{i}.attn.qkv.b"),
        format!("h{i}.attn.proj.w"),
        format!("h{i}.attn.proj.b"),
        format!("h{i}.ln_2.w"),
        format!("h{i}.ln_2.b"),
        format!("h{i}.mlp.fc.w"),
        format!("h{i}.mlp.fc.b"),
        format!("h{i}.mlp.proj.w"),
        format!("h{i}.mlp.proj.b"),
    ]
}

impl<T: Scalar> Block<T> {
    fn tensors(&self) -> [&Tensor<T>; 12] {
        [
            &self.ln_1.gamma,
            &self.ln_1.beta,
            &self.qkv_w,
            &self.qkv_b,
            &self.proj_w,
            &self.proj_b,
            &self.ln_2.gamma,
            &self.ln_2.beta,
            &self.fc_w,
            &self.fc_b,
            &self.mlp_proj_w,
            &self.mlp_proj_b,
        ]
    }

    fn shapes(e: usize) -> [Vec<usize>; 12] {
        [
            vec![e],
            vec![e],
            vec![e, 3 * e],
            vec![3 * e],
            vec![e, e],
            vec![e],
            vec![e],
            vec![e],
            vec![e, 4 * e],
            vec![4 * e],
            vec![4 * e, e],
            vec![e],
        ]
    }

    fn from_tensors(mut t: Vec<Tensor<T>>) -> Self {
        let mut next = || t.remove(0);
        Block {
            ln_1: LayerNormParams { gamma: next(), beta: next() },
            qkv_w: next(),
            qkv_b: next(),
            proj_w: next(),
            proj_b: next(),
            ln_2: LayerNormParams { gamma: next(), beta: next() },
            fc_w: next(),
            fc_b: next(),
            mlp_proj_w: next(),
            mlp_proj_b: next(),
        }
    }
}

impl<T: Scalar> Gpt2Weights<T> {
    /// Loads an archive. The configuration is inferred from tensor shapes
    /// (block count from the `h{i}` groups, heads from the 64-wide head
    /// convention).
    pub fn from_archive(archive: &TensorArchive) -> Result<Self> {
        let wte = archive.get("wte").ok_or_else(|| Error::MissingTensor("wte".into()))?;
        let wpe = archive.get("wpe").ok_or_else(|| Error::MissingTensor("wpe".into()))?;
        if wte.shape.len() != 2 || wpe.shape.len() != 2 {
            return Err(Error::Shape("wte and wpe must be rank 2".into()));
        }
        let n_embd = wte.shape[1];
        let n_layer = (0..).take_while(|i| archive.get(&format!("h{i}.ln_1.w")).is_some()).count();
        let config = Gpt2Config {
            vocab_size: wte.shape[0],
            n_ctx: wpe.shape[0],
            n_embd,
            n_layer,
            n_head: n_embd / HEAD_DIM,
            layer_norm_eps: 1e-5,
        };
        Self::from_archive_with(archive, config)
    }

    pub fn from_archive_with(archive: &TensorArchive, config: Gpt2Config) -> Result<Self> {
        config.validate()?;
        let e = config.n_embd;
        let wte = archive.tensor("wte", Some(&[config.vocab_size, e]))?;
        let wpe = archive.tensor("wpe", Some(&[config.n_ctx, e]))?;
        let mut blocks = Vec::with_capacity(config.n_layer);
        for i in 0..config.n_layer {
            let shapes = Block::<T>::shapes(e);
            let tensors = block_tensor_names(i)
                .iter()
                .zip(&shapes)
                .map(|(name, shape)| archive.tensor(name, Some(shape)))
                .collect::<Result<Vec<_>>>()?;
            blocks.push(Block::from_tensors(tensors));
        }
        if archive.get(&format!("h{}.ln_1.w", config.n_layer)).is_some() {
            return Err(Error::format("TSAR", format!("archive holds more than {} blocks", config.n_layer)));
        }
        let ln_f = LayerNormParams { gamma: archive.tensor("ln_f.g", Some(&[e]))?, beta: archive.tensor("ln_f.b", Some(&[e]))? };
        let w = Gpt2Weights { config, wte, wpe, blocks, ln_f };
        if !w.all_tensors().iter().all(|t| t.all_finite()) {
            return Err(Error::format("TSAR", "GPT-2 weights contain non-finite values"));
        }
        Ok(w)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_archive(&TensorArchive::read(path)?)
    }

    pub fn to_archive(&self) -> Result<TensorArchive> {
        let mut a = TensorArchive::new();
        a.insert("wte", &self.wte)?;
        a.insert("wpe", &self.wpe)?;
        for (i, b) in self.blocks.iter().enumerate() {
            for (name, t) in block_tensor_names(i).into_iter().zip(b.tensors()) {
                a.insert(name, t)?;
            }
        }
        a.insert("ln_f.g", &self.ln_f.gamma)?;
        a.insert("ln_f.b", &self.ln_f.beta)?;
        Ok(a)
    }

    /// Randomly initialised weights with the published initialisation
    /// scheme: dense and embedding weights `N(0, 0.02)`, zero biases, unit
    /// layer-norm scales.
    pub fn random(config: Gpt2Config, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = stream(seed, Stream::Surrogate);
        let mut normal = BoxMuller::new();
        let mut gauss = |shape: &[usize]| {
            let n = shape.iter().product();
            let data = (0..n).map(|_| T::c(0.02 * normal.sample(&mut rng))).collect();
            Tensor::from_vec(shape, data)
        };
        let e = config.n_embd;
        let ln = || LayerNormParams { gamma: Tensor::full(&[e], T::one()), beta: Tensor::zeros(&[e]) };
        let wte = gauss(&[config.vocab_size, e])?;
        let wpe = gauss(&[config.n_ctx, e])?;
        let mut blocks = Vec::with_capacity(config.n_layer);
        for _ in 0..config.n_layer {
            blocks.push(Block {
                ln_1: ln(),
                qkv_w: gauss(&[e, 3 * e])?,
                qkv_b: Tensor::zeros(&[3 * e]),
                proj_w: gauss(&[e, e])?,
                proj_b: Tensor::zeros(&[e]),
                ln_2: ln(),
                fc_w: gauss(&[e, 4 * e])?,
                fc_b: Tensor::zeros(&[4 * e]),
                mlp_proj_w: gauss(&[4 * e, e])?,
                mlp_proj_b: Tensor::zeros(&[e]),
            });
        }
        Ok(Gpt2Weights { config, wte, wpe, blocks, ln_f: ln() })
    }

    fn all_tensors(&self) -> Vec<&Tensor<T>> {
        let mut v = vec![&self.wte, &self.wpe];
        for b in &self.blocks {
            v.extend(b.tensors());
        }
        v.push(&self.ln_f.gamma);
        v.push(&self.ln_f.beta);
        v
    }

    /// Hex digest over the configuration and a strided sample of every
    /// tensor; identifies a weight set for caching.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.config).unwrap_or_default());
        for t in self.all_tensors() {
            let data = t.data();
            let stride = (data.len() / 4096).max(1);
            for v in data.iter().step_by(stride) {
                h.update((v.as_f64() as f32).to_le_bytes());
            }
        }
        format!("{:x}", h.finalize())
    }

    pub fn forward(&self, ids: &[u32]) -> Result<Tensor<T>> {
        self.forward_inspect(ids, &mut |_| {})
    }

    /// Forward pass that hands every layer-norm's normalised input (before
    /// scale and shift) to `probe`.
    pub fn forward_inspect(&self, ids: &[u32], probe: &mut dyn FnMut(&[T])) -> Result<Tensor<T>> {
        let cfg = &self.config;
        let (t_len, e) = (ids.len(), cfg.n_embd);
        if t_len == 0 || t_len > cfg.n_ctx {
            return Err(Error::InvalidArgument(format!("sequence length {t_len} outside [1, {}]", cfg.n_ctx)));
        }
        let mut x = Vec::with_capacity(t_len * e);
        for (pos, &id) in ids.iter().enumerate() {
            if id as usize >= cfg.vocab_size {
                return Err(Error::InvalidArgument(format!("token id {id} outside vocabulary of {}", cfg.vocab_size)));
            }
            let tok = self.wte.row(id as usize);
            let p = self.wpe.row(pos);
            x.extend(tok.iter().zip(p).map(|(&a, &b)| a + b));
        }
        let eps = T::c(cfg.layer_norm_eps);
        let mut h = vec![T::zero(); t_len * e];
        for b in &self.blocks {
            layer_norm_rows(&x, &mut h, e, &b.ln_1, eps, probe);
            let qkv = linear(&h, t_len, &b.qkv_w, &b.qkv_b);
            let attn = self.attention(&qkv, t_len);
            let out = linear(&attn, t_len, &b.proj_w, &b.proj_b);
            x.iter_mut().zip(&out).for_each(|(a, &o)| *a += o);

            layer_norm_rows(&x, &mut h, e, &b.ln_2, eps, probe);
            let mut fc = linear(&h, t_len, &b.fc_w, &b.fc_b);
            fc.iter_mut().for_each(|v| *v = gelu_tanh(*v));
            let out = linear(&fc, t_len, &b.mlp_proj_w, &b.mlp_proj_b);
            x.iter_mut().zip(&out).for_each(|(a, &o)| *a += o);
        }
        layer_norm_rows(&x, &mut h, e, &self.ln_f, eps, probe);
        Tensor::from_vec(&[t_len, e], h)
    }

    /// Causal multi-head attention over `qkv` (`[T, 3E]`).
    fn attention(&self, qkv: &[T], t_len: usize) -> Vec<T> {
        let e = self.config.n_embd;
        let scale = T::c(1.0 / (HEAD_DIM as f64).sqrt());
        let mut out = vec![T::zero(); t_len * e];
        let mut q = vec![T::zero(); t_len * HEAD_DIM];
        let mut k = q.clone();
        let mut v = q.clone();
        let mut scores = vec![T::zero(); t_len * t_len];
        let mut head_out = q.clone();
        for head in 0..self.config.n_head {
            let off = head * HEAD_DIM;
            for t in 0..t_len {
                let row = &qkv[t * 3 * e..(t + 1) * 3 * e];
                q[t * HEAD_DIM..(t + 1) * HEAD_DIM].copy_from_slice(&row[off..off + HEAD_DIM]);
                k[t * HEAD_DIM..(t + 1) * HEAD_DIM].copy_from_slice(&row[e + off..e + off + HEAD_DIM]);
                v[t * HEAD_DIM..(t + 1) * HEAD_DIM].copy_from_slice(&row[2 * e + off..2 * e + off + HEAD_DIM]);
            }
            gemm(
                MatRef::new(&q, t_len, HEAD_DIM),
                MatRef::new(&k, t_len, HEAD_DIM).t(),
                &mut scores,
                false,
            );
            for i in 0..t_len {
                let row = &mut scores[i * t_len..(i + 1) * t_len];
                row[..=i].iter_mut().for_each(|s| *s *= scale);
                softmax_in_place(&mut row[..=i]);
                row[i + 1..].iter_mut().for_each(|s| *s = T::zero());
            }
            gemm(MatRef::new(&scores, t_len, t_len), MatRef::new(&v, t_len, HEAD_DIM), &mut head_out, false);
            for t in 0..t_len {
                out[t * e + off..t * e + off + HEAD_DIM].copy_from_slice(&head_out[t * HEAD_DIM..(t + 1) * HEAD_DIM]);
            }
        }
        out
    }
}

/// `x W + b` with `W` stored `[in, out]`.
fn linear<T: Scalar>(x: &[T], rows: usize, w: &Tensor<T>, b: &Tensor<T>) -> Vec<T> {
    let (n_in, n_out) = (w.dim(0), w.dim(1));
    let mut out = Vec::with_capacity(rows * n_out);
    for _ in 0..rows {
        out.extend_from_slice(b.data());
    }
    gemm(MatRef::new(x, rows, n_in), MatRef::new(w.data(), n_in, n_out), &mut out, true);
    out
}

fn layer_norm_rows<T: Scalar>(
    x: &[T],
    out: &mut [T],
    width: usize,
    p: &LayerNormParams<T>,
    eps: T,
    probe: &mut dyn FnMut(&[T]),
) {
    out.copy_from_slice(x);
    for row in out.chunks_mut(width) {
        normalize_row(row, eps);
    }
    probe(out);
    for row in out.chunks_mut(width) {
        for ((v, &g), &b) in row.iter_mut().zip(p.gamma.data()).zip(p.beta.data()) {
            *v = *v * g + b;
        }
    }
}

pub fn gpt2_forward<T: Scalar>(ids: &[u32], weights: &Gpt2Weights<T>) -> Result<Tensor<T>> {
    weights.forward(ids)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Gpt2Config {
        Gpt2Config { vocab_size: 50, n_ctx: 16, n_embd: 128, n_layer: 2, n_head: 2, layer_norm_eps: 1e-5 }
    }

    #[test]
    fn archive_round_trip() {
        let w = Gpt2Weights::<f32>::random(tiny(), 1).unwrap();
        let a = w.to_archive().unwrap();
        let back = Gpt2Weights::<f32>::from_archive(&a).unwrap();
        assert_eq!(back.config, w.config);
        assert_eq!(back.fingerprint(), w.fingerprint());
        let ids = [3, 1, 4, 1, 5];
        assert_eq!(back.forward(&ids).unwrap(), w.forward(&ids).unwrap());
    }

    #[test]
    fn rejects_bad_lengths_and_ids() {
        let w = Gpt2Weights::<f64>::random(tiny(), 1).unwrap();
        assert!(w.forward(&[]).is_err());
        assert!(w.forward(&[0; 17]).is_err());
        assert!(w.forward(&[50]).is_err());
        assert_eq!(w.forward(&[0; 16]).unwrap().shape(), &[16, 128]);
    }

    #[test]
    fn config_requires_64_wide_heads() {
        let mut c = tiny();
        c.n_head = 4;
        assert!(c.validate().is_err());
        assert!(Gpt2Config::small().validate().is_ok());
    }
}
