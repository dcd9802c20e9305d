//! Forward-only reference implementations of the network primitives.
//!
//! These operate on single samples and are used by the frozen feature
//! extractors and as readable references for the differentiable versions in
//! [`crate::nn::graph`].

use rand::RngCore;

use crate::error::{Error, Result};
use crate::rng::uniform01;
use crate::scalar::{gemm, MatRef, Scalar};
use crate::tensor::{expect_shape, Tensor};

/// Output length of a 1-D convolution, or a dimension error when the padded
/// input is shorter than the receptive field.
pub fn conv_output_len(len: usize, kernel: usize, dilation: usize, padding: usize) -> Result<usize> {
    if kernel == 0 || dilation == 0 {
        return Err(Error::InvalidArgument("kernel size and dilation must be positive".into()));
    }
    let span = (kernel - 1) * dilation + 1;
    let padded = len + 2 * padding;
    if padded < span {
        return Err(Error::Dimension(format!(
            "series of length {len} with padding {padding} is shorter than receptive field {span}"
        )));
    }
    Ok(padded - span + 1)
}

/// Dilated, zero-padded convolution.
///
/// `input` is `[T, Cin]`, `weights` is `[k, Cin, Cout]`, `bias` is `[Cout]`.
/// `y[t, o] = bias[o] + Σ_{j,c} w[j, c, o] · x[t + j·d − p, c]`, with
/// out-of-range samples reading as zero.
pub fn conv1d<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
    dilation: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    if input.rank() != 2 || weights.rank() != 3 {
        return Err(Error::Shape("conv1d expects input [T, Cin] and weights [k, Cin, Cout]".into()));
    }
    let (len, cin) = (input.dim(0), input.dim(1));
    let (k, wcin, cout) = (weights.dim(0), weights.dim(1), weights.dim(2));
    if wcin != cin {
        return Err(Error::Shape(format!("conv1d input has {cin} channels, weights expect {wcin}")));
    }
    expect_shape("conv1d bias", bias.shape(), &[cout])?;
    let out_len = conv_output_len(len, k, dilation, padding)?;
    let x = input.data();
    let w = weights.data();
    let mut out = Vec::with_capacity(out_len * cout);
    for t in 0..out_len {
        out.extend_from_slice(bias.data());
        let row = &mut out[t * cout..];
        for j in 0..k {
            let src = (t + j * dilation) as isize - padding as isize;
            if src < 0 || src as usize >= len {
                continue;
            }
            let xs = &x[src as usize * cin..(src as usize + 1) * cin];
            for (c, &xv) in xs.iter().enumerate() {
                let wrow = &w[(j * cin + c) * cout..(j * cin + c + 1) * cout];
                for (o, &wv) in wrow.iter().enumerate() {
                    row[o] += wv * xv;
                }
            }
        }
    }
    Tensor::from_vec(&[out_len, cout], out)
}

/// `y = W x + b` with `W` of shape `[m, n]`.
pub fn dense<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if w.rank() != 2 {
        return Err(Error::Shape("dense weight must be rank 2".into()));
    }
    let (m, n) = (w.dim(0), w.dim(1));
    expect_shape("dense input", x.shape(), &[n])?;
    expect_shape("dense bias", b.shape(), &[m])?;
    let mut out = b.data().to_vec();
    gemm(MatRef::new(w.data(), m, n), MatRef::new(x.data(), n, 1), &mut out, true);
    Ok(Tensor::vector(out))
}

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

pub fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

/// Normalizes one row in place: `(x − μ) / sqrt(σ² + eps)` with population
/// variance. Returns the reciprocal standard deviation.
pub fn normalize_row<T: Scalar>(row: &mut [T], eps: T) -> T {
    let n = T::c(row.len() as f64);
    let mean = row.iter().copied().sum::<T>() / n;
    let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
    let inv = T::one() / (var + eps).sqrt();
    row.iter_mut().for_each(|v| *v = (*v - mean) * inv);
    inv
}

pub fn layer_norm<T: Scalar>(x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>, eps: T) -> Result<Tensor<T>> {
    let n = x.len();
    if n < 2 {
        return Err(Error::InvalidArgument("layer_norm needs at least two features".into()));
    }
    if eps <= T::zero() {
        return Err(Error::InvalidArgument("layer_norm epsilon must be positive".into()));
    }
    expect_shape("layer_norm gamma", gamma.shape(), &[n])?;
    expect_shape("layer_norm beta", beta.shape(), &[n])?;
    let mut out = x.data().to_vec();
    normalize_row(&mut out, eps);
    for ((v, &g), &b) in out.iter_mut().zip(gamma.data()).zip(beta.data()) {
        *v = *v * g + b;
    }
    Tensor::from_vec(x.shape(), out)
}

/// Numerically stable softmax over a vector.
pub fn softmax<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    if x.is_empty() {
        return Err(Error::InvalidArgument("softmax of an empty vector".into()));
    }
    let mut out = x.data().to_vec();
    softmax_in_place(&mut out);
    Tensor::from_vec(x.shape(), out)
}

pub(crate) fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    row.iter_mut().for_each(|v| *v /= sum);
}

/// Lower clamp applied to the target probability before the logarithm.
pub const FOCAL_PROB_FLOOR: f64 = 1e-12;

/// Focal loss `−α (1 − p_t)^γ ln p_t` for one distribution.
pub fn focal_loss<T: Scalar>(probs: &Tensor<T>, target: usize, gamma: T, alpha: T) -> Result<T> {
    if target >= probs.len() {
        return Err(Error::InvalidArgument(format!(
            "target class {target} out of range for {} classes",
            probs.len()
        )));
    }
    Ok(focal_value(probs.data()[target], gamma, alpha))
}

pub(crate) fn focal_value<T: Scalar>(p: T, gamma: T, alpha: T) -> T {
    let p = p.max(T::c(FOCAL_PROB_FLOOR)).min(T::one());
    -alpha * (T::one() - p).powf(gamma) * p.ln()
}

/// d loss / d p_t, zero where the clamp is active.
pub(crate) fn focal_grad<T: Scalar>(p: T, gamma: T, alpha: T) -> T {
    if p < T::c(FOCAL_PROB_FLOOR) || p > T::one() {
        return T::zero();
    }
    let q = T::one() - p;
    let modulating = q.powf(gamma);
    let d_mod = if gamma == T::zero() || q == T::zero() {
        T::zero()
    } else {
        -gamma * q.powf(gamma - T::one())
    };
    -alpha * (d_mod * p.ln() + modulating / p)
}

/// Whether dropout perturbs activations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Inverted dropout mask: each entry is 0 with probability `rate`, otherwise
/// `1 / (1 − rate)`.
pub fn dropout_mask<T: Scalar>(len: usize, rate: f64, rng: &mut impl RngCore) -> Result<Vec<T>> {
    check_dropout_rate(rate)?;
    let keep = T::c(1.0 / (1.0 - rate));
    Ok((0..len).map(|_| if uniform01(rng) < rate { T::zero() } else { keep }).collect())
}

pub(crate) fn check_dropout_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!("dropout rate {rate} outside [0, 1)")));
    }
    Ok(())
}

pub fn dropout<T: Scalar>(x: &Tensor<T>, rate: f64, mode: Mode, rng: &mut impl RngCore) -> Result<Tensor<T>> {
    check_dropout_rate(rate)?;
    if mode == Mode::Eval || rate == 0.0 {
        return Ok(x.clone());
    }
    let mask = dropout_mask::<T>(x.len(), rate, rng)?;
    Tensor::from_vec(x.shape(), x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect())
}

/// GELU, tanh approximation.
pub fn gelu_tanh<T: Scalar>(v: T) -> T {
    let c = T::c((2.0 / std::f64::consts::PI).sqrt());
    T::c(0.5) * v * (T::one() + (c * (v + T::c(0.044715) * v * v * v)).tanh())
}

/// Weights of one GRU direction. Gate blocks are stacked in the order
/// update (z), reset (r), candidate (h̃).
#[derive(Debug, Clone)]
pub struct GruCell<T> {
    /// `[3H, in]`
    pub w_input: Tensor<T>,
    /// `[3H, H]`
    pub w_hidden: Tensor<T>,
    /// `[3H]`
    pub bias: Tensor<T>,
}

impl<T: Scalar> GruCell<T> {
    pub fn hidden(&self) -> usize {
        self.w_hidden.dim(1)
    }

    pub fn input(&self) -> usize {
        self.w_input.dim(1)
    }

    fn validate(&self) -> Result<()> {
        let h = self.hidden();
        expect_shape("gru hidden weights", self.w_hidden.shape(), &[3 * h, h])?;
        expect_shape("gru input weights", self.w_input.shape(), &[3 * h, self.input()])?;
        expect_shape("gru bias", self.bias.shape(), &[3 * h])
    }
}

/// One GRU step:
/// `z = σ(Wz x + Uz h + bz)`, `r = σ(Wr x + Ur h + br)`,
/// `h̃ = tanh(Wh x + Uh (r ⊙ h) + bh)`, `h' = z ⊙ h + (1 − z) ⊙ h̃`.
pub fn gru_cell<T: Scalar>(x: &Tensor<T>, h_prev: &Tensor<T>, cell: &GruCell<T>) -> Result<Tensor<T>> {
    cell.validate()?;
    let h = cell.hidden();
    expect_shape("gru input", x.shape(), &[cell.input()])?;
    expect_shape("gru state", h_prev.shape(), &[h])?;
    let mut gx = cell.bias.data().to_vec();
    gemm(
        MatRef::new(cell.w_input.data(), 3 * h, cell.input()),
        MatRef::new(x.data(), cell.input(), 1),
        &mut gx,
        true,
    );
    let whid = cell.w_hidden.data();
    let mut gh = vec![T::zero(); 2 * h];
    gemm(MatRef::new(&whid[..2 * h * h], 2 * h, h), MatRef::new(h_prev.data(), h, 1), &mut gh, false);
    let z: Vec<T> = (0..h).map(|i| sigmoid(gx[i] + gh[i])).collect();
    let r: Vec<T> = (0..h).map(|i| sigmoid(gx[h + i] + gh[h + i])).collect();
    let rh: Vec<T> = r.iter().zip(h_prev.data()).map(|(&a, &b)| a * b).collect();
    let mut cand = gx[2 * h..].to_vec();
    gemm(MatRef::new(&whid[2 * h * h..], h, h), MatRef::new(&rh, h, 1), &mut cand, true);
    let out = (0..h)
        .map(|i| {
            let c = cand[i].tanh();
            z[i] * h_prev.data()[i] + (T::one() - z[i]) * c
        })
        .collect();
    Ok(Tensor::vector(out))
}

/// Forward and backward cells of one bidirectional layer.
#[derive(Debug, Clone)]
pub struct BiGruLayer<T> {
    pub forward: GruCell<T>,
    pub backward: GruCell<T>,
}

/// Runs a stack of bidirectional GRU layers over `seq` (`[T, Cin]`).
///
/// Intermediate layers feed `[T, 2H]` sequences (forward state ‖ backward
/// state at each time step) to the next layer. The last layer returns the
/// final forward state concatenated with the final backward state (the one
/// produced after reading time step 0).
pub fn bigru_forward<T: Scalar>(seq: &Tensor<T>, layers: &[BiGruLayer<T>]) -> Result<Tensor<T>> {
    if seq.rank() != 2 || seq.dim(0) == 0 {
        return Err(Error::InvalidArgument("bigru_forward needs a non-empty [T, C] sequence".into()));
    }
    if layers.is_empty() {
        return Err(Error::InvalidArgument("bigru_forward needs at least one layer".into()));
    }
    let steps = seq.dim(0);
    let mut current = seq.clone();
    for (li, layer) in layers.iter().enumerate() {
        let run = |cell: &GruCell<T>, order: &mut dyn Iterator<Item = usize>| -> Result<Vec<Tensor<T>>> {
            let mut states = vec![Tensor::zeros(&[cell.hidden()]); steps];
            let mut h = Tensor::zeros(&[cell.hidden()]);
            for t in order {
                let x = Tensor::vector(current.row(t).to_vec());
                h = gru_cell(&x, &h, cell)?;
                states[t] = h.clone();
            }
            Ok(states)
        };
        let fwd = run(&layer.forward, &mut (0..steps))?;
        let bwd = run(&layer.backward, &mut (0..steps).rev())?;
        if li + 1 == layers.len() {
            let mut out = fwd[steps - 1].data().to_vec();
            out.extend_from_slice(bwd[0].data());
            return Ok(Tensor::vector(out));
        }
        let width = fwd[0].len() + bwd[0].len();
        let mut next = Vec::with_capacity(steps * width);
        for t in 0..steps {
            next.extend_from_slice(fwd[t].data());
            next.extend_from_slice(bwd[t].data());
        }
        current = Tensor::from_vec(&[steps, width], next)?;
    }
    unreachable!("loop returns on the last layer")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    fn t(v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(&[v.len()], v).unwrap()
    }

    fn rand_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = stream(seed, Stream::Init);
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| uniform01(&mut rng) * 2.0 - 1.0).collect()).unwrap()
    }

    #[test]
    fn conv_identity_kernel() {
        let x = Tensor::from_f64(&[3, 1], &[1.0, 2.0, 3.0]).unwrap();
        let w = Tensor::from_f64(&[1, 1, 1], &[1.0]).unwrap();
        let y = conv1d(&x, &w, &t(&[0.0]), 1, 0).unwrap();
        assert_eq!(y.data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn conv_dilated_pair() {
        let x = Tensor::from_f64(&[4, 1], &[1.0; 4]).unwrap();
        let w = Tensor::from_f64(&[2, 1, 1], &[1.0, 1.0]).unwrap();
        let y = conv1d(&x, &w, &t(&[0.0]), 2, 0).unwrap();
        assert_eq!(y.shape(), &[2, 1]);
        assert_eq!(y.data(), &[2.0, 2.0]);
    }

    #[test]
    fn conv_matches_double_loop_oracle() {
        let x = rand_tensor(&[20, 1], 1);
        let w = rand_tensor(&[9, 1, 1], 2);
        let y = conv1d(&x, &w, &t(&[0.0]), 4, 16).unwrap();
        // Oracle: pad explicitly, then slide.
        let mut padded = vec![0.0; 16];
        padded.extend_from_slice(x.data());
        padded.extend(std::iter::repeat_n(0.0, 16));
        let out_len = 20 + 32 - 8 * 4;
        assert_eq!(y.len(), out_len);
        for s in 0..out_len {
            let mut acc = 0.0;
            for j in 0..9 {
                acc += w.data()[j] * padded[s + 4 * j];
            }
            assert_eq!(y.data()[s], acc);
        }
    }

    #[test]
    fn conv_too_short_is_dimension_error() {
        let x = Tensor::from_f64(&[3, 1], &[1.0, 2.0, 3.0]).unwrap();
        let w = Tensor::from_f64(&[9, 1, 1], &[1.0; 9]).unwrap();
        assert!(matches!(conv1d(&x, &w, &t(&[0.0]), 4, 0), Err(Error::Dimension(_))));
    }

    #[test]
    fn dense_cases() {
        let x = t(&[1.0, -2.0, 3.0]);
        let eye = Tensor::from_f64(&[3, 3], &[1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap();
        assert_eq!(dense(&x, &eye, &t(&[0.0; 3])).unwrap().data(), x.data());
        let zero = Tensor::zeros(&[2, 3]);
        assert_eq!(dense(&x, &zero, &t(&[4.0, 5.0])).unwrap().data(), &[4.0, 5.0]);
        let w = rand_tensor(&[5, 3], 3);
        let b = rand_tensor(&[5], 4);
        let y = dense(&x, &w, &b).unwrap();
        for i in 0..5 {
            let mut acc = b.data()[i];
            for j in 0..3 {
                acc += w.data()[i * 3 + j] * x.data()[j];
            }
            assert!((y.data()[i] - acc).abs() < 1e-14);
        }
        assert!(dense(&t(&[1.0, 2.0]), &w, &b).is_err());
    }

    #[test]
    fn relu_cases() {
        assert_eq!(relu(&t(&[-1.0, 0.0, 2.0])).data(), &[0.0, 0.0, 2.0]);
        assert_eq!(relu(&t(&[-1.0, -3.0])).data(), &[0.0, 0.0]);
        let x = rand_tensor(&[10], 5);
        assert_eq!(relu(&relu(&x)), relu(&x));
    }

    #[test]
    fn layer_norm_cases() {
        let ones = t(&[1.0; 4]);
        let zeros = t(&[0.0; 4]);
        let y = layer_norm(&t(&[3.0; 4]), &ones, &zeros, 1e-5).unwrap();
        assert!(y.data().iter().all(|v| v.abs() < 1e-9));
        let y = layer_norm(&t(&[1.0, -1.0]), &t(&[1.0, 1.0]), &t(&[0.0, 0.0]), 1e-12).unwrap();
        assert!((y.data()[0] - 1.0).abs() < 1e-9 && (y.data()[1] + 1.0).abs() < 1e-9);
        let x = rand_tensor(&[8], 6);
        let y = layer_norm(&x, &t(&[1.0; 8]), &t(&[0.0; 8]), 1e-5).unwrap();
        let mean = y.data().iter().sum::<f64>() / 8.0;
        let var = y.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 8.0;
        assert!(mean.abs() < 1e-6);
        assert!((var - 1.0).abs() < 1e-4);
        assert!(layer_norm(&t(&[1.0]), &t(&[1.0]), &t(&[0.0]), 1e-5).is_err());
        assert!(layer_norm(&t(&[1.0, 2.0]), &t(&[1.0; 2]), &t(&[0.0; 2]), 0.0).is_err());
    }

    #[test]
    fn softmax_cases() {
        let y = softmax(&t(&[2.0; 4])).unwrap();
        assert!(y.data().iter().all(|v| (v - 0.25).abs() < 1e-15));
        let y = softmax(&t(&[0.0, 3f64.ln()])).unwrap();
        assert!((y.data()[0] - 0.25).abs() < 1e-12 && (y.data()[1] - 0.75).abs() < 1e-12);
        let x = rand_tensor(&[6], 7);
        let a = softmax(&x).unwrap();
        let b = softmax(&x.map(|v| v + 100.0)).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-12);
    }

    #[test]
    fn focal_cases() {
        let p = t(&[0.2, 0.5, 0.3]);
        let ce = focal_loss(&p, 1, 0.0, 1.0).unwrap();
        assert!((ce - 2f64.ln()).abs() < 1e-12);
        assert_eq!(focal_loss(&t(&[0.0, 1.0]), 1, 2.0, 0.25).unwrap(), 0.0);
        let l = focal_loss(&p, 1, 2.0, 0.25).unwrap();
        assert!((l - 0.25 * 0.25 * 2f64.ln()).abs() < 1e-12);
        assert!((l - 0.043322).abs() < 1e-6);
        assert!(focal_loss(&p, 3, 2.0, 0.25).is_err());
    }

    #[test]
    fn focal_grad_matches_difference() {
        for &(p, g) in &[(0.3f64, 2.0f64), (0.7, 0.0), (0.05, 1.5)] {
            let h = 1e-7;
            let fd = (focal_value(p + h, g, 0.25) - focal_value(p - h, g, 0.25)) / (2.0 * h);
            assert!((fd - focal_grad(p, g, 0.25)).abs() < 1e-6);
        }
    }

    #[test]
    fn dropout_cases() {
        let mut rng = stream(1, Stream::Dropout);
        let x = rand_tensor(&[16], 8);
        assert_eq!(dropout(&x, 0.0, Mode::Train, &mut rng).unwrap(), x);
        assert_eq!(dropout(&x, 0.5, Mode::Eval, &mut rng).unwrap(), x);
        assert!(dropout(&x, 1.0, Mode::Train, &mut rng).is_err());
        let ones = Tensor::<f64>::full(&[100_000], 1.0);
        let y = dropout(&ones, 0.5, Mode::Train, &mut rng).unwrap();
        let mean = y.data().iter().sum::<f64>() / 1e5;
        assert!((mean - 1.0).abs() < 0.02, "{mean}");
    }

    fn zero_cell(input: usize, hidden: usize) -> GruCell<f64> {
        GruCell {
            w_input: Tensor::zeros(&[3 * hidden, input]),
            w_hidden: Tensor::zeros(&[3 * hidden, hidden]),
            bias: Tensor::zeros(&[3 * hidden]),
        }
    }

    fn rand_cell(input: usize, hidden: usize, seed: u64) -> GruCell<f64> {
        GruCell {
            w_input: rand_tensor(&[3 * hidden, input], seed),
            w_hidden: rand_tensor(&[3 * hidden, hidden], seed + 1),
            bias: rand_tensor(&[3 * hidden], seed + 2),
        }
    }

    #[test]
    fn gru_zero_params_halve_state() {
        let h0 = t(&[0.4, -1.0, 2.0]);
        let h = gru_cell(&t(&[1.0, 2.0]), &h0, &zero_cell(2, 3)).unwrap();
        for (a, b) in h.data().iter().zip(h0.data()) {
            assert!((a - 0.5 * b).abs() < 1e-15);
        }
        let h = gru_cell(&t(&[0.0, 0.0]), &t(&[0.0; 3]), &rand_cell(2, 3, 1).with_zero_bias()).unwrap();
        assert!(h.data().iter().all(|&v| v == 0.0));
    }

    impl GruCell<f64> {
        fn with_zero_bias(mut self) -> Self {
            self.bias.fill(0.0);
            self
        }
    }

    #[test]
    fn gru_matches_scalar_oracle() {
        let (input, hidden) = (2, 3);
        let cell = rand_cell(input, hidden, 11);
        let x = t(&[0.3, -0.7]);
        let h0 = t(&[0.1, 0.5, -0.2]);
        let got = gru_cell(&x, &h0, &cell).unwrap();
        let wi = |g: usize, i: usize, j: usize| cell.w_input.data()[(g * hidden + i) * input + j];
        let wh = |g: usize, i: usize, j: usize| cell.w_hidden.data()[(g * hidden + i) * hidden + j];
        let b = |g: usize, i: usize| cell.bias.data()[g * hidden + i];
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let mut r = vec![0.0; hidden];
        let mut z = vec![0.0; hidden];
        for i in 0..hidden {
            let mut az = b(0, i);
            let mut ar = b(1, i);
            for j in 0..input {
                az += wi(0, i, j) * x.data()[j];
                ar += wi(1, i, j) * x.data()[j];
            }
            for j in 0..hidden {
                az += wh(0, i, j) * h0.data()[j];
                ar += wh(1, i, j) * h0.data()[j];
            }
            z[i] = sig(az);
            r[i] = sig(ar);
        }
        for i in 0..hidden {
            let mut a = b(2, i);
            for j in 0..input {
                a += wi(2, i, j) * x.data()[j];
            }
            for j in 0..hidden {
                a += wh(2, i, j) * r[j] * h0.data()[j];
            }
            let expect = z[i] * h0.data()[i] + (1.0 - z[i]) * a.tanh();
            assert!((got.data()[i] - expect).abs() < 1e-6);
        }
    }

    #[test]
    fn bigru_single_step_and_reversal() {
        let cell = rand_cell(2, 4, 21);
        let shared = vec![
            BiGruLayer { forward: cell.clone(), backward: cell.clone() },
        ];
        let one = Tensor::from_f64(&[1, 2], &[0.5, -0.5]).unwrap();
        let y = bigru_forward(&one, &shared).unwrap();
        assert_eq!(y.len(), 8);
        assert_eq!(&y.data()[..4], &y.data()[4..]);

        let seq = rand_tensor(&[6, 2], 30);
        let mut rev = Vec::new();
        for t in (0..6).rev() {
            rev.extend_from_slice(seq.row(t));
        }
        let rev = Tensor::from_vec(&[6, 2], rev).unwrap();
        let a = bigru_forward(&seq, &shared).unwrap();
        let b = bigru_forward(&rev, &shared).unwrap();
        assert_eq!(&a.data()[..4], &b.data()[4..]);
        assert_eq!(&a.data()[4..], &b.data()[..4]);
        assert!(bigru_forward(&Tensor::<f64>::zeros(&[0, 2]), &shared).is_err());
    }
}
