//! Differentiable (bidirectional) GRU layers built from graph primitives.

use rand::RngCore;

use crate::error::Result;
use crate::nn::graph::{Graph, Var};
use crate::nn::ops::{BiGruLayer, GruCell};
use crate::nn::param::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Parameter handles of one GRU direction (see [`GruCell`] for layout).
#[derive(Debug, Clone, Copy)]
pub struct GruParams {
    pub w_input: ParamId,
    pub w_hidden: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl GruParams {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, input: usize, hidden: usize, rng: &mut impl RngCore) -> Self {
        GruParams {
            w_input: store.add_glorot(format!("{name}.w_input"), &[3 * hidden, input], input, hidden, rng),
            w_hidden: store.add_glorot(format!("{name}.w_hidden"), &[3 * hidden, hidden], hidden, hidden, rng),
            bias: store.add_zeros(format!("{name}.bias"), &[3 * hidden]),
            input,
            hidden,
        }
    }

    /// Snapshot of the current weights as a forward-only cell.
    pub fn cell<T: Scalar>(&self, store: &ParamStore<T>) -> GruCell<T> {
        GruCell {
            w_input: store.value(self.w_input).clone(),
            w_hidden: store.value(self.w_hidden).clone(),
            bias: store.value(self.bias).clone(),
        }
    }
}

/// Input projections `x Wᵀ + b` of every time step at once: `[B, T, 3H]`.
fn project_inputs<T: Scalar>(g: &mut Graph<'_, T>, seq: Var, p: &GruParams) -> Result<Var> {
    let w = g.param(p.w_input);
    let b = g.param(p.bias);
    let proj = g.matmul_wt(seq, w)?;
    g.add_bias(proj, b)
}

/// One recurrence step given the projected input `gx` (`[B, 3H]`).
pub fn gru_step<T: Scalar>(g: &mut Graph<'_, T>, gx: Var, h: Var, u_zr: Var, u_h: Var, hidden: usize) -> Result<Var> {
    let a = g.matmul_wt(h, u_zr)?;
    let xzr = g.cols(gx, 0, 2 * hidden)?;
    let pre = g.add(xzr, a)?;
    let zr = g.sigmoid(pre);
    let z = g.cols(zr, 0, hidden)?;
    let r = g.cols(zr, hidden, hidden)?;
    let rh = g.mul(r, h)?;
    let c = g.matmul_wt(rh, u_h)?;
    let xh = g.cols(gx, 2 * hidden, hidden)?;
    let c = g.add(xh, c)?;
    let cand = g.tanh(c);
    // z ⊙ h + (1 − z) ⊙ h̃ = h̃ + z ⊙ (h − h̃)
    let diff = g.sub(h, cand)?;
    let zd = g.mul(z, diff)?;
    g.add(cand, zd)
}

/// Runs one direction over `seq` (`[B, T, in]`), returning the hidden state
/// after each time step indexed by original position.
pub fn gru_direction<T: Scalar>(g: &mut Graph<'_, T>, seq: Var, p: &GruParams, reverse: bool) -> Result<Vec<Var>> {
    let shape = g.shape(seq).to_vec();
    let (batch, steps) = (shape[0], shape[1]);
    let gx_all = project_inputs(g, seq, p)?;
    let wh = g.param(p.w_hidden);
    let u_zr = g.rows(wh, 0, 2 * p.hidden)?;
    let u_h = g.rows(wh, 2 * p.hidden, p.hidden)?;
    let mut h = g.input(Tensor::zeros(&[batch, p.hidden]));
    let mut states = vec![h; steps];
    let order: Box<dyn Iterator<Item = usize>> = if reverse { Box::new((0..steps).rev()) } else { Box::new(0..steps) };
    for t in order {
        let gx = g.time_step(gx_all, t)?;
        h = gru_step(g, gx, h, u_zr, u_h, p.hidden)?;
        states[t] = h;
    }
    Ok(states)
}

/// Bidirectional layer parameters.
#[derive(Debug, Clone, Copy)]
pub struct BiGruParams {
    pub forward: GruParams,
    pub backward: GruParams,
}

impl BiGruParams {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, input: usize, hidden: usize, rng: &mut impl RngCore) -> Self {
        BiGruParams {
            forward: GruParams::new(store, &format!("{name}.fwd"), input, hidden, rng),
            backward: GruParams::new(store, &format!("{name}.bwd"), input, hidden, rng),
        }
    }

    pub fn layer<T: Scalar>(&self, store: &ParamStore<T>) -> BiGruLayer<T> {
        BiGruLayer { forward: self.forward.cell(store), backward: self.backward.cell(store) }
    }
}

/// Stack of bidirectional layers over `[B, T, in]`; same contract as
/// [`crate::nn::ops::bigru_forward`], batched. Returns `[B, 2H]`.
pub fn bigru_stack<T: Scalar>(g: &mut Graph<'_, T>, seq: Var, layers: &[BiGruParams]) -> Result<Var> {
    let mut current = seq;
    for (li, layer) in layers.iter().enumerate() {
        let fwd = gru_direction(g, current, &layer.forward, false)?;
        let bwd = gru_direction(g, current, &layer.backward, true)?;
        if li + 1 == layers.len() {
            return g.concat(&[fwd[fwd.len() - 1], bwd[0]]);
        }
        let mut steps = Vec::with_capacity(fwd.len());
        for (f, b) in fwd.iter().zip(&bwd) {
            steps.push(g.concat(&[*f, *b])?);
        }
        current = g.stack_time(&steps)?;
    }
    Err(crate::Error::InvalidArgument("bigru_stack needs at least one layer".into()))
}
