//! Layer primitives built on the tape.

use rand::Rng;

use super::{Graph, ParamStore, Scalar, Tensor, Var};
use crate::error::Result;

/// `y = x·W (+ b)`.
pub fn linear<S: Scalar>(g: &mut Graph<S>, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
    let y = g.matmul(x, w)?;
    match b {
        Some(b) => g.add_bias(y, b),
        None => Ok(y),
    }
}

/// Linear layer whose weights live in `store` as `{prefix}weight` and,
/// when present, `{prefix}bias`.
pub fn linear_named<S: Scalar>(
    g: &mut Graph<S>,
    store: &ParamStore<S>,
    prefix: &str,
    x: Var,
) -> Result<Var> {
    let w = g.param(store, &format!("{prefix}weight"))?;
    let bias = format!("{prefix}bias");
    let b = if store.contains(&bias) {
        Some(g.param(store, &bias)?)
    } else {
        None
    };
    linear(g, x, w, b)
}

pub fn rmsnorm<S: Scalar>(g: &mut Graph<S>, x: Var, scale: Var, eps: f64) -> Result<Var> {
    g.rmsnorm(x, scale, eps)
}

/// `(silu(x·W_gate) ⊙ x·W_up) · W_down`.
pub fn gated_mlp<S: Scalar>(
    g: &mut Graph<S>,
    store: &ParamStore<S>,
    prefix: &str,
    x: Var,
) -> Result<Var> {
    let w_gate = g.param(store, &format!("{prefix}w_gate"))?;
    let w_up = g.param(store, &format!("{prefix}w_up"))?;
    let w_down = g.param(store, &format!("{prefix}w_down"))?;
    let gate = g.matmul(x, w_gate)?;
    let gate = g.silu(gate)?;
    let up = g.matmul(x, w_up)?;
    let h = g.mul(gate, up)?;
    g.matmul(h, w_down)
}

/// Uniform(±1/√fan_in) initialization, the usual default for dense layers.
pub fn init_linear<S: Scalar>(
    store: &mut ParamStore<S>,
    prefix: &str,
    d_in: usize,
    d_out: usize,
    bias: bool,
    rng: &mut impl Rng,
) -> Result<()> {
    let bound = 1.0 / (d_in as f64).sqrt();
    store.insert(
        format!("{prefix}weight"),
        Tensor::uniform(&[d_in, d_out], -bound, bound, rng),
    )?;
    if bias {
        store.insert(
            format!("{prefix}bias"),
            Tensor::uniform(&[d_out], -bound, bound, rng),
        )?;
    }
    Ok(())
}

pub fn init_gated_mlp<S: Scalar>(
    store: &mut ParamStore<S>,
    prefix: &str,
    d_model: usize,
    d_intermediate: usize,
    rng: &mut impl Rng,
) -> Result<()> {
    let b_in = 1.0 / (d_model as f64).sqrt();
    let b_out = 1.0 / (d_intermediate as f64).sqrt();
    store.insert(
        format!("{prefix}w_gate"),
        Tensor::uniform(&[d_model, d_intermediate], -b_in, b_in, rng),
    )?;
    store.insert(
        format!("{prefix}w_up"),
        Tensor::uniform(&[d_model, d_intermediate], -b_in, b_in, rng),
    )?;
    store.insert(
        format!("{prefix}w_down"),
        Tensor::uniform(&[d_intermediate, d_model], -b_out, b_out, rng),
    )
}
