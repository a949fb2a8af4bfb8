//! Selective (input-dependent) SSM layer and the residual Mamba block.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{gated_mlp, init_gated_mlp, init_linear, linear_named, Graph, ParamStore, Scalar, Tensor, Var};

pub const NORM_EPS: f64 = 1e-5;

/// Dimensions of one Mamba block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MambaBlockConfig {
    pub d_model: usize,
    pub d_intermediate: usize,
    /// SSM state size N.
    pub d_state: usize,
    /// Inner width is `expand * d_model`.
    pub expand: usize,
    /// Width of the depthwise causal convolution.
    pub d_conv: usize,
    /// Rank of the Δ projection.
    pub dt_rank: usize,
}

impl MambaBlockConfig {
    pub fn new(d_model: usize, d_intermediate: usize) -> Self {
        MambaBlockConfig {
            d_model,
            d_intermediate,
            d_state: 16,
            expand: 2,
            d_conv: 4,
            dt_rank: d_model.div_ceil(16),
        }
    }

    pub fn d_inner(&self) -> usize {
        self.expand * self.d_model
    }
}

/// Parameter view of a Mamba block stored under `prefix` in a [`ParamStore`].
///
/// Layout (`p` = prefix): `p.norm.scale`, `p.mixer.in_proj.weight`
/// (`d_model → 2·d_inner`, value and gate halves), `p.mixer.conv.{weight,bias}`,
/// `p.mixer.x_proj.weight` (`d_inner → dt_rank + 2N`), `p.mixer.dt_proj.{weight,bias}`,
/// `p.mixer.a_log`, `p.mixer.d_skip`, `p.mixer.out_proj.weight`,
/// `p.norm2.scale`, `p.mlp.{w_gate,w_up,w_down}`.
#[derive(Clone, Debug, PartialEq)]
pub struct MambaBlockParams {
    pub config: MambaBlockConfig,
    pub prefix: String,
}

impl MambaBlockParams {
    pub fn new(config: MambaBlockConfig, prefix: impl Into<String>) -> Self {
        MambaBlockParams {
            config,
            prefix: prefix.into(),
        }
    }

    fn name(&self, leaf: &str) -> String {
        format!("{}{}", self.prefix, leaf)
    }

    /// Registers freshly initialized parameters.
    pub fn init<S: Scalar>(&self, store: &mut ParamStore<S>, rng: &mut impl Rng) -> Result<()> {
        let c = self.config;
        let di = c.d_inner();
        store.insert(self.name("norm.scale"), Tensor::ones(&[c.d_model]))?;
        store.insert(self.name("norm2.scale"), Tensor::ones(&[c.d_model]))?;
        init_linear(store, &self.name("mixer.in_proj."), c.d_model, 2 * di, false, rng)?;
        let cb = 1.0 / (c.d_conv as f64).sqrt();
        store.insert(
            self.name("mixer.conv.weight"),
            Tensor::uniform(&[di, c.d_conv], -cb, cb, rng),
        )?;
        store.insert(self.name("mixer.conv.bias"), Tensor::uniform(&[di], -cb, cb, rng))?;
        init_linear(store, &self.name("mixer.x_proj."), di, c.dt_rank + 2 * c.d_state, false, rng)?;
        let rb = 1.0 / (c.dt_rank as f64).sqrt();
        store.insert(
            self.name("mixer.dt_proj.weight"),
            Tensor::uniform(&[c.dt_rank, di], -rb, rb, rng),
        )?;
        // Δ initialised log-uniform in [1e-3, 1e-1], stored as softplus⁻¹
        let dt_bias: Vec<S> = (0..di)
            .map(|_| {
                let u: f64 = rng.random();
                let dt = (u * (0.1f64.ln() - 0.001f64.ln()) + 0.001f64.ln()).exp();
                S::from_f64(dt + (-(-dt).exp_m1()).ln())
            })
            .collect();
        store.insert(self.name("mixer.dt_proj.bias"), Tensor::new(&[di], dt_bias)?)?;
        // A = −diag(1..N) per channel
        let a_log: Vec<S> = (0..di)
            .flat_map(|_| (1..=c.d_state).map(|n| S::from_f64((n as f64).ln())))
            .collect();
        store.insert(self.name("mixer.a_log"), Tensor::new(&[di, c.d_state], a_log)?)?;
        store.insert(self.name("mixer.d_skip"), Tensor::ones(&[di]))?;
        init_linear(store, &self.name("mixer.out_proj."), di, c.d_model, false, rng)?;
        init_gated_mlp(store, &self.name("mlp."), c.d_model, c.d_intermediate, rng)
    }

    /// Checks that every parameter exists with the expected shape.
    pub fn validate<S: Scalar>(&self, store: &ParamStore<S>) -> Result<()> {
        let c = self.config;
        let di = c.d_inner();
        let expect: [(&str, Vec<usize>); 14] = [
            ("norm.scale", vec![c.d_model]),
            ("norm2.scale", vec![c.d_model]),
            ("mixer.in_proj.weight", vec![c.d_model, 2 * di]),
            ("mixer.conv.weight", vec![di, c.d_conv]),
            ("mixer.conv.bias", vec![di]),
            ("mixer.x_proj.weight", vec![di, c.dt_rank + 2 * c.d_state]),
            ("mixer.dt_proj.weight", vec![c.dt_rank, di]),
            ("mixer.dt_proj.bias", vec![di]),
            ("mixer.a_log", vec![di, c.d_state]),
            ("mixer.d_skip", vec![di]),
            ("mixer.out_proj.weight", vec![di, c.d_model]),
            ("mlp.w_gate", vec![c.d_model, c.d_intermediate]),
            ("mlp.w_up", vec![c.d_model, c.d_intermediate]),
            ("mlp.w_down", vec![c.d_intermediate, c.d_model]),
        ];
        for (leaf, shape) in expect {
            let t = store.get(&self.name(leaf))?;
            if t.shape() != shape.as_slice() {
                return Err(Error::Config(format!(
                    "parameter {} has shape {:?}, expected {:?}",
                    self.name(leaf),
                    t.shape(),
                    shape
                )));
            }
        }
        Ok(())
    }
}

/// Selective scan over `u: [B, T, d_inner]` with heads read from the block:
/// `Δ_t = softplus(dt_proj(x_proj(u_t)[..dt_rank]))`, `B_t`, `C_t` from the
/// remaining `x_proj` outputs, `A = −exp(a_log)`.
pub fn selective_scan<S: Scalar>(
    g: &mut Graph<S>,
    store: &ParamStore<S>,
    block: &MambaBlockParams,
    u: Var,
) -> Result<Var> {
    let c = block.config;
    let x_dbl = linear_named(g, store, &block.name("mixer.x_proj."), u)?;
    let dt_low = g.slice_cols(x_dbl, 0, c.dt_rank)?;
    let b_t = g.slice_cols(x_dbl, c.dt_rank, c.d_state)?;
    let c_t = g.slice_cols(x_dbl, c.dt_rank + c.d_state, c.d_state)?;
    let dt = linear_named(g, store, &block.name("mixer.dt_proj."), dt_low)?;
    let delta = g.softplus(dt)?;
    let a_log = g.param(store, &block.name("mixer.a_log"))?;
    let a = g.exp(a_log)?;
    let a = g.scale(a, -1.0)?;
    g.selective_scan(u, delta, a, b_t, c_t)
}

/// Inner token mixer: in-projection → causal conv → silu → selective scan
/// (+ D skip) → silu-gated → out-projection.
pub fn mamba_mixer<S: Scalar>(
    g: &mut Graph<S>,
    store: &ParamStore<S>,
    block: &MambaBlockParams,
    x: Var,
) -> Result<Var> {
    let di = block.config.d_inner();
    let xz = linear_named(g, store, &block.name("mixer.in_proj."), x)?;
    let xs = g.slice_cols(xz, 0, di)?;
    let z = g.slice_cols(xz, di, di)?;
    let conv_w = g.param(store, &block.name("mixer.conv.weight"))?;
    let conv_b = g.param(store, &block.name("mixer.conv.bias"))?;
    let xs = g.causal_conv(xs, conv_w, conv_b)?;
    let xs = g.silu(xs)?;
    let y = selective_scan(g, store, block, xs)?;
    let d_skip = g.param(store, &block.name("mixer.d_skip"))?;
    let skip = g.mul_cols(xs, d_skip)?;
    let y = g.add(y, skip)?;
    let gate = g.silu(z)?;
    let y = g.mul(y, gate)?;
    linear_named(g, store, &block.name("mixer.out_proj."), y)
}

/// Two fused add+norm stages shared by every block type:
/// `r₁ = x + r`, `h = mixer(norm(r₁))`, `r₂ = h + r₁`, `y = mlp(norm2(r₂))`.
/// Returns `(y, r₂)`.
pub(crate) fn residual_block<S: Scalar>(
    g: &mut Graph<S>,
    store: &ParamStore<S>,
    prefix: &str,
    x: Var,
    residual: Option<Var>,
    mixer: impl FnOnce(&mut Graph<S>, Var) -> Result<Var>,
) -> Result<(Var, Var)> {
    let r1 = match residual {
        Some(r) => g.add(x, r)?,
        None => x,
    };
    let n1 = g.param(store, &format!("{prefix}norm.scale"))?;
    let h = g.rmsnorm(r1, n1, NORM_EPS)?;
    let h = mixer(g, h)?;
    let r2 = g.add(h, r1)?;
    let n2 = g.param(store, &format!("{prefix}norm2.scale"))?;
    let h2 = g.rmsnorm(r2, n2, NORM_EPS)?;
    let y = gated_mlp(g, store, &format!("{prefix}mlp."), h2)?;
    Ok((y, r2))
}

/// One Mamba block over `x: [B, T, d_model]`; returns the transformed states
/// and the updated residual stream.
pub fn mamba_block<S: Scalar>(
    g: &mut Graph<S>,
    store: &ParamStore<S>,
    block: &MambaBlockParams,
    x: Var,
    residual: Option<Var>,
) -> Result<(Var, Var)> {
    let d = block.config.d_model;
    if g.shape(x).len() != 3 || g.shape(x)[2] != d {
        return Err(Error::Config(format!(
            "mamba block expects [B, T, {d}], got {:?}",
            g.shape(x)
        )));
    }
    residual_block(g, store, &block.prefix, x, residual, |g, h| mamba_mixer(g, store, block, h))
}
