//! Causal self-attention block (drop-in replacement for the Mamba mixer) and
//! the cross-attention used for action conditioning.

use rand::Rng;

use super::mamba::residual_block;
use crate::error::{Error, Result};
use crate::numerics::{init_gated_mlp, init_linear, linear_named, Graph, ParamStore, Scalar, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionBlockConfig {
    pub d_model: usize,
    pub d_intermediate: usize,
    pub heads: usize,
}

/// Parameter view under `prefix`: `norm.scale`, `mixer.qkv.weight`
/// (`d_model → 3·d_model`), `mixer.out_proj.weight`, `norm2.scale`, `mlp.*`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionBlockParams {
    pub config: AttentionBlockConfig,
    pub prefix: String,
}

impl AttentionBlockParams {
    pub fn new(config: AttentionBlockConfig, prefix: impl Into<String>) -> Result<Self> {
        if config.heads == 0 || config.d_model % config.heads != 0 {
            return Err(Error::Config(format!(
                "{} heads do not divide d_model {}",
                config.heads, config.d_model
            )));
        }
        Ok(AttentionBlockParams {
            config,
            prefix: prefix.into(),
        })
    }

    pub fn init<S: Scalar>(&self, store: &mut ParamStore<S>, rng: &mut impl Rng) -> Result<()> {
        let c = self.config;
        let p = &self.prefix;
        store.insert(format!("{p}norm.scale"), Tensor::ones(&[c.d_model]))?;
        store.insert(format!("{p}norm2.scale"), Tensor::ones(&[c.d_model]))?;
        init_linear(store, &format!("{p}mixer.qkv."), c.d_model, 3 * c.d_model, false, rng)?;
        init_linear(store, &format!("{p}mixer.out_proj."), c.d_model, c.d_model, false, rng)?;
        init_gated_mlp(store, &format!("{p}mlp."), c.d_model, c.d_intermediate, rng)
    }
}

/// Causal multi-head self-attention with the same residual/norm wiring as
/// [`super::mamba_block`]. Returns `(y, new_residual)`.
pub fn attention_block<S: Scalar>(
    g: &mut Graph<S>,
    store: &ParamStore<S>,
    block: &AttentionBlockParams,
    x: Var,
    residual: Option<Var>,
) -> Result<(Var, Var)> {
    let c = block.config;
    if g.shape(x).len() != 3 || g.shape(x)[2] != c.d_model {
        return Err(Error::Config(format!(
            "attention block expects [B, T, {}], got {:?}",
            c.d_model,
            g.shape(x)
        )));
    }
    let p = block.prefix.clone();
    residual_block(g, store, &p, x, residual, |g, h| {
        let qkv = linear_named(g, store, &format!("{p}mixer.qkv."), h)?;
        let q = g.slice_cols(qkv, 0, c.d_model)?;
        let k = g.slice_cols(qkv, c.d_model, c.d_model)?;
        let v = g.slice_cols(qkv, 2 * c.d_model, c.d_model)?;
        let o = g.attention(q, k, v, c.heads, true)?;
        linear_named(g, store, &format!("{p}mixer.out_proj."), o)
    })
}

/// `q_src + Attn(q_src·Wq, kv_src·Wk, kv_src·Wv)·Wo`, causal.
///
/// Parameters under `prefix`: `wq.weight`, `wk.weight`, `wv.weight`, `wo.weight`.
pub fn cross_attention<S: Scalar>(
    g: &mut Graph<S>,
    store: &ParamStore<S>,
    prefix: &str,
    q_src: Var,
    kv_src: Var,
    heads: usize,
) -> Result<Var> {
    let q = linear_named(g, store, &format!("{prefix}wq."), q_src)?;
    let k = linear_named(g, store, &format!("{prefix}wk."), kv_src)?;
    let v = linear_named(g, store, &format!("{prefix}wv."), kv_src)?;
    let o = g.attention(q, k, v, heads, true)?;
    let o = linear_named(g, store, &format!("{prefix}wo."), o)?;
    g.add(q_src, o)
}

pub fn init_cross_attention<S: Scalar>(
    store: &mut ParamStore<S>,
    prefix: &str,
    d_query: usize,
    d_kv: usize,
    rng: &mut impl Rng,
) -> Result<()> {
    init_linear(store, &format!("{prefix}wq."), d_query, d_query, false, rng)?;
    init_linear(store, &format!("{prefix}wk."), d_kv, d_query, false, rng)?;
    init_linear(store, &format!("{prefix}wv."), d_kv, d_query, false, rng)?;
    init_linear(store, &format!("{prefix}wo."), d_query, d_query, false, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_token_returns_value_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut g = Graph::<f64>::inference();
        let q = g.constant(Tensor::randn(&[1, 1, 4], 1.0, &mut rng)).unwrap();
        let k = g.constant(Tensor::randn(&[1, 1, 4], 1.0, &mut rng)).unwrap();
        let vt = Tensor::randn(&[1, 1, 4], 1.0, &mut rng);
        let v = g.constant(vt.clone()).unwrap();
        let o = g.attention(q, k, v, 2, true).unwrap();
        assert!(g.value(o).max_abs_diff(&vt) < 1e-15);
    }

    #[test]
    fn uniform_scores_give_running_mean() {
        let mut g = Graph::<f64>::inference();
        let q = g.constant(Tensor::zeros(&[1, 4, 2])).unwrap();
        let k = g.constant(Tensor::zeros(&[1, 4, 2])).unwrap();
        let vals = vec![1.0, 0.0, 3.0, 2.0, 5.0, 4.0, 7.0, 6.0];
        let v = g.constant(Tensor::new(&[1, 4, 2], vals).unwrap()).unwrap();
        let o = g.attention(q, k, v, 1, true).unwrap();
        let want = [1.0, 0.0, 2.0, 1.0, 3.0, 2.0, 4.0, 3.0];
        for (x, y) in g.value(o).data().iter().zip(want) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn block_is_causal() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let blk = AttentionBlockParams::new(
            AttentionBlockConfig {
                d_model: 8,
                d_intermediate: 16,
                heads: 2,
            },
            "att.",
        )
        .unwrap();
        let mut store = ParamStore::<f32>::new();
        blk.init(&mut store, &mut rng).unwrap();
        let xt = Tensor::<f32>::randn(&[2, 12, 8], 1.0, &mut rng);
        let run = |x: Tensor<f32>| {
            let mut g = Graph::inference();
            let x = g.constant(x).unwrap();
            let (y, _) = attention_block(&mut g, &store, &blk, x, None).unwrap();
            g.value(y).clone()
        };
        let base = run(xt.clone());
        let mut moved = xt;
        moved.data_mut()[5 * 8 + 3] += 2.0;
        let after = run(moved);
        assert_eq!(&base.data()[..5 * 8], &after.data()[..5 * 8]);
        assert_ne!(&base.data()[5 * 8..12 * 8], &after.data()[5 * 8..12 * 8]);
    }

    #[test]
    fn heads_must_divide_width() {
        let r = AttentionBlockParams::new(
            AttentionBlockConfig {
                d_model: 10,
                d_intermediate: 4,
                heads: 3,
            },
            "",
        );
        assert!(r.is_err());
    }
}
