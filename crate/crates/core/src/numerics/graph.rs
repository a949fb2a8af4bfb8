//! Reverse-mode differentiation over a per-pass tape.
//!
//! A [`Graph`] owns every intermediate value of one forward pass. Parameters
//! enter the tape by name (copied out of a [`ParamStore`]) and gradients come
//! back keyed by the same names, so a store is never mutated while a pass is
//! in flight. Sequence kernels (causal conv, selective scan, attention) are
//! fused ops with hand-written backward passes.

use std::collections::{BTreeMap, HashMap};

use super::{ParamStore, Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<S> {
    Leaf,
    MatMul { x: Var, w: Var },
    AddBias { x: Var, b: Var },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    MulCols { x: Var, v: Var },
    Scale { x: Var, c: S },
    Silu { x: Var },
    Sigmoid { x: Var },
    Softplus { x: Var },
    Exp { x: Var },
    Square { x: Var },
    Sum { x: Var },
    Mean { x: Var },
    RmsNorm { x: Var, scale: Var, rstd: Vec<S> },
    ConcatCols { parts: Vec<Var> },
    SliceCols { x: Var, start: usize },
    BroadcastTime { x: Var },
    ScaleTime { x: Var, gains: Vec<S> },
    CausalConv { x: Var, w: Var, b: Var },
    SelectiveScan(Box<ScanSaved<S>>),
    Attention(Box<AttnSaved<S>>),
    Mse { pred: Var, target: Vec<S> },
    Kl { mu: Var, logvar: Var },
    ReactionLoss(Box<ReactSaved<S>>),
}

struct ScanSaved<S> {
    u: Var,
    delta: Var,
    a: Var,
    bm: Var,
    cm: Var,
    /// Hidden state after every step, `[batch, T, D, N]`.
    states: Vec<S>,
    /// `exp(Δ_t A)` for every step, same layout as `states`.
    decays: Vec<S>,
}

struct AttnSaved<S> {
    q: Var,
    k: Var,
    v: Var,
    heads: usize,
    causal: bool,
    /// Softmax probabilities, `[batch, heads, Tq, Tk]`.
    probs: Vec<S>,
}

struct ReactSaved<S> {
    pred: Var,
    actor: Vec<S>,
    /// Per frame: (contact weight, ‖a − r‖).
    frame_terms: Vec<(S, S)>,
    frames: usize,
}

struct Node<S: Scalar> {
    value: Tensor<S>,
    op: Op<S>,
    needs_grad: bool,
}

/// Tape of one forward pass.
pub struct Graph<S: Scalar = f32> {
    nodes: Vec<Node<S>>,
    params: HashMap<String, Var>,
    grad_enabled: bool,
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

fn ensure_finite<S: Scalar>(t: &Tensor<S>, op: &str) -> Result<()> {
    t.check_finite(op)
}

fn same_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    if a != b {
        return Err(Error::shape(op, a, b));
    }
    Ok(())
}

fn seq_dims(op: &'static str, shape: &[usize]) -> Result<(usize, usize, usize)> {
    match shape {
        [b, t, d] => Ok((*b, *t, *d)),
        _ => Err(Error::shape(op, shape, &[0, 0, 0])),
    }
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            params: HashMap::new(),
            grad_enabled: true,
        }
    }

    /// A tape that records no backward state (inference).
    pub fn inference() -> Self {
        Graph {
            grad_enabled: false,
            ..Self::new()
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn req(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, parents: &[Var], name: &str) -> Result<Var> {
        ensure_finite(&value, name)?;
        let needs_grad = self.grad_enabled && parents.iter().any(|&p| self.req(p));
        let op = if needs_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, t: Tensor<S>) -> Result<Var> {
        ensure_finite(&t, "constant")?;
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            needs_grad: false,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Differentiable input (gradient retrievable with [`Gradients::of`]).
    pub fn input(&mut self, t: Tensor<S>) -> Result<Var> {
        ensure_finite(&t, "input")?;
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            needs_grad: self.grad_enabled,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Brings a named parameter onto the tape (once per graph).
    pub fn param(&mut self, store: &ParamStore<S>, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let t = store.get(name)?;
        let mut value = Tensor::from_parts(t.shape().to_vec(), t.data().to_vec());
        value.requires_grad = true;
        let v = self.input(value)?;
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    // ---------------------------------------------------------------- ops

    /// `x[*, k] · w[k, n] -> [*, n]`.
    pub fn matmul(&mut self, x: Var, w: Var) -> Result<Var> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if ws.len() != 2 || xs.is_empty() || *xs.last().unwrap() != ws[0] {
            return Err(Error::shape("linear", &xs, &ws));
        }
        let (k, n) = (ws[0], ws[1]);
        let m = self.value(x).len() / k.max(1);
        let mut out = vec![S::ZERO; m * n];
        S::gemm(
            m,
            k,
            n,
            S::ONE,
            self.value(x).data(),
            k as isize,
            1,
            self.value(w).data(),
            n as isize,
            1,
            S::ZERO,
            &mut out,
            n as isize,
            1,
        );
        let mut shape = xs;
        *shape.last_mut().unwrap() = n;
        self.push(Tensor::from_parts(shape, out), Op::MatMul { x, w }, &[x, w], "linear")
    }

    /// Adds `b[n]` to every row of `x[*, n]`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let n = self.value(x).cols();
        if self.shape(b) != [n] {
            return Err(Error::shape("add_bias", self.shape(x), self.shape(b)));
        }
        let bv = self.value(b).data().to_vec();
        let mut out = self.value(x).clone();
        out.requires_grad = false;
        for row in out.data_mut().chunks_mut(n) {
            row.iter_mut().zip(&bv).for_each(|(o, &bb)| *o += bb);
        }
        self.push(out, Op::AddBias { x, b }, &[x, b], "add_bias")
    }

    fn zip_op(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(S, S) -> S) -> Result<Tensor<S>> {
        same_shape(name, self.shape(a), self.shape(b))?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Ok(Tensor::from_parts(self.shape(a).to_vec(), data))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_op(a, b, "add", |x, y| x + y)?;
        self.push(v, Op::Add { a, b }, &[a, b], "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_op(a, b, "sub", |x, y| x - y)?;
        self.push(v, Op::Sub { a, b }, &[a, b], "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_op(a, b, "mul", |x, y| x * y)?;
        self.push(v, Op::Mul { a, b }, &[a, b], "mul")
    }

    /// Multiplies column `j` of `x[*, n]` by `v[j]`.
    pub fn mul_cols(&mut self, x: Var, v: Var) -> Result<Var> {
        let n = self.value(x).cols();
        if self.shape(v) != [n] {
            return Err(Error::shape("mul_cols", self.shape(x), self.shape(v)));
        }
        let vv = self.value(v).data().to_vec();
        let data = self
            .value(x)
            .data()
            .chunks(n)
            .flat_map(|row| row.iter().zip(&vv).map(|(&a, &b)| a * b).collect::<Vec<_>>())
            .collect();
        let out = Tensor::from_parts(self.shape(x).to_vec(), data);
        self.push(out, Op::MulCols { x, v }, &[x, v], "mul_cols")
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let c = S::from_f64(c);
        let out = self.value(x).map(|a| a * c);
        self.push(out, Op::Scale { x, c }, &[x], "scale")
    }

    pub fn silu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|a| a * a.sigmoid());
        self.push(out, Op::Silu { x }, &[x], "silu")
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(Scalar::sigmoid);
        self.push(out, Op::Sigmoid { x }, &[x], "sigmoid")
    }

    pub fn softplus(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(Scalar::softplus);
        self.push(out, Op::Softplus { x }, &[x], "softplus")
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(Scalar::exp);
        self.push(out, Op::Exp { x }, &[x], "exp")
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|a| a * a);
        self.push(out, Op::Square { x }, &[x], "square")
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().fold(S::ZERO, |acc, &a| acc + a);
        self.push(Tensor::scalar(s), Op::Sum { x }, &[x], "sum")
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len();
        let s = self.value(x).data().iter().fold(S::ZERO, |acc, &a| acc + a);
        self.push(
            Tensor::scalar(s / S::from_f64(n as f64)),
            Op::Mean { x },
            &[x],
            "mean",
        )
    }

    /// Row-wise `scale ⊙ x / sqrt(mean(x²) + eps)`.
    pub fn rmsnorm(&mut self, x: Var, scale: Var, eps: f64) -> Result<Var> {
        let d = self.value(x).cols();
        if self.shape(scale) != [d] {
            return Err(Error::shape("rmsnorm", self.shape(x), self.shape(scale)));
        }
        let eps = S::from_f64(eps);
        let sc = self.value(scale).data().to_vec();
        let xv = self.value(x);
        let mut out = Vec::with_capacity(xv.len());
        let mut rstd = Vec::with_capacity(xv.rows());
        for row in xv.data().chunks(d) {
            let ms = row.iter().fold(S::ZERO, |acc, &a| acc + a * a) / S::from_f64(d as f64);
            let denom = (ms + eps).sqrt();
            // zero row with eps = 0: output is zero, not NaN
            let r = if denom > S::ZERO { S::ONE / denom } else { S::ZERO };
            rstd.push(r);
            out.extend(row.iter().zip(&sc).map(|(&a, &g)| g * a * r));
        }
        let out = Tensor::from_parts(xv.shape().to_vec(), out);
        self.push(out, Op::RmsNorm { x, scale, rstd }, &[x, scale], "rmsnorm")
    }

    /// Concatenates along the last dimension; leading dims must agree.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = self.shape(parts[0]).to_vec();
        let lead = &first[..first.len() - 1];
        for &p in &parts[1..] {
            let s = self.shape(p);
            if &s[..s.len() - 1] != lead {
                return Err(Error::shape("concat", &first, s));
            }
        }
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).cols()).collect();
        let total: usize = widths.iter().sum();
        let rows = self.value(parts[0]).rows();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = first.clone();
        *shape.last_mut().unwrap() = total;
        let out = Tensor::from_parts(shape, out);
        self.push(out, Op::ConcatCols { parts: parts.to_vec() }, parts, "concat")
    }

    /// Columns `start..start + len` of the last dimension.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let n = self.value(x).cols();
        if start + len > n {
            return Err(Error::shape("slice_cols", self.shape(x), &[start, len]));
        }
        let data = self
            .value(x)
            .data()
            .chunks(n)
            .flat_map(|row| row[start..start + len].to_vec())
            .collect();
        let mut shape = self.shape(x).to_vec();
        *shape.last_mut().unwrap() = len;
        let out = Tensor::from_parts(shape, data);
        self.push(out, Op::SliceCols { x, start }, &[x], "slice_cols")
    }

    /// `[B, d] -> [B, T, d]` by repeating each row `t` times.
    pub fn broadcast_time(&mut self, x: Var, t: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 {
            return Err(Error::shape("broadcast_time", &s, &[0, 0]));
        }
        let (b, d) = (s[0], s[1]);
        let mut out = Vec::with_capacity(b * t * d);
        for row in self.value(x).data().chunks(d) {
            for _ in 0..t {
                out.extend_from_slice(row);
            }
        }
        let out = Tensor::from_parts(vec![b, t, d], out);
        self.push(out, Op::BroadcastTime { x }, &[x], "broadcast_time")
    }

    /// Multiplies frame `t` of `x[B, T, d]` by the constant `gains[t]`.
    pub fn scale_time(&mut self, x: Var, gains: &[f64]) -> Result<Var> {
        let (b, t, d) = seq_dims("scale_time", self.shape(x))?;
        if gains.len() != t {
            return Err(Error::shape("scale_time", self.shape(x), &[gains.len()]));
        }
        let gains: Vec<S> = gains.iter().map(|&g| S::from_f64(g)).collect();
        let mut out = self.value(x).data().to_vec();
        for bi in 0..b {
            for (ti, &g) in gains.iter().enumerate() {
                let o = (bi * t + ti) * d;
                out[o..o + d].iter_mut().for_each(|v| *v *= g);
            }
        }
        let out = Tensor::from_parts(vec![b, t, d], out);
        self.push(out, Op::ScaleTime { x, gains }, &[x], "scale_time")
    }

    /// Depthwise causal convolution: `y[t, c] = b[c] + Σ_j w[c, j] · x[t − (K−1) + j, c]`,
    /// with zero padding before the first frame.
    pub fn causal_conv(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (bs, t, c) = seq_dims("causal_conv", self.shape(x))?;
        let ws = self.shape(w).to_vec();
        if ws.len() != 2 || ws[0] != c || self.shape(b) != [c] {
            return Err(Error::shape("causal_conv", self.shape(x), &ws));
        }
        let k = ws[1];
        let (xv, wv, bv) = (self.value(x).data(), self.value(w).data(), self.value(b).data());
        let mut out = vec![S::ZERO; bs * t * c];
        for bi in 0..bs {
            for ti in 0..t {
                let o = (bi * t + ti) * c;
                out[o..o + c].copy_from_slice(bv);
                for j in 0..k {
                    let lag = k - 1 - j;
                    if ti < lag {
                        continue;
                    }
                    let src = (bi * t + ti - lag) * c;
                    for ci in 0..c {
                        out[o + ci] += wv[ci * k + j] * xv[src + ci];
                    }
                }
            }
        }
        let out = Tensor::from_parts(vec![bs, t, c], out);
        self.push(out, Op::CausalConv { x, w, b }, &[x, w, b], "causal_conv")
    }

    /// Diagonal selective scan.
    ///
    /// `u, delta: [B, T, D]`, `a: [D, N]`, `bm, cm: [B, T, N]`;
    /// `h_t = exp(Δ_t A) ⊙ h_{t−1} + Δ_t B_t u_t`, `y_t = C_t · h_t`, `h_0 = 0`.
    pub fn selective_scan(&mut self, u: Var, delta: Var, a: Var, bm: Var, cm: Var) -> Result<Var> {
        let (bs, t, d) = seq_dims("selective_scan", self.shape(u))?;
        same_shape("selective_scan", self.shape(u), self.shape(delta))?;
        let n = match self.shape(a) {
            [ad, n] if *ad == d => *n,
            s => return Err(Error::shape("selective_scan", &[d, 0], s)),
        };
        for v in [bm, cm] {
            same_shape("selective_scan", &[bs, t, n], self.shape(v))?;
        }
        let keep = self.grad_enabled && [u, delta, a, bm, cm].iter().any(|&v| self.req(v));
        let (uv, dv, av) = (self.value(u).data(), self.value(delta).data(), self.value(a).data());
        let (bv, cv) = (self.value(bm).data(), self.value(cm).data());
        let mut out = vec![S::ZERO; bs * t * d];
        let mut states = if keep { vec![S::ZERO; bs * t * d * n] } else { Vec::new() };
        let mut decays = if keep { vec![S::ZERO; bs * t * d * n] } else { Vec::new() };
        let mut h = vec![S::ZERO; d * n];
        for bi in 0..bs {
            h.iter_mut().for_each(|x| *x = S::ZERO);
            for ti in 0..t {
                let row = bi * t + ti;
                let (bt, ct) = (&bv[row * n..(row + 1) * n], &cv[row * n..(row + 1) * n]);
                for di in 0..d {
                    let dt = dv[row * d + di];
                    let du = dt * uv[row * d + di];
                    let hs = &mut h[di * n..(di + 1) * n];
                    let ar = &av[di * n..(di + 1) * n];
                    let mut y = S::ZERO;
                    for ni in 0..n {
                        let decay = (dt * ar[ni]).exp();
                        if keep {
                            decays[(row * d + di) * n + ni] = decay;
                        }
                        let hn = decay * hs[ni] + du * bt[ni];
                        hs[ni] = hn;
                        y += ct[ni] * hn;
                    }
                    out[row * d + di] = y;
                }
                if !y_finite(&out[row * d..(row + 1) * d]) {
                    return Err(Error::Numeric(format!(
                        "non-finite scan state at batch {bi}, timestep {ti}"
                    )));
                }
                if keep {
                    states[row * d * n..(row + 1) * d * n].copy_from_slice(&h);
                }
            }
        }
        let out = Tensor::from_parts(vec![bs, t, d], out);
        let saved = ScanSaved {
            u,
            delta,
            a,
            bm,
            cm,
            states,
            decays,
        };
        self.push(
            out,
            Op::SelectiveScan(Box::new(saved)),
            &[u, delta, a, bm, cm],
            "selective_scan",
        )
    }

    /// Multi-head scaled dot-product attention.
    ///
    /// `q: [B, Tq, D]`, `k, v: [B, Tk, D]`, heads split `D` evenly. With
    /// `causal`, query `i` only sees keys `0..=i`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, causal: bool) -> Result<Var> {
        let (bs, tq, d) = seq_dims("attention", self.shape(q))?;
        let (bk, tk, dk) = seq_dims("attention", self.shape(k))?;
        same_shape("attention", self.shape(k), self.shape(v))?;
        if bk != bs || dk != d || heads == 0 || d % heads != 0 {
            return Err(Error::shape("attention", self.shape(q), self.shape(k)));
        }
        let dh = d / heads;
        let keep = self.grad_enabled && [q, k, v].iter().any(|&x| self.req(x));
        let scale = S::from_f64(1.0 / (dh as f64).sqrt());
        let (qv, kv, vv) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut out = vec![S::ZERO; bs * tq * d];
        let mut probs = if keep { vec![S::ZERO; bs * heads * tq * tk] } else { Vec::new() };
        let mut p = vec![S::ZERO; tq * tk];
        for bi in 0..bs {
            for hi in 0..heads {
                let qo = bi * tq * d + hi * dh;
                let ko = bi * tk * d + hi * dh;
                // scores = q_h k_hᵀ
                S::gemm(
                    tq, dh, tk, scale, &qv[qo..], d as isize, 1, &kv[ko..], 1, d as isize,
                    S::ZERO, &mut p, tk as isize, 1,
                );
                for i in 0..tq {
                    let row = &mut p[i * tk..(i + 1) * tk];
                    let lim = if causal { (i + 1).min(tk) } else { tk };
                    let m = row[..lim].iter().fold(row[0], |a, &b| a.max(b));
                    let mut z = S::ZERO;
                    for x in row[..lim].iter_mut() {
                        *x = (*x - m).exp();
                        z += *x;
                    }
                    let inv = S::ONE / z;
                    row[..lim].iter_mut().for_each(|x| *x *= inv);
                    row[lim..].iter_mut().for_each(|x| *x = S::ZERO);
                }
                S::gemm(
                    tq, tk, dh, S::ONE, &p, tk as isize, 1, &vv[ko..], d as isize, 1, S::ZERO,
                    &mut out[qo..], d as isize, 1,
                );
                if keep {
                    let po = (bi * heads + hi) * tq * tk;
                    probs[po..po + tq * tk].copy_from_slice(&p);
                }
            }
        }
        let out = Tensor::from_parts(vec![bs, tq, d], out);
        let saved = AttnSaved {
            q,
            k,
            v,
            heads,
            causal,
            probs,
        };
        self.push(out, Op::Attention(Box::new(saved)), &[q, k, v], "attention")
    }

    /// Mean squared error against a constant target.
    pub fn mse(&mut self, pred: Var, target: &Tensor<S>) -> Result<Var> {
        same_shape("mse", self.shape(pred), target.shape())?;
        let n = target.len();
        let s = self
            .value(pred)
            .data()
            .iter()
            .zip(target.data())
            .fold(S::ZERO, |acc, (&p, &t)| acc + (p - t) * (p - t));
        let out = Tensor::scalar(s / S::from_f64(n as f64));
        let target = target.data().to_vec();
        self.push(out, Op::Mse { pred, target }, &[pred], "mse")
    }

    /// Mean over elements of `½(μ² + e^{logvar} − 1 − logvar)`.
    pub fn kl_standard_normal(&mut self, mu: Var, logvar: Var) -> Result<Var> {
        same_shape("kl", self.shape(mu), self.shape(logvar))?;
        let n = self.value(mu).len();
        let half = S::from_f64(0.5);
        let s = self
            .value(mu)
            .data()
            .iter()
            .zip(self.value(logvar).data())
            .fold(S::ZERO, |acc, (&m, &lv)| acc + half * (m * m + lv.exp() - S::ONE - lv));
        let out = Tensor::scalar(s / S::from_f64(n as f64));
        self.push(out, Op::Kl { mu, logvar }, &[mu, logvar], "kl")
    }

    /// Contact-weighted reaction loss, averaged over every frame of every
    /// sequence. `pred`, `gt`, `actor` are `[*, d]` with one pose per row;
    /// norms are taken over the whole pose.
    pub fn reaction_loss(&mut self, pred: Var, gt: &Tensor<S>, actor: &Tensor<S>) -> Result<Var> {
        same_shape("reaction_loss", self.shape(pred), gt.shape())?;
        same_shape("reaction_loss", gt.shape(), actor.shape())?;
        let d = gt.cols();
        let frames = gt.rows();
        let pv = self.value(pred).data();
        let mut frame_terms = Vec::with_capacity(frames);
        let mut total = S::ZERO;
        for f in 0..frames {
            let r = f * d..(f + 1) * d;
            let (a, g, p) = (&actor.data()[r.clone()], &gt.data()[r.clone()], &pv[r]);
            let dist_gt = norm_diff(a, g);
            let dist_pred = norm_diff(a, p);
            let w = (-dist_gt).exp();
            let gap = dist_pred - dist_gt;
            total += w * gap * gap;
            frame_terms.push((w, dist_gt));
        }
        let out = Tensor::scalar(total / S::from_f64(frames as f64));
        let saved = ReactSaved {
            pred,
            actor: actor.data().to_vec(),
            frame_terms,
            frames,
        };
        self.push(out, Op::ReactionLoss(Box::new(saved)), &[pred], "reaction_loss")
    }

    // ----------------------------------------------------------- backward

    /// Reverse pass from a scalar output.
    pub fn backward(&self, loss: Var) -> Result<Gradients<S>> {
        if self.value(loss).len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![S::ONE]);
        for id in (0..=loss.0).rev() {
            let Some(gy) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.needs_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                grads[id] = Some(gy);
                continue;
            }
            self.backprop(id, &gy, &mut grads);
            // intermediate grads are not kept
        }
        let mut by_name = BTreeMap::new();
        for (name, &v) in &self.params {
            if let Some(g) = grads[v.0].take() {
                by_name.insert(name.clone(), g);
            }
        }
        let inputs = grads
            .into_iter()
            .enumerate()
            .filter_map(|(i, g)| g.map(|g| (i, g)))
            .collect();
        Ok(Gradients { by_name, inputs })
    }

    fn backprop(&self, id: usize, gy: &[S], grads: &mut [Option<Vec<S>>]) {
        let node = &self.nodes[id];
        let out = &node.value;
        macro_rules! acc {
            ($v:expr, $g:expr) => {
                if self.req($v) {
                    accumulate(grads, $v, $g, self.value($v).len());
                }
            };
        }
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { x, w } => {
                let (k, n) = (self.shape(*w)[0], self.shape(*w)[1]);
                let m = self.value(*x).len() / k.max(1);
                if self.req(*x) {
                    let mut gx = vec![S::ZERO; m * k];
                    S::gemm(
                        m, n, k, S::ONE, gy, n as isize, 1, self.value(*w).data(), 1, n as isize,
                        S::ZERO, &mut gx, k as isize, 1,
                    );
                    acc!(*x, &gx);
                }
                if self.req(*w) {
                    let mut gw = vec![S::ZERO; k * n];
                    S::gemm(
                        k, m, n, S::ONE, self.value(*x).data(), 1, k as isize, gy, n as isize, 1,
                        S::ZERO, &mut gw, n as isize, 1,
                    );
                    acc!(*w, &gw);
                }
            }
            Op::AddBias { x, b } => {
                acc!(*x, gy);
                if self.req(*b) {
                    let n = self.value(*b).len();
                    let mut gb = vec![S::ZERO; n];
                    for row in gy.chunks(n) {
                        gb.iter_mut().zip(row).for_each(|(a, &g)| *a += g);
                    }
                    acc!(*b, &gb);
                }
            }
            Op::Add { a, b } => {
                acc!(*a, gy);
                acc!(*b, gy);
            }
            Op::Sub { a, b } => {
                acc!(*a, gy);
                if self.req(*b) {
                    let g: Vec<S> = gy.iter().map(|&g| -g).collect();
                    acc!(*b, &g);
                }
            }
            Op::Mul { a, b } => {
                if self.req(*a) {
                    let g: Vec<S> = gy.iter().zip(self.value(*b).data()).map(|(&g, &y)| g * y).collect();
                    acc!(*a, &g);
                }
                if self.req(*b) {
                    let g: Vec<S> = gy.iter().zip(self.value(*a).data()).map(|(&g, &x)| g * x).collect();
                    acc!(*b, &g);
                }
            }
            Op::MulCols { x, v } => {
                let n = self.value(*v).len();
                let vv = self.value(*v).data();
                if self.req(*x) {
                    let g: Vec<S> = gy
                        .chunks(n)
                        .flat_map(|row| row.iter().zip(vv).map(|(&g, &c)| g * c).collect::<Vec<_>>())
                        .collect();
                    acc!(*x, &g);
                }
                if self.req(*v) {
                    let mut gv = vec![S::ZERO; n];
                    for (row, xr) in gy.chunks(n).zip(self.value(*x).data().chunks(n)) {
                        for j in 0..n {
                            gv[j] += row[j] * xr[j];
                        }
                    }
                    acc!(*v, &gv);
                }
            }
            Op::Scale { x, c } => {
                let g: Vec<S> = gy.iter().map(|&g| g * *c).collect();
                acc!(*x, &g);
            }
            Op::Silu { x } => {
                let g: Vec<S> = gy
                    .iter()
                    .zip(self.value(*x).data())
                    .map(|(&g, &a)| {
                        let s = a.sigmoid();
                        g * (s + a * s * (S::ONE - s))
                    })
                    .collect();
                acc!(*x, &g);
            }
            Op::Sigmoid { x } => {
                let g: Vec<S> = gy.iter().zip(out.data()).map(|(&g, &s)| g * s * (S::ONE - s)).collect();
                acc!(*x, &g);
            }
            Op::Softplus { x } => {
                let g: Vec<S> = gy
                    .iter()
                    .zip(self.value(*x).data())
                    .map(|(&g, &a)| g * a.sigmoid())
                    .collect();
                acc!(*x, &g);
            }
            Op::Exp { x } => {
                let g: Vec<S> = gy.iter().zip(out.data()).map(|(&g, &e)| g * e).collect();
                acc!(*x, &g);
            }
            Op::Square { x } => {
                let two = S::from_f64(2.0);
                let g: Vec<S> = gy.iter().zip(self.value(*x).data()).map(|(&g, &a)| two * g * a).collect();
                acc!(*x, &g);
            }
            Op::Sum { x } => {
                let g = vec![gy[0]; self.value(*x).len()];
                acc!(*x, &g);
            }
            Op::Mean { x } => {
                let n = self.value(*x).len();
                let g = vec![gy[0] / S::from_f64(n as f64); n];
                acc!(*x, &g);
            }
            Op::RmsNorm { x, scale, rstd } => {
                let d = self.value(*scale).len();
                let sc = self.value(*scale).data();
                let xv = self.value(*x).data();
                let inv_d = S::from_f64(1.0 / d as f64);
                let mut gx = vec![S::ZERO; xv.len()];
                let mut gs = vec![S::ZERO; d];
                for (r, (&rs, (xr, gr))) in rstd.iter().zip(xv.chunks(d).zip(gy.chunks(d))).enumerate() {
                    // y = g ⊙ x ⋅ r, r = (mean x² + eps)^{-1/2}
                    let mut dot = S::ZERO;
                    for j in 0..d {
                        gs[j] += gr[j] * xr[j] * rs;
                        dot += gr[j] * sc[j] * xr[j];
                    }
                    let coef = dot * rs * rs * rs * inv_d;
                    for j in 0..d {
                        gx[r * d + j] = gr[j] * sc[j] * rs - coef * xr[j];
                    }
                }
                acc!(*x, &gx);
                acc!(*scale, &gs);
            }
            Op::ConcatCols { parts } => {
                let total = out.cols();
                let mut off = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if self.req(p) {
                        let g: Vec<S> = gy.chunks(total).flat_map(|row| row[off..off + w].to_vec()).collect();
                        acc!(p, &g);
                    }
                    off += w;
                }
            }
            Op::SliceCols { x, start } => {
                let n = self.value(*x).cols();
                let w = out.cols();
                let mut g = vec![S::ZERO; self.value(*x).len()];
                for (row, gr) in g.chunks_mut(n).zip(gy.chunks(w)) {
                    row[*start..*start + w].copy_from_slice(gr);
                }
                acc!(*x, &g);
            }
            Op::BroadcastTime { x } => {
                let (b, d) = (self.shape(*x)[0], self.shape(*x)[1]);
                let t = out.shape()[1];
                let mut g = vec![S::ZERO; b * d];
                for bi in 0..b {
                    for ti in 0..t {
                        let o = (bi * t + ti) * d;
                        for j in 0..d {
                            g[bi * d + j] += gy[o + j];
                        }
                    }
                }
                acc!(*x, &g);
            }
            Op::ScaleTime { x, gains } => {
                let (_, t, d) = (out.shape()[0], out.shape()[1], out.shape()[2]);
                let g: Vec<S> = gy
                    .chunks(d)
                    .enumerate()
                    .flat_map(|(r, row)| {
                        let s = gains[r % t];
                        row.iter().map(move |&v| v * s)
                    })
                    .collect();
                acc!(*x, &g);
            }
            Op::CausalConv { x, w, b } => {
                let (bs, t, c) = (out.shape()[0], out.shape()[1], out.shape()[2]);
                let k = self.shape(*w)[1];
                let (xv, wv) = (self.value(*x).data(), self.value(*w).data());
                let mut gx = vec![S::ZERO; xv.len()];
                let mut gw = vec![S::ZERO; wv.len()];
                let mut gb = vec![S::ZERO; c];
                for bi in 0..bs {
                    for ti in 0..t {
                        let o = (bi * t + ti) * c;
                        for ci in 0..c {
                            gb[ci] += gy[o + ci];
                        }
                        for j in 0..k {
                            let lag = k - 1 - j;
                            if ti < lag {
                                continue;
                            }
                            let src = (bi * t + ti - lag) * c;
                            for ci in 0..c {
                                gw[ci * k + j] += gy[o + ci] * xv[src + ci];
                                gx[src + ci] += gy[o + ci] * wv[ci * k + j];
                            }
                        }
                    }
                }
                acc!(*x, &gx);
                acc!(*w, &gw);
                acc!(*b, &gb);
            }
            Op::SelectiveScan(s) => self.backprop_scan(s, out, gy, grads),
            Op::Attention(s) => self.backprop_attention(s, out, gy, grads),
            Op::Mse { pred, target } => {
                let n = target.len();
                let c = S::from_f64(2.0 / n as f64) * gy[0];
                let g: Vec<S> = self
                    .value(*pred)
                    .data()
                    .iter()
                    .zip(target)
                    .map(|(&p, &t)| c * (p - t))
                    .collect();
                acc!(*pred, &g);
            }
            Op::Kl { mu, logvar } => {
                let n = self.value(*mu).len();
                let c = gy[0] / S::from_f64(n as f64);
                let half = S::from_f64(0.5);
                if self.req(*mu) {
                    let g: Vec<S> = self.value(*mu).data().iter().map(|&m| c * m).collect();
                    acc!(*mu, &g);
                }
                if self.req(*logvar) {
                    let g: Vec<S> = self
                        .value(*logvar)
                        .data()
                        .iter()
                        .map(|&lv| c * half * (lv.exp() - S::ONE))
                        .collect();
                    acc!(*logvar, &g);
                }
            }
            Op::ReactionLoss(s) => {
                let pv = self.value(s.pred).data();
                let d = pv.len() / s.frames;
                let c = S::from_f64(2.0 / s.frames as f64) * gy[0];
                let mut g = vec![S::ZERO; pv.len()];
                for (f, &(w, dist_gt)) in s.frame_terms.iter().enumerate() {
                    let r = f * d..(f + 1) * d;
                    let (a, p) = (&s.actor[r.clone()], &pv[r]);
                    let dist = norm_diff(a, p);
                    if dist == S::ZERO {
                        // subgradient 0 at the kink
                        continue;
                    }
                    let k = c * w * (dist - dist_gt) / dist;
                    for j in 0..d {
                        g[f * d + j] = k * (p[j] - a[j]);
                    }
                }
                acc!(s.pred, &g);
            }
        }
    }

    fn backprop_scan(&self, s: &ScanSaved<S>, out: &Tensor<S>, gy: &[S], grads: &mut [Option<Vec<S>>]) {
        let (bs, t, d) = (out.shape()[0], out.shape()[1], out.shape()[2]);
        let n = self.shape(s.a)[1];
        let (uv, dv, av) = (self.value(s.u).data(), self.value(s.delta).data(), self.value(s.a).data());
        let (bv, cv) = (self.value(s.bm).data(), self.value(s.cm).data());
        let mut gu = vec![S::ZERO; uv.len()];
        let mut gd = vec![S::ZERO; dv.len()];
        let mut ga = vec![S::ZERO; av.len()];
        let mut gb = vec![S::ZERO; bv.len()];
        let mut gc = vec![S::ZERO; cv.len()];
        let mut dh = vec![S::ZERO; d * n];
        let zeros = vec![S::ZERO; d * n];
        for bi in 0..bs {
            dh.iter_mut().for_each(|x| *x = S::ZERO);
            for ti in (0..t).rev() {
                let row = bi * t + ti;
                let h = &s.states[row * d * n..(row + 1) * d * n];
                let hprev = if ti == 0 {
                    &zeros[..]
                } else {
                    &s.states[(row - 1) * d * n..row * d * n]
                };
                let (bt, ct) = (&bv[row * n..(row + 1) * n], &cv[row * n..(row + 1) * n]);
                for di in 0..d {
                    let gyv = gy[row * d + di];
                    let dt = dv[row * d + di];
                    let u = uv[row * d + di];
                    let mut g_delta = S::ZERO;
                    let mut g_u = S::ZERO;
                    for ni in 0..n {
                        let idx = di * n + ni;
                        gc[row * n + ni] += gyv * h[idx];
                        let g = dh[idx] + gyv * ct[ni];
                        let a = av[idx];
                        let decay = s.decays[row * d * n + idx];
                        g_delta += g * (a * decay * hprev[idx] + bt[ni] * u);
                        ga[idx] += g * dt * decay * hprev[idx];
                        gb[row * n + ni] += g * dt * u;
                        g_u += g * dt * bt[ni];
                        dh[idx] = g * decay;
                    }
                    gd[row * d + di] += g_delta;
                    gu[row * d + di] += g_u;
                }
            }
        }
        for (v, g) in [(s.u, gu), (s.delta, gd), (s.a, ga), (s.bm, gb), (s.cm, gc)] {
            if self.req(v) {
                accumulate(grads, v, &g, g.len());
            }
        }
    }

    fn backprop_attention(&self, s: &AttnSaved<S>, out: &Tensor<S>, gy: &[S], grads: &mut [Option<Vec<S>>]) {
        let (bs, tq, d) = (out.shape()[0], out.shape()[1], out.shape()[2]);
        let tk = self.shape(s.k)[1];
        let dh = d / s.heads;
        let scale = S::from_f64(1.0 / (dh as f64).sqrt());
        let (qv, kv, vv) = (self.value(s.q).data(), self.value(s.k).data(), self.value(s.v).data());
        let mut gq = vec![S::ZERO; qv.len()];
        let mut gk = vec![S::ZERO; kv.len()];
        let mut gv = vec![S::ZERO; vv.len()];
        let mut dp = vec![S::ZERO; tq * tk];
        for bi in 0..bs {
            for hi in 0..s.heads {
                let qo = bi * tq * d + hi * dh;
                let ko = bi * tk * d + hi * dh;
                let po = (bi * s.heads + hi) * tq * tk;
                let p = &s.probs[po..po + tq * tk];
                // dV += Pᵀ dO
                S::gemm(
                    tk, tq, dh, S::ONE, p, 1, tk as isize, &gy[qo..], d as isize, 1, S::ONE,
                    &mut gv[ko..], d as isize, 1,
                );
                // dP = dO Vᵀ
                S::gemm(
                    tq, dh, tk, S::ONE, &gy[qo..], d as isize, 1, &vv[ko..], 1, d as isize,
                    S::ZERO, &mut dp, tk as isize, 1,
                );
                for i in 0..tq {
                    let lim = if s.causal { (i + 1).min(tk) } else { tk };
                    let pr = &p[i * tk..(i + 1) * tk];
                    let dr = &mut dp[i * tk..(i + 1) * tk];
                    let dot = pr[..lim].iter().zip(&dr[..lim]).fold(S::ZERO, |a, (&x, &y)| a + x * y);
                    for j in 0..tk {
                        dr[j] = if j < lim { pr[j] * (dr[j] - dot) } else { S::ZERO };
                    }
                }
                // dQ += dS K * scale, dK += dSᵀ Q * scale
                S::gemm(
                    tq, tk, dh, scale, &dp, tk as isize, 1, &kv[ko..], d as isize, 1, S::ONE,
                    &mut gq[qo..], d as isize, 1,
                );
                S::gemm(
                    tk, tq, dh, scale, &dp, 1, tk as isize, &qv[qo..], d as isize, 1, S::ONE,
                    &mut gk[ko..], d as isize, 1,
                );
            }
        }
        for (v, g) in [(s.q, gq), (s.k, gk), (s.v, gv)] {
            if self.req(v) {
                accumulate(grads, v, &g, g.len());
            }
        }
    }
}

fn y_finite<S: Scalar>(ys: &[S]) -> bool {
    ys.iter().all(|y| y.is_finite())
}

fn norm_diff<S: Scalar>(a: &[S], b: &[S]) -> S {
    a.iter()
        .zip(b)
        .fold(S::ZERO, |acc, (&x, &y)| acc + (x - y) * (x - y))
        .sqrt()
}

fn accumulate<S: Scalar>(grads: &mut [Option<Vec<S>>], v: Var, g: &[S], len: usize) {
    debug_assert_eq!(g.len(), len);
    match &mut grads[v.0] {
        Some(acc) => acc.iter_mut().zip(g).for_each(|(a, &b)| *a += b),
        slot @ None => *slot = Some(g.to_vec()),
    }
}

/// Result of a backward pass.
pub struct Gradients<S: Scalar> {
    by_name: BTreeMap<String, Vec<S>>,
    inputs: HashMap<usize, Vec<S>>,
}

impl<S: Scalar> Gradients<S> {
    /// Gradient w.r.t. a differentiable input or parameter node.
    pub fn of(&self, v: Var) -> Option<&[S]> {
        self.inputs.get(&v.0).map(Vec::as_slice)
    }

    pub fn param(&self, name: &str) -> Option<&[S]> {
        self.by_name.get(name).map(Vec::as_slice)
    }

    pub fn by_name(&self) -> &BTreeMap<String, Vec<S>> {
        &self.by_name
    }

    pub fn into_by_name(self) -> BTreeMap<String, Vec<S>> {
        self.by_name
    }

    /// Euclidean norm over every named parameter gradient.
    pub fn global_norm(&self) -> f64 {
        self.by_name
            .values()
            .flat_map(|g| g.iter())
            .map(|x| x.to_f64() * x.to_f64())
            .sum::<f64>()
            .sqrt()
    }
}
