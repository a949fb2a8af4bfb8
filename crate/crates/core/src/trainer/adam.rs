use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments per parameter, and the number of updates taken.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub m: BTreeMap<String, Vec<f32>>,
    pub v: BTreeMap<String, Vec<f32>>,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &ParamStore<f32>) -> Self {
        let zeros = |_: ()| {
            params
                .iter()
                .map(|(n, t)| (n.clone(), vec![0.0; t.len()]))
                .collect::<BTreeMap<_, _>>()
        };
        AdamState {
            m: zeros(()),
            v: zeros(()),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update. Every gradient is checked before any
/// parameter changes; parameters without a gradient are left untouched.
pub fn adam_step(
    params: &mut ParamStore<f32>,
    grads: &BTreeMap<String, Vec<f32>>,
    state: &mut AdamState,
    lr: f64,
    hyper: &AdamHyper,
) -> Result<()> {
    for (name, g) in grads {
        let p = params.get(name)?;
        if p.len() != g.len() {
            return Err(Error::shape("adam_step", &[p.len()], &[g.len()]));
        }
        if let Some(i) = g.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite gradient for {name}[{i}] at step {}; update aborted",
                state.step + 1
            )));
        }
    }
    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - hyper.beta1.powf(t);
    let bc2 = 1.0 - hyper.beta2.powf(t);
    let (b1, b2) = (hyper.beta1 as f32, hyper.beta2 as f32);
    let step_size = (lr / bc1) as f32;
    let bc2_sqrt = bc2.sqrt() as f32;
    let eps = hyper.eps as f32;
    for (name, g) in grads {
        let n = g.len();
        let m = state.m.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
        let v = state.v.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
        let p = params.get_mut(name)?.data_mut();
        for i in 0..n {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            p[i] -= step_size * m[i] / (v[i].sqrt() / bc2_sqrt + eps);
        }
    }
    Ok(())
}

/// `lr_min + ½(base − lr_min)(1 + cos(π · step / total))`.
pub fn cosine_lr(step: u64, total_steps: u64, base_lr: f64, lr_min: f64) -> Result<f64> {
    if total_steps == 0 || step > total_steps {
        return Err(Error::Domain(format!("step {step} outside schedule 0..={total_steps}")));
    }
    let phase = std::f64::consts::PI * step as f64 / total_steps as f64;
    Ok(lr_min + 0.5 * (base_lr - lr_min) * (1.0 + phase.cos()))
}

/// Rescales gradients in place so their global L2 norm is at most `max_norm`;
/// returns the norm before clipping.
pub fn clip_global_norm(grads: &mut BTreeMap<String, Vec<f32>>, max_norm: f64) -> f64 {
    let norm = grads
        .values()
        .flatten()
        .map(|&g| (g as f64) * (g as f64))
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = (max_norm / norm) as f32;
        grads.values_mut().flatten().for_each(|g| *g *= s);
    }
    norm
}
