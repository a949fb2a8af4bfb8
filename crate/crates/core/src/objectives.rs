//! Training objectives: reconstruction MSE, KL to the standard normal prior,
//! the contact-weighted reaction loss, and their weighted total.
//!
//! The sequence-level functions evaluate in f64 for reporting; the
//! `*_graph` variants build the same quantities on a tape for training.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{MotionSequence, PosteriorStats};
use crate::numerics::{Graph, Scalar, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub w_recon: f64,
    pub w_kl: f64,
    pub w_react: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            w_recon: 1.0,
            w_kl: 0.5,
            w_react: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.w_recon, self.w_kl, self.w_react];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config(format!("loss weights must be finite and non-negative, got {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub recon: f64,
    pub kl: f64,
    pub react: f64,
    pub total: f64,
}

fn check_same(op: &'static str, a: &MotionSequence, b: &MotionSequence) -> Result<()> {
    if a.frames().shape() != b.frames().shape() {
        return Err(Error::shape(op, a.frames().shape(), b.frames().shape()));
    }
    Ok(())
}

/// Mean over all `T·d` elements of the squared difference.
pub fn recon_loss(pred: &MotionSequence, target: &MotionSequence) -> Result<f64> {
    check_same("recon_loss", pred, target)?;
    let (p, t) = (pred.frames().data(), target.frames().data());
    let s: f64 = p.iter().zip(t).map(|(&a, &b)| (a as f64 - b as f64).powi(2)).sum();
    Ok(s / p.len() as f64)
}

/// Mean over `T·d_z` of `½(μ² + e^{logvar} − 1 − logvar)`.
pub fn kl_loss(stats: &PosteriorStats) -> Result<f64> {
    if stats.mu.shape() != stats.logvar.shape() {
        return Err(Error::shape("kl_loss", stats.mu.shape(), stats.logvar.shape()));
    }
    stats.mu.check_finite("posterior mean")?;
    stats.logvar.check_finite("posterior log-variance")?;
    let s: f64 = stats
        .mu
        .data()
        .iter()
        .zip(stats.logvar.data())
        .map(|(&m, &lv)| {
            let (m, lv) = (m as f64, lv as f64);
            0.5 * (m * m + lv.exp() - 1.0 - lv)
        })
        .sum();
    Ok(s / stats.mu.len() as f64)
}

fn dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum::<f64>().sqrt()
}

/// `(1/T) Σ_t exp(−‖a_t − r_t‖) (‖a_t − r̂_t‖ − ‖a_t − r_t‖)²` with full-pose
/// norms; `a` = actor, `r` = ground-truth reaction, `r̂` = prediction.
pub fn reaction_loss(pred: &MotionSequence, gt: &MotionSequence, actor: &MotionSequence) -> Result<f64> {
    check_same("reaction_loss", pred, gt)?;
    check_same("reaction_loss", gt, actor)?;
    let t = pred.len();
    let s: f64 = (0..t)
        .map(|i| {
            let d_gt = dist(actor.frame(i), gt.frame(i));
            let d_pred = dist(actor.frame(i), pred.frame(i));
            (-d_gt).exp() * (d_pred - d_gt).powi(2)
        })
        .sum();
    Ok(s / t as f64)
}

/// Weighted total of precomputed components `(recon, kl, react)`.
pub fn total_loss(components: (f64, f64, f64), weights: &LossWeights) -> Result<LossReport> {
    weights.validate()?;
    let (recon, kl, react) = components;
    Ok(LossReport {
        recon,
        kl,
        react,
        total: weights.w_recon * recon + weights.w_kl * kl + weights.w_react * react,
    })
}

/// Tape handles for the three components and the weighted total.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub recon: Var,
    pub kl: Var,
    pub react: Var,
    pub total: Var,
}

impl LossVars {
    /// Report built from the component values on the tape.
    pub fn report<S: Scalar>(&self, g: &Graph<S>, weights: &LossWeights) -> Result<LossReport> {
        total_loss(
            (
                g.value(self.recon).item().to_f64(),
                g.value(self.kl).item().to_f64(),
                g.value(self.react).item().to_f64(),
            ),
            weights,
        )
    }
}

/// Losses on a batch: `pred`, `gt`, `actor` are `[B, T, d]`; `mu`, `logvar`
/// are `[B, T, d_z]`.
pub fn total_loss_graph<S: Scalar>(
    g: &mut Graph<S>,
    pred: Var,
    mu: Var,
    logvar: Var,
    gt: &Tensor<S>,
    actor: &Tensor<S>,
    weights: &LossWeights,
) -> Result<LossVars> {
    weights.validate()?;
    let recon = g.mse(pred, gt)?;
    let kl = g.kl_standard_normal(mu, logvar)?;
    let react = g.reaction_loss(pred, gt, actor)?;
    let a = g.scale(recon, weights.w_recon)?;
    let b = g.scale(kl, weights.w_kl)?;
    let c = g.scale(react, weights.w_react)?;
    let ab = g.add(a, b)?;
    let total = g.add(ab, c)?;
    Ok(LossVars { recon, kl, react, total })
}
