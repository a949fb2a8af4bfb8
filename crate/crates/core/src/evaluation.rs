//! Held-out evaluation of a trained model against the copy-actor baseline.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{InteractionPair, NormStats};
use crate::error::{Error, Result};
use crate::metrics::{default_pair_count, evaluate, EvalReport};
use crate::model::{MotionSequence, ReactionMamba};
use crate::numerics::Tensor;

const EVAL_BATCH: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalOutcome {
    pub model: EvalReport,
    /// Predicting the actor's own motion as the reaction.
    pub copy_actor: EvalReport,
}

/// Generates a reaction for every pair (normalized with `norm`) from its
/// actor motion and the reactor's first frame. Latents come from one
/// ChaCha8 stream seeded with `seed`, consumed in pair order.
pub fn generate_reactions(
    model: &ReactionMamba,
    norm: &NormStats,
    pairs: &[InteractionPair],
    seed: u64,
) -> Result<Vec<MotionSequence>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(pairs.len());
    for chunk in pairs.chunks(EVAL_BATCH) {
        let t = chunk[0].len();
        let d = chunk[0].actor.pose_dim();
        if chunk.iter().any(|p| p.len() != t) {
            // ragged lengths: fall back to one sequence per pass
            for p in chunk {
                let x = norm.normalize_seq(&p.actor)?;
                let y1 = norm.normalize_frame(p.reactor.frame(0));
                let xt = x.frames().clone().reshape(&[1, p.len(), d])?;
                let y = model.generate_batch(&xt, &Tensor::new(&[1, d], y1)?, &mut rng)?;
                out.push(MotionSequence::new(y.reshape(&[p.len(), d])?, p.actor.joint_count(), p.actor.fps, p.reactor.skeleton_id.clone())?);
            }
            continue;
        }
        let mut x = Vec::with_capacity(chunk.len() * t * d);
        let mut y1 = Vec::with_capacity(chunk.len() * d);
        for p in chunk {
            x.extend_from_slice(norm.normalize_seq(&p.actor)?.frames().data());
            y1.extend(norm.normalize_frame(p.reactor.frame(0)));
        }
        let b = chunk.len();
        let y = model.generate_batch(&Tensor::new(&[b, t, d], x)?, &Tensor::new(&[b, d], y1)?, &mut rng)?;
        for (i, p) in chunk.iter().enumerate() {
            let frames = Tensor::new(&[t, d], y.data()[i * t * d..(i + 1) * t * d].to_vec())?;
            out.push(MotionSequence::new(frames, p.actor.joint_count(), p.actor.fps, p.reactor.skeleton_id.clone())?);
        }
    }
    Ok(out)
}

/// Metrics in normalized coordinates for the model and the copy-actor
/// baseline on the same pairs.
pub fn evaluate_model(
    model: &ReactionMamba,
    norm: &NormStats,
    pairs: &[InteractionPair],
    seed: u64,
    num_pairs: Option<usize>,
) -> Result<EvalOutcome> {
    if pairs.len() < 2 {
        return Err(Error::Usage(format!("evaluation needs at least 2 pairs, got {}", pairs.len())));
    }
    let generated = generate_reactions(model, norm, pairs, seed)?;
    let gt: Vec<MotionSequence> = pairs.iter().map(|p| norm.normalize_seq(&p.reactor)).collect::<Result<_>>()?;
    let actors: Vec<MotionSequence> = pairs.iter().map(|p| norm.normalize_seq(&p.actor)).collect::<Result<_>>()?;
    let np = num_pairs.unwrap_or_else(|| default_pair_count(pairs.len()));
    let metric_rng = ChaCha8Rng::seed_from_u64(seed ^ 0xD1CE);
    Ok(EvalOutcome {
        model: evaluate(&generated, &gt, np, &mut metric_rng.clone())?,
        copy_actor: evaluate(&actors, &gt, np, &mut metric_rng.clone())?,
    })
}
