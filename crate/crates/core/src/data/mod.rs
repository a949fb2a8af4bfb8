//! Actor / reactor pairs: synthetic generation, file interchange,
//! normalization and windowing.

mod io;
mod synth;

use serde::{Deserialize, Serialize};

pub use io::{
    load_dataset, load_motion, load_pair, motion_from_json, motion_to_json, save_dataset, save_motion, save_pair,
    write_atomic, Dataset, ManifestEntry, Split, FORMAT_VERSION, MANIFEST_NAME,
};
pub use synth::{family_rule, synth_dataset, Family, SynthConfig, FOLLOW_LAG, PUSH_RADIUS};

use crate::error::{Error, Result};
use crate::model::MotionSequence;

#[derive(Clone, Debug, PartialEq)]
pub struct InteractionPair {
    pub actor: MotionSequence,
    pub reactor: MotionSequence,
    pub class_label: Option<String>,
    pub pair_id: String,
    /// First source frame when this pair is a window of a longer one.
    pub source_offset: Option<usize>,
}

impl InteractionPair {
    pub fn new(
        actor: MotionSequence,
        reactor: MotionSequence,
        class_label: Option<String>,
        pair_id: impl Into<String>,
    ) -> Result<Self> {
        if actor.len() != reactor.len() || actor.joint_count() != reactor.joint_count() || actor.fps != reactor.fps {
            return Err(Error::Usage(format!(
                "actor ({} frames, {} joints, {} fps) and reactor ({} frames, {} joints, {} fps) do not match",
                actor.len(),
                actor.joint_count(),
                actor.fps,
                reactor.len(),
                reactor.joint_count(),
                reactor.fps
            )));
        }
        Ok(InteractionPair {
            actor,
            reactor,
            class_label,
            pair_id: pair_id.into(),
            source_offset: None,
        })
    }

    pub fn len(&self) -> usize {
        self.actor.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actor.is_empty()
    }
}

/// Lower bound applied to fitted standard deviations.
pub const STD_FLOOR: f32 = 1e-6;

/// Per-coordinate z-score statistics shared by actor and reactor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
    pub dataset_id: String,
}

impl NormStats {
    /// Fits on every actor and reactor frame of `pairs`.
    pub fn fit(pairs: &[InteractionPair], dataset_id: impl Into<String>) -> Result<Self> {
        let first = pairs.first().ok_or_else(|| Error::Usage("cannot fit normalization on no data".into()))?;
        let d = first.actor.pose_dim();
        let (mut sum, mut n) = (vec![0.0f64; d], 0usize);
        let seqs = || pairs.iter().flat_map(|p| [&p.actor, &p.reactor]);
        for s in seqs() {
            if s.pose_dim() != d {
                return Err(Error::shape("normalize", &[d], &[s.pose_dim()]));
            }
            for t in 0..s.len() {
                for (a, &v) in sum.iter_mut().zip(s.frame(t)) {
                    *a += v as f64;
                }
            }
            n += s.len();
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let mut var = vec![0.0f64; d];
        for s in seqs() {
            for t in 0..s.len() {
                for ((a, &v), m) in var.iter_mut().zip(s.frame(t)).zip(&mean) {
                    *a += (v as f64 - m).powi(2);
                }
            }
        }
        let std = var
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let s = (v / n as f64).sqrt() as f32;
                if s < STD_FLOOR {
                    log::warn!("coordinate {i} has zero variance; flooring its std at {STD_FLOOR}");
                    STD_FLOOR
                } else {
                    s
                }
            })
            .collect();
        Ok(NormStats {
            mean: mean.iter().map(|&m| m as f32).collect(),
            std,
            dataset_id: dataset_id.into(),
        })
    }

    fn check(&self, seq: &MotionSequence) -> Result<()> {
        if seq.pose_dim() != self.mean.len() {
            return Err(Error::shape("normalize", &[self.mean.len()], &[seq.pose_dim()]));
        }
        Ok(())
    }

    pub fn normalize_seq(&self, seq: &MotionSequence) -> Result<MotionSequence> {
        self.check(seq)?;
        seq.map(|c, v| (v - self.mean[c]) / self.std[c])
    }

    pub fn denormalize_seq(&self, seq: &MotionSequence) -> Result<MotionSequence> {
        self.check(seq)?;
        seq.map(|c, v| v * self.std[c] + self.mean[c])
    }

    pub fn normalize_frame(&self, frame: &[f32]) -> Vec<f32> {
        frame.iter().enumerate().map(|(c, v)| (v - self.mean[c]) / self.std[c]).collect()
    }

    pub fn normalize_pair(&self, p: &InteractionPair) -> Result<InteractionPair> {
        Ok(InteractionPair {
            actor: self.normalize_seq(&p.actor)?,
            reactor: self.normalize_seq(&p.reactor)?,
            ..p.clone()
        })
    }

    pub fn denormalize_pair(&self, p: &InteractionPair) -> Result<InteractionPair> {
        Ok(InteractionPair {
            actor: self.denormalize_seq(&p.actor)?,
            reactor: self.denormalize_seq(&p.reactor)?,
            ..p.clone()
        })
    }
}

/// Standardizes `pairs` with `stats`, or with statistics fitted on `pairs`
/// when none are given.
pub fn normalize(pairs: &[InteractionPair], stats: Option<&NormStats>) -> Result<(Vec<InteractionPair>, NormStats)> {
    let stats = match stats {
        Some(s) => s.clone(),
        None => NormStats::fit(pairs, "train")?,
    };
    let out = pairs.iter().map(|p| stats.normalize_pair(p)).collect::<Result<_>>()?;
    Ok((out, stats))
}

pub fn denormalize(pairs: &[InteractionPair], stats: &NormStats) -> Result<Vec<InteractionPair>> {
    pairs.iter().map(|p| stats.denormalize_pair(p)).collect()
}

/// Fixed-length windows every `stride` frames; pairs shorter than the
/// window are skipped with a warning.
pub fn split_windows(pairs: &[InteractionPair], window: usize, stride: usize) -> Result<Vec<InteractionPair>> {
    if window == 0 || stride == 0 {
        return Err(Error::Usage("window and stride must be positive".into()));
    }
    let mut out = Vec::new();
    for p in pairs {
        if window > p.len() {
            log::warn!("pair {} has {} frames, shorter than window {window}; skipped", p.pair_id, p.len());
            continue;
        }
        let base = p.source_offset.unwrap_or(0);
        for start in (0..=p.len() - window).step_by(stride) {
            out.push(InteractionPair {
                actor: p.actor.slice(start, window)?,
                reactor: p.reactor.slice(start, window)?,
                class_label: p.class_label.clone(),
                pair_id: format!("{}@{start}", p.pair_id),
                source_offset: Some(base + start),
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pair(t: usize, seed: u64, shift: f32) -> InteractionPair {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mk = |rng: &mut ChaCha8Rng| {
            MotionSequence::new(Tensor::randn(&[t, 6], 2.0, rng).map(|v| v + shift), 2, 30, "s").unwrap()
        };
        let (a, r) = (mk(&mut rng), mk(&mut rng));
        InteractionPair::new(a, r, None, format!("p{seed}")).unwrap()
    }

    #[test]
    fn window_counts_and_offsets() {
        let p = pair(100, 0, 0.0);
        let w = split_windows(std::slice::from_ref(&p), 20, 20).unwrap();
        assert_eq!(w.len(), 5);
        let w = split_windows(std::slice::from_ref(&p), 20, 10).unwrap();
        assert_eq!(w.len(), 9);
        for win in &w {
            let off = win.source_offset.unwrap();
            assert_eq!(win.actor.frame(0), p.actor.frame(off));
            assert_eq!(win.reactor.len(), win.actor.len());
        }
        assert!(split_windows(&[p], 101, 10).unwrap().is_empty());
    }

    #[test]
    fn normalization_round_trip_and_stats() {
        let train: Vec<_> = (0..10).map(|s| pair(30, s, 3.0)).collect();
        let (norm, stats) = normalize(&train, None).unwrap();
        let back = denormalize(&norm, &stats).unwrap();
        for (a, b) in back.iter().zip(&train) {
            assert!(a.actor.frames().max_abs_diff(b.actor.frames()) < 1e-5);
            assert!(a.reactor.frames().max_abs_diff(b.reactor.frames()) < 1e-5);
        }
        let (_, again) = normalize(&norm, None).unwrap();
        assert!(again.mean.iter().all(|m| m.abs() < 1e-5));
        assert!(again.std.iter().all(|s| (s - 1.0).abs() < 1e-4));
        // statistics from the train split applied to shifted test data
        let test: Vec<_> = (100..105).map(|s| pair(30, s, 5.0)).collect();
        let (nt, _) = normalize(&test, Some(&stats)).unwrap();
        let m = nt[0].actor.frames().data().iter().map(|&v| v as f64).sum::<f64>() / 180.0;
        assert!(m.abs() > 0.1);
    }

    #[test]
    fn constant_coordinate_gets_floor() {
        let s = MotionSequence::new(Tensor::zeros(&[4, 6]), 2, 30, "s").unwrap();
        let p = InteractionPair::new(s.clone(), s, None, "z").unwrap();
        let st = NormStats::fit(&[p], "z").unwrap();
        assert!(st.std.iter().all(|&v| v == STD_FLOOR));
    }

    #[test]
    fn mismatched_pair_rejected() {
        let a = MotionSequence::new(Tensor::zeros(&[4, 6]), 2, 30, "s").unwrap();
        let r = MotionSequence::new(Tensor::zeros(&[5, 6]), 2, 30, "s").unwrap();
        assert!(InteractionPair::new(a, r, None, "x").is_err());
    }
}
