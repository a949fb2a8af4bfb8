use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::InteractionPair;
use crate::error::{Error, Result};
use crate::model::MotionSequence;
use crate::numerics::Tensor;

/// Lag of the follow family, in frames.
pub const FOLLOW_LAG: usize = 3;
/// Horizontal radius at which the actor's root triggers a push.
pub const PUSH_RADIUS: f32 = 0.8;
const PUSH_GAIN: f32 = 0.5;
const PUSH_TAU: f32 = 4.0;
const SYNTH_FPS: u32 = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    /// Reactor is the actor reflected across a vertical plane `x = c`.
    Mirror,
    /// Reactor replays the actor `FOLLOW_LAG` frames late, shifted by a
    /// per-pair offset.
    LaggedFollow,
    /// Reactor stands still until the actor comes close, then is pushed
    /// away along the approach direction.
    PushImpulse,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::Mirror, Family::LaggedFollow, Family::PushImpulse];

    pub fn name(self) -> &'static str {
        match self {
            Family::Mirror => "mirror",
            Family::LaggedFollow => "lagged-follow",
            Family::PushImpulse => "push-impulse",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::Usage(format!("unknown family {s:?}, expected mirror, lagged-follow or push-impulse")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_pairs: usize,
    pub frames: usize,
    pub joints: usize,
    pub family: Family,
    pub noise: f64,
    pub seed: u64,
}

/// Uniform Catmull-Rom interpolation through `keys` sampled at `t` frames.
fn catmull_rom(keys: &[[f32; 3]], t: usize) -> Vec<[f32; 3]> {
    let segs = keys.len() - 1;
    let at = |i: isize| keys[i.clamp(0, keys.len() as isize - 1) as usize];
    (0..t)
        .map(|f| {
            let u = if t == 1 { 0.0 } else { f as f32 / (t - 1) as f32 * segs as f32 };
            let i = (u.floor() as usize).min(segs - 1);
            let s = u - i as f32;
            let (p0, p1, p2, p3) = (at(i as isize - 1), at(i as isize), at(i as isize + 1), at(i as isize + 2));
            let mut out = [0.0; 3];
            for c in 0..3 {
                out[c] = 0.5
                    * (2.0 * p1[c]
                        + (p2[c] - p0[c]) * s
                        + (2.0 * p0[c] - 5.0 * p1[c] + 4.0 * p2[c] - p3[c]) * s * s
                        + (3.0 * p1[c] - p0[c] - 3.0 * p2[c] + p3[c]) * s * s * s);
            }
            out
        })
        .collect()
}

fn rest_offset(j: usize, k: usize) -> [f32; 3] {
    let h = 1.6 * j as f32 / (k - 1) as f32;
    let a = j as f32 * 2.4;
    [0.2 * a.sin(), h, 0.2 * a.cos()]
}

/// Keeps the root walk inside `[-ROOT_BOUND, ROOT_BOUND]` by mirroring.
fn reflect(x: f32) -> f32 {
    if x > ROOT_BOUND {
        2.0 * ROOT_BOUND - x
    } else if x < -ROOT_BOUND {
        -2.0 * ROOT_BOUND - x
    } else {
        x
    }
}

const ROOT_BOUND: f32 = 2.0;

/// Smooth random actor motion: a root spline plus small per-joint splines
/// around a fixed rest pose.
fn actor_motion(t: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<[f32; 3]> {
    // one key per 6 frames keeps the speed independent of the length
    let n_keys = (t / 6).max(2) + 1;
    let mut root = Vec::with_capacity(n_keys);
    let mut p = [rng.random_range(-1.0..1.0), 0.9, rng.random_range(-1.0..1.0)];
    for _ in 0..n_keys {
        root.push(p);
        p[0] = reflect(p[0] + rng.random_range(-0.4..0.4));
        p[1] = 0.9 + rng.random_range(-0.1..0.1);
        p[2] = reflect(p[2] + rng.random_range(-0.4..0.4));
    }
    let root_path = catmull_rom(&root, t);
    let mut out = vec![[0.0; 3]; t * k];
    for j in 0..k {
        let keys: Vec<[f32; 3]> = (0..n_keys)
            .map(|_| {
                let r = rest_offset(j, k);
                let w = if j == 0 { 0.0 } else { 0.15 };
                [
                    r[0] + rng.random_range(-w..=w),
                    r[1] + rng.random_range(-w..=w),
                    r[2] + rng.random_range(-w..=w),
                ]
            })
            .collect();
        let local = catmull_rom(&keys, t);
        for f in 0..t {
            for c in 0..3 {
                out[f * k + j][c] = root_path[f][c] + local[f][c];
            }
        }
    }
    out
}

fn to_motion(points: &[[f32; 3]], k: usize) -> Result<MotionSequence> {
    let t = points.len() / k;
    let data = points.iter().flatten().copied().collect();
    MotionSequence::new(Tensor::new(&[t, 3 * k], data)?, k, SYNTH_FPS, "synthetic")
}

/// The noiseless reactor implied by `family`, the actor, and the reactor's
/// first frame.
pub fn family_rule(family: Family, actor: &MotionSequence, reactor0: &[f32]) -> Result<MotionSequence> {
    let d = actor.pose_dim();
    if reactor0.len() != d {
        return Err(Error::shape("family_rule", &[reactor0.len()], &[d]));
    }
    let t = actor.len();
    let a0 = actor.frame(0);
    let mut out = Vec::with_capacity(t * d);
    match family {
        Family::LaggedFollow => {
            let offset: Vec<f32> = reactor0.iter().zip(a0).map(|(r, a)| r - a).collect();
            for f in 0..t {
                let src = actor.frame(f.saturating_sub(FOLLOW_LAG));
                out.extend(src.iter().zip(&offset).map(|(a, o)| a + o));
            }
        }
        Family::Mirror => {
            let c = 0.5 * (a0[0] + reactor0[0]);
            for f in 0..t {
                out.extend(actor.frame(f).iter().enumerate().map(|(i, &v)| if i % 3 == 0 { 2.0 * c - v } else { v }));
            }
        }
        Family::PushImpulse => {
            let q = [reactor0[0], reactor0[2]];
            let dist = |f: usize| {
                let p = actor.frame(f);
                ((p[0] - q[0]).powi(2) + (p[2] - q[1]).powi(2)).sqrt()
            };
            let trigger = (0..t).find(|&f| dist(f) < PUSH_RADIUS);
            let dir = trigger.map(|f0| {
                let p = actor.frame(f0);
                let (dx, dz) = (q[0] - p[0], q[1] - p[2]);
                let n = (dx * dx + dz * dz).sqrt().max(1e-6);
                [dx / n, dz / n]
            });
            for f in 0..t {
                let amp = match trigger {
                    Some(f0) if f > f0 => {
                        let s = (f - f0) as f32 / PUSH_TAU;
                        PUSH_GAIN * s * (1.0 - s).exp()
                    }
                    _ => 0.0,
                };
                let dir = dir.unwrap_or([0.0, 0.0]);
                out.extend(reactor0.iter().enumerate().map(|(i, &v)| match i % 3 {
                    0 => v + amp * dir[0],
                    2 => v + amp * dir[1],
                    _ => v,
                }));
            }
        }
    }
    MotionSequence::new(Tensor::new(&[t, d], out)?, actor.joint_count(), actor.fps, actor.skeleton_id.clone())
}

fn reactor_start(family: Family, actor: &[[f32; 3]], t: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let frame0 = &actor[..k];
    match family {
        Family::LaggedFollow => {
            let theta: f32 = rng.random_range(0.0..std::f32::consts::TAU);
            let r: f32 = rng.random_range(0.8..1.5);
            frame0
                .iter()
                .flat_map(|p| [p[0] + r * theta.cos(), p[1], p[2] + r * theta.sin()])
                .collect()
        }
        Family::Mirror => {
            let c = frame0[0][0] + rng.random_range(0.4..1.2);
            frame0.iter().flat_map(|p| [2.0 * c - p[0], p[1], p[2]]).collect()
        }
        Family::PushImpulse => {
            // stand near the actor's path so the approach triggers
            let f = rng.random_range(t / 3..=(2 * t / 3).max(t / 3));
            let theta: f32 = rng.random_range(0.0..std::f32::consts::TAU);
            let root = actor[f * k];
            let base = [root[0] + 0.5 * theta.cos(), root[2] + 0.5 * theta.sin()];
            (0..k)
                .flat_map(|j| {
                    let r = rest_offset(j, k);
                    [base[0] + r[0], 0.9 + r[1], base[1] + r[2]]
                })
                .collect()
        }
    }
}

/// Deterministic synthetic actor / reactor pairs.
pub fn synth_dataset(cfg: &SynthConfig) -> Result<Vec<InteractionPair>> {
    if cfg.frames < 4 || cfg.joints < 2 {
        return Err(Error::Usage(format!(
            "synthetic data needs frames >= 4 and joints >= 2, got {} and {}",
            cfg.frames, cfg.joints
        )));
    }
    if !(cfg.noise >= 0.0 && cfg.noise.is_finite()) {
        return Err(Error::Usage(format!("noise must be a finite non-negative std, got {}", cfg.noise)));
    }
    let (t, k) = (cfg.frames, cfg.joints);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = Normal::new(0.0, cfg.noise).map_err(|e| Error::Usage(e.to_string()))?;
    (0..cfg.n_pairs)
        .map(|i| {
            let a = actor_motion(t, k, &mut rng);
            let r0 = reactor_start(cfg.family, &a, t, k, &mut rng);
            let actor = to_motion(&a, k)?;
            let mut reactor = family_rule(cfg.family, &actor, &r0)?;
            if cfg.noise > 0.0 {
                let eps: Vec<f32> = (0..reactor.frames().len()).map(|_| noise.sample(&mut rng) as f32).collect();
                let frames = reactor.frames().data().iter().zip(&eps).map(|(v, e)| v + e).collect();
                reactor = MotionSequence::new(Tensor::new(reactor.frames().shape(), frames)?, k, SYNTH_FPS, "synthetic")?;
            }
            InteractionPair::new(actor, reactor, Some(cfg.family.name().to_string()), format!("{i:06}"))
        })
        .collect()
}
