use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// One character's skeletal motion: `frames` is `[T, 3k]`, joint `j` of
/// frame `t` at columns `3j..3j+3`.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionSequence {
    frames: Tensor<f32>,
    pub fps: u32,
    joint_count: usize,
    pub skeleton_id: String,
}

impl MotionSequence {
    pub fn new(frames: Tensor<f32>, joint_count: usize, fps: u32, skeleton_id: impl Into<String>) -> Result<Self> {
        let shape = frames.shape();
        if shape.len() != 2 || shape[1] != 3 * joint_count {
            return Err(Error::shape("motion sequence", shape, &[0, 3 * joint_count]));
        }
        if shape[0] == 0 {
            return Err(Error::Domain("motion sequence needs at least one frame".into()));
        }
        frames.check_finite("motion frames")?;
        Ok(MotionSequence {
            frames,
            fps,
            joint_count,
            skeleton_id: skeleton_id.into(),
        })
    }

    pub fn from_rows(rows: &[Vec<f32>], joint_count: usize, fps: u32, skeleton_id: impl Into<String>) -> Result<Self> {
        let d = 3 * joint_count;
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != d) {
            return Err(Error::Parse {
                path: String::new(),
                msg: format!("frame {i} has width {}, joint_count {joint_count} implies {d}", r.len()),
            });
        }
        let data = rows.iter().flatten().copied().collect();
        Self::new(Tensor::new(&[rows.len(), d], data)?, joint_count, fps, skeleton_id)
    }

    pub fn frames(&self) -> &Tensor<f32> {
        &self.frames
    }

    pub fn into_frames(self) -> Tensor<f32> {
        self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn joint_count(&self) -> usize {
        self.joint_count
    }

    pub fn pose_dim(&self) -> usize {
        3 * self.joint_count
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        self.frames.row(t)
    }

    pub fn joint(&self, t: usize, j: usize) -> [f32; 3] {
        let r = self.frame(t);
        [r[3 * j], r[3 * j + 1], r[3 * j + 2]]
    }

    /// New sequence over frames `start..start + len`.
    pub fn slice(&self, start: usize, len: usize) -> Result<Self> {
        if len == 0 || start + len > self.len() {
            return Err(Error::Usage(format!(
                "frame window {start}..{} outside sequence of {} frames",
                start + len,
                self.len()
            )));
        }
        let d = self.pose_dim();
        let data = self.frames.data()[start * d..(start + len) * d].to_vec();
        Self::new(Tensor::new(&[len, d], data)?, self.joint_count, self.fps, self.skeleton_id.clone())
    }

    /// Concatenates sequences in time (same skeleton required).
    pub fn concat(parts: &[MotionSequence]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::Usage("nothing to concatenate".into()))?;
        let d = first.pose_dim();
        let mut data = Vec::new();
        for p in parts {
            if p.pose_dim() != d {
                return Err(Error::shape("concat motion", &[d], &[p.pose_dim()]));
            }
            data.extend_from_slice(p.frames.data());
        }
        let t = data.len() / d;
        Self::new(Tensor::new(&[t, d], data)?, first.joint_count, first.fps, first.skeleton_id.clone())
    }

    /// Applies `f` to every coordinate.
    pub fn map(&self, f: impl Fn(usize, f32) -> f32) -> Result<Self> {
        let d = self.pose_dim();
        let data = self
            .frames
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| f(i % d, v))
            .collect();
        Self::new(
            Tensor::new(self.frames.shape(), data)?,
            self.joint_count,
            self.fps,
            self.skeleton_id.clone(),
        )
    }

    /// Adds a constant 3-vector to every joint of every frame.
    pub fn translate(&self, offset: [f32; 3]) -> Result<Self> {
        self.map(|c, v| v + offset[c % 3])
    }

    /// Per-frame Euclidean displacement of the full pose, `T − 1` values.
    pub fn frame_displacements(&self) -> Vec<f64> {
        (1..self.len())
            .map(|t| {
                self.frame(t)
                    .iter()
                    .zip(self.frame(t - 1))
                    .map(|(a, b)| ((a - b) as f64).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .collect()
    }
}
