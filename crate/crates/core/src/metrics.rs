//! Evaluation metrics: MPJPE, MPJVE, Fréchet distance between Gaussian
//! feature fits, and paired diversity.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{MotionSequence, ReactionMamba};
use crate::numerics::Tensor;

/// Sample mean and unbiased covariance of a feature set.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianStats {
    pub mean: Tensor<f64>,
    pub covariance: Tensor<f64>,
    pub sample_count: usize,
}

impl GaussianStats {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn cov_matrix(&self) -> DMatrix<f64> {
        let f = self.dim();
        DMatrix::from_row_slice(f, f, self.covariance.data())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mpjpe: f64,
    pub mpjve: f64,
    pub fid: f64,
    pub div_gen: f64,
    pub div_gt: f64,
    /// `div_gen / div_gt`; absent when the ground truth has no spread.
    pub div_ratio: Option<f64>,
    pub sequence_count: usize,
    pub frame_count: usize,
}

impl EvalReport {
    pub const MARKDOWN_HEADER: &'static str = "| Method | MPJPE | MPJVE | FID | div_gen/div_gt |\n|---|---|---|---|---|";

    /// One Markdown table row: `| label | MPJPE | MPJVE | FID | ratio |`.
    pub fn markdown_row(&self, label: &str) -> String {
        let ratio = self.div_ratio.map_or("n/a".to_string(), |r| format!("{r:.4}"));
        format!(
            "| {label} | {:.4} | {:.4} | {:.4} | {ratio} |",
            self.mpjpe, self.mpjve, self.fid
        )
    }
}

fn check_sets(op: &'static str, pred: &[MotionSequence], gt: &[MotionSequence]) -> Result<()> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(Error::shape(op, &[pred.len()], &[gt.len()]));
    }
    for (p, g) in pred.iter().zip(gt) {
        if p.frames().shape() != g.frames().shape() {
            return Err(Error::shape(op, p.frames().shape(), g.frames().shape()));
        }
    }
    Ok(())
}

fn joint_dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum::<f64>().sqrt()
}

/// Mean over sequences, frames and joints of the per-joint Euclidean error.
pub fn mpjpe(pred: &[MotionSequence], gt: &[MotionSequence]) -> Result<f64> {
    check_sets("mpjpe", pred, gt)?;
    let (mut s, mut n) = (0.0, 0usize);
    for (p, g) in pred.iter().zip(gt) {
        for t in 0..p.len() {
            for (a, b) in p.frame(t).chunks_exact(3).zip(g.frame(t).chunks_exact(3)) {
                s += joint_dist(a, b);
                n += 1;
            }
        }
    }
    Ok(s / n as f64)
}

/// Mean per-joint error of frame-to-frame velocities.
pub fn mpjve(pred: &[MotionSequence], gt: &[MotionSequence]) -> Result<f64> {
    check_sets("mpjve", pred, gt)?;
    if let Some(p) = pred.iter().find(|p| p.len() < 2) {
        return Err(Error::Domain(format!("velocity error needs at least 2 frames, got {}", p.len())));
    }
    let (mut s, mut n) = (0.0, 0usize);
    for (p, g) in pred.iter().zip(gt) {
        for t in 0..p.len() - 1 {
            let (p0, p1, g0, g1) = (p.frame(t), p.frame(t + 1), g.frame(t), g.frame(t + 1));
            for j in 0..p.joint_count() {
                let e: f64 = (3 * j..3 * j + 3)
                    .map(|c| {
                        let vp = p1[c] as f64 - p0[c] as f64;
                        let vg = g1[c] as f64 - g0[c] as f64;
                        (vp - vg).powi(2)
                    })
                    .sum();
                s += e.sqrt();
                n += 1;
            }
        }
    }
    Ok(s / n as f64)
}

/// Mean and unbiased covariance of the rows of `features: [n, f]`.
pub fn fit_gaussian(features: &Tensor<f64>) -> Result<GaussianStats> {
    if features.shape().len() != 2 {
        return Err(Error::shape("fit_gaussian", features.shape(), &[0, 0]));
    }
    let (n, f) = (features.rows(), features.cols());
    if n < 2 {
        return Err(Error::Domain(format!("Gaussian fit needs at least 2 samples, got {n}")));
    }
    let x = DMatrix::from_row_slice(n, f, features.data());
    let mean: DVector<f64> = x.row_mean().transpose();
    let mut centered = x;
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let cov = centered.transpose() * &centered / (n - 1) as f64;
    Ok(GaussianStats {
        mean: Tensor::new(&[f], mean.as_slice().to_vec())?,
        covariance: Tensor::new(&[f, f], row_major(&cov))?,
        sample_count: n,
    })
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

fn sqrt_psd(m: DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m);
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

fn check_symmetric(m: &DMatrix<f64>) -> Result<()> {
    let scale = m.amax().max(1.0);
    let asym = (m - m.transpose()).amax();
    if asym > 1e-6 * scale {
        return Err(Error::Domain(format!("matrix is not symmetric (max asymmetry {asym:.3e})")));
    }
    Ok(())
}

/// Symmetric square root of a PSD matrix; negative eigenvalues are clipped
/// to zero.
pub fn matrix_sqrt_psd(m: &Tensor<f64>) -> Result<Tensor<f64>> {
    let s = m.shape();
    if s.len() != 2 || s[0] != s[1] {
        return Err(Error::shape("matrix_sqrt_psd", s, &[s[0], s[0]]));
    }
    let mat = DMatrix::from_row_slice(s[0], s[1], m.data());
    check_symmetric(&mat)?;
    let sym = (&mat + mat.transpose()) * 0.5;
    Tensor::new(s, row_major(&sqrt_psd(sym)))
}

/// `‖μ − μ̂‖² + Tr(Σ + Σ̂ − 2 (Σ^{1/2} Σ̂ Σ^{1/2})^{1/2})`, clipped at zero.
pub fn fid(real: &GaussianStats, gen: &GaussianStats) -> Result<f64> {
    if real.dim() != gen.dim() {
        return Err(Error::shape("fid", real.mean.shape(), gen.mean.shape()));
    }
    let mean_term: f64 = real
        .mean
        .data()
        .iter()
        .zip(gen.mean.data())
        .map(|(a, b)| (a - b).powi(2))
        .sum();
    let (s1, s2) = (real.cov_matrix(), gen.cov_matrix());
    check_symmetric(&s1)?;
    check_symmetric(&s2)?;
    let r1 = sqrt_psd((&s1 + s1.transpose()) * 0.5);
    let inner = &r1 * &s2 * &r1;
    let cross = sqrt_psd((&inner + inner.transpose()) * 0.5);
    let v = mean_term + s1.trace() + s2.trace() - 2.0 * cross.trace();
    if v < 0.0 {
        if v < -1e-6 {
            log::warn!("FID evaluated to {v:.3e}; clipping to 0");
        }
        return Ok(0.0);
    }
    Ok(v)
}

/// Number of pairs drawn by default: `min(1000, n(n−1)/2)`.
pub fn default_pair_count(n: usize) -> usize {
    (n * n.saturating_sub(1) / 2).min(1000)
}

fn pair_from_index(mut idx: usize, n: usize) -> (usize, usize) {
    for i in 0..n {
        let row = n - 1 - i;
        if idx < row {
            return (i, i + 1 + idx);
        }
        idx -= row;
    }
    unreachable!("pair index out of range")
}

/// Mean over `num_pairs` distinct random pairs of the frame- and
/// joint-averaged Euclidean distance between the two members.
pub fn diversity(sequences: &[MotionSequence], num_pairs: usize, rng: &mut impl Rng) -> Result<f64> {
    let n = sequences.len();
    if n < 2 {
        return Err(Error::Domain(format!("diversity needs at least 2 sequences, got {n}")));
    }
    let total = n * (n - 1) / 2;
    if num_pairs == 0 || num_pairs > total {
        return Err(Error::Domain(format!(
            "pair count {num_pairs} must be in 1..={total} for {n} sequences"
        )));
    }
    let shape = sequences[0].frames().shape();
    if let Some(s) = sequences.iter().find(|s| s.frames().shape() != shape) {
        return Err(Error::shape("diversity", shape, s.frames().shape()));
    }
    let mut picks: Vec<usize> = index::sample(rng, total, num_pairs).into_vec();
    picks.sort_unstable();
    let mut s = 0.0;
    for p in picks {
        let (i, j) = pair_from_index(p, n);
        s += mpjpe(std::slice::from_ref(&sequences[i]), std::slice::from_ref(&sequences[j]))?;
    }
    Ok(s / num_pairs as f64)
}

/// Feature spaces for FID and diversity.
#[derive(Clone, Copy, Debug)]
pub enum FeatureMode<'a> {
    /// Per-joint mean (3), std (3) and mean speed (1): `7k` values.
    FlatPoseStatistics,
    /// Time-averaged posterior mean of a frozen encoder.
    PretrainedEncoder(Option<&'a ReactionMamba>),
}

pub fn feature_extract(seq: &MotionSequence, mode: FeatureMode<'_>) -> Result<Vec<f64>> {
    match mode {
        FeatureMode::FlatPoseStatistics => Ok(flat_features(seq)),
        FeatureMode::PretrainedEncoder(None) => {
            Err(Error::Usage("encoder feature mode needs a checkpoint".into()))
        }
        FeatureMode::PretrainedEncoder(Some(model)) => {
            let stats = model.encode(seq)?;
            let (t, dz) = (stats.mu.rows(), stats.mu.cols());
            let mut out = vec![0.0; dz];
            for r in 0..t {
                for (o, &v) in out.iter_mut().zip(stats.mu.row(r)) {
                    *o += v as f64 / t as f64;
                }
            }
            Ok(out)
        }
    }
}

fn flat_features(seq: &MotionSequence) -> Vec<f64> {
    let (t, k, d) = (seq.len(), seq.joint_count(), seq.pose_dim());
    let mut mean = vec![0.0; d];
    for r in 0..t {
        for (m, &v) in mean.iter_mut().zip(seq.frame(r)) {
            *m += v as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= t as f64);
    let mut var = vec![0.0; d];
    for r in 0..t {
        for ((s, &v), m) in var.iter_mut().zip(seq.frame(r)).zip(&mean) {
            *s += (v as f64 - m).powi(2);
        }
    }
    let std: Vec<f64> = var.iter().map(|s| (s / t as f64).sqrt()).collect();
    let mut speed = vec![0.0; k];
    if t > 1 {
        for r in 1..t {
            for (j, sp) in speed.iter_mut().enumerate() {
                let c = 3 * j..3 * j + 3;
                *sp += joint_dist(&seq.frame(r)[c.clone()], &seq.frame(r - 1)[c]);
            }
        }
        speed.iter_mut().for_each(|s| *s /= (t - 1) as f64);
    }
    let mut out = Vec::with_capacity(7 * k);
    for j in 0..k {
        out.extend_from_slice(&mean[3 * j..3 * j + 3]);
        out.extend_from_slice(&std[3 * j..3 * j + 3]);
        out.push(speed[j]);
    }
    out
}

/// Features of every sequence stacked as `[n, f]`.
pub fn feature_matrix(seqs: &[MotionSequence], mode: FeatureMode<'_>) -> Result<Tensor<f64>> {
    let rows: Vec<Vec<f64>> = seqs.iter().map(|s| feature_extract(s, mode)).collect::<Result<_>>()?;
    let f = rows.first().map_or(0, Vec::len);
    Tensor::new(&[rows.len(), f], rows.concat())
}

/// Full report of `pred` against `gt`, with FID in the flat feature space
/// and diversity over `num_pairs` pairs drawn from `rng` (the same pair
/// indices are used for both sets).
pub fn evaluate(
    pred: &[MotionSequence],
    gt: &[MotionSequence],
    num_pairs: usize,
    rng: &mut (impl Rng + Clone),
) -> Result<EvalReport> {
    check_sets("evaluate", pred, gt)?;
    let fr = fit_gaussian(&feature_matrix(gt, FeatureMode::FlatPoseStatistics)?)?;
    let fg = fit_gaussian(&feature_matrix(pred, FeatureMode::FlatPoseStatistics)?)?;
    let mut rng_gt = rng.clone();
    let div_gen = diversity(pred, num_pairs, rng)?;
    let div_gt = diversity(gt, num_pairs, &mut rng_gt)?;
    Ok(EvalReport {
        mpjpe: mpjpe(pred, gt)?,
        mpjve: mpjve(pred, gt)?,
        fid: fid(&fr, &fg)?,
        div_gen,
        div_gt,
        div_ratio: (div_gt > 0.0).then(|| div_gen / div_gt),
        sequence_count: pred.len(),
        frame_count: pred.iter().map(MotionSequence::len).sum(),
    })
}
