//! Python bindings: motion files, synthetic data, models, training, metrics.
//!
//! Coordinates cross the boundary as nested lists of floats (`[T][3k]`).
//! Errors map onto built-in exceptions: usage and shape problems raise
//! `ValueError`, unreadable or malformed files raise `OSError`, and
//! numeric failures raise `ArithmeticError`.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyArithmeticError, PyOSError, PyValueError};
use pyo3::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use reactionmamba_core::data::{self, Family, NormStats, SynthConfig};
use reactionmamba_core::metrics::{self, default_pair_count, EvalReport};
use reactionmamba_core::model::{self, ModelConfig, Variant};
use reactionmamba_core::ssm::{ssm_conv_apply, ssm_conv_kernel, ssm_scan_recurrent, SsmParams, StepSize};
use reactionmamba_core::trainer::{self, StepLog, TrainConfig};
use reactionmamba_core::{evaluation, Error};

fn py_err(e: Error) -> PyErr {
    let msg = e.to_string();
    match e {
        Error::Parse { .. } | Error::Io { .. } => PyOSError::new_err(msg),
        Error::Numeric(_) | Error::Domain(_) => PyArithmeticError::new_err(msg),
        _ => PyValueError::new_err(msg),
    }
}

trait OrPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for reactionmamba_core::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

/// One character's motion, `frames[t]` holding `3 * joint_count` coordinates.
#[pyclass(name = "MotionSequence", module = "reactionmamba", from_py_object)]
#[derive(Clone)]
pub struct PyMotion {
    inner: model::MotionSequence,
}

#[pymethods]
impl PyMotion {
    #[new]
    #[pyo3(signature = (frames, joint_count, fps = 20, skeleton_id = "unknown".to_string()))]
    fn new(frames: Vec<Vec<f32>>, joint_count: usize, fps: u32, skeleton_id: String) -> PyResult<Self> {
        let inner = model::MotionSequence::from_rows(&frames, joint_count, fps, skeleton_id).py()?;
        Ok(PyMotion { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyMotion {
            inner: data::load_motion(path).py()?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        data::save_motion(path, &self.inner).py()
    }

    fn frames(&self) -> Vec<Vec<f32>> {
        (0..self.inner.len()).map(|t| self.inner.frame(t).to_vec()).collect()
    }

    fn frame(&self, t: usize) -> PyResult<Vec<f32>> {
        if t >= self.inner.len() {
            return Err(PyValueError::new_err(format!("frame {t} out of range ({} frames)", self.inner.len())));
        }
        Ok(self.inner.frame(t).to_vec())
    }

    #[getter]
    fn joint_count(&self) -> usize {
        self.inner.joint_count()
    }

    #[getter]
    fn fps(&self) -> u32 {
        self.inner.fps
    }

    #[getter]
    fn skeleton_id(&self) -> String {
        self.inner.skeleton_id.clone()
    }

    fn frame_displacements(&self) -> Vec<f64> {
        self.inner.frame_displacements()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "MotionSequence(frames={}, joints={}, fps={})",
            self.inner.len(),
            self.inner.joint_count(),
            self.inner.fps
        )
    }
}

fn unwrap_motions(seqs: &[PyMotion]) -> Vec<model::MotionSequence> {
    seqs.iter().map(|m| m.inner.clone()).collect()
}

/// Actor/reactor pair.
#[pyclass(name = "InteractionPair", module = "reactionmamba", from_py_object)]
#[derive(Clone)]
pub struct PyPair {
    inner: data::InteractionPair,
}

#[pymethods]
impl PyPair {
    #[getter]
    fn actor(&self) -> PyMotion {
        PyMotion {
            inner: self.inner.actor.clone(),
        }
    }

    #[getter]
    fn reactor(&self) -> PyMotion {
        PyMotion {
            inner: self.inner.reactor.clone(),
        }
    }

    #[getter]
    fn pair_id(&self) -> String {
        self.inner.pair_id.clone()
    }

    #[getter]
    fn class_label(&self) -> Option<String> {
        self.inner.class_label.clone()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// Synthetic pairs; `family` is `mirror`, `lagged-follow` or `push-impulse`.
#[pyfunction]
#[pyo3(signature = (n_pairs, frames = 20, joints = 5, family = "lagged-follow", noise = 0.0, seed = 42))]
fn synth_dataset(n_pairs: usize, frames: usize, joints: usize, family: &str, noise: f64, seed: u64) -> PyResult<Vec<PyPair>> {
    let family: Family = family.parse().py()?;
    let pairs = data::synth_dataset(&SynthConfig {
        n_pairs,
        frames,
        joints,
        family,
        noise,
        seed,
    })
    .py()?;
    Ok(pairs.into_iter().map(|inner| PyPair { inner }).collect())
}

/// Returns `(train, test)` pair lists from a dataset directory or manifest.
#[pyfunction]
fn load_dataset(path: PathBuf) -> PyResult<(Vec<PyPair>, Vec<PyPair>)> {
    let ds = data::load_dataset(path).py()?;
    let wrap = |v: Vec<data::InteractionPair>| v.into_iter().map(|inner| PyPair { inner }).collect();
    Ok((wrap(ds.train), wrap(ds.test)))
}

/// A ReactionMamba model plus, when loaded from a checkpoint, the
/// normalization it was trained with. With normalization present,
/// `generate` takes and returns world coordinates.
#[pyclass(name = "ReactionMamba", module = "reactionmamba")]
pub struct PyModel {
    model: model::ReactionMamba,
    norm: Option<NormStats>,
}

fn model_config(joints: usize, variant: &str, size: &str, seed: u64) -> PyResult<ModelConfig> {
    let variant: Variant = variant.parse().py()?;
    let base = match size {
        "desk" => ModelConfig::desk(joints, variant),
        "full" => ModelConfig::full(joints, variant),
        other => return Err(PyValueError::new_err(format!("unknown size {other:?}, expected desk or full"))),
    };
    Ok(ModelConfig { seed, ..base })
}

impl PyModel {
    fn to_model_space(&self, m: &model::MotionSequence) -> PyResult<model::MotionSequence> {
        match &self.norm {
            Some(n) => n.normalize_seq(m).py(),
            None => Ok(m.clone()),
        }
    }

    fn from_model_space(&self, m: model::MotionSequence) -> PyResult<PyMotion> {
        let inner = match &self.norm {
            Some(n) => n.denormalize_seq(&m).py()?,
            None => m,
        };
        Ok(PyMotion { inner })
    }

    fn pose(&self, p: &[f32]) -> Vec<f32> {
        match &self.norm {
            Some(n) => n.normalize_frame(p),
            None => p.to_vec(),
        }
    }
}

#[pymethods]
impl PyModel {
    /// Freshly initialised model; `size` is `desk` or `full`.
    #[new]
    #[pyo3(signature = (joints, variant = "S1", size = "desk", seed = 0))]
    fn new(joints: usize, variant: &str, size: &str, seed: u64) -> PyResult<Self> {
        Ok(PyModel {
            model: model::ReactionMamba::new(model_config(joints, variant, size, seed)?).py()?,
            norm: None,
        })
    }

    #[staticmethod]
    fn from_checkpoint(path: PathBuf) -> PyResult<Self> {
        let ck = trainer::load_checkpoint(path).py()?;
        Ok(PyModel {
            model: ck.model().py()?,
            norm: Some(ck.norm),
        })
    }

    #[getter]
    fn variant(&self) -> String {
        self.model.config().variant.to_string()
    }

    #[getter]
    fn joints(&self) -> usize {
        self.model.config().joints
    }

    fn parameter_count(&self) -> usize {
        self.model.params().iter().map(|(_, t)| t.len()).sum()
    }

    fn config_json(&self) -> String {
        serde_json::to_string(self.model.config()).expect("config serializes")
    }

    /// Reaction to `actor` starting from `init_pose`, latent drawn from `seed`.
    #[pyo3(signature = (actor, init_pose, seed = 0))]
    fn generate(&self, actor: &PyMotion, init_pose: Vec<f32>, seed: u64) -> PyResult<PyMotion> {
        let x = self.to_model_space(&actor.inner)?;
        let out = self.model.generate(&x, &self.pose(&init_pose), seed).py()?;
        self.from_model_space(out)
    }

    /// Chained generation over `window`-frame chunks of `actor`.
    #[pyo3(signature = (actor, init_pose, window = 20, seed = 0))]
    fn generate_long(&self, actor: &PyMotion, init_pose: Vec<f32>, window: usize, seed: u64) -> PyResult<PyMotion> {
        let x = self.to_model_space(&actor.inner)?;
        let out = self.model.generate_long(&x, &self.pose(&init_pose), window, seed).py()?;
        self.from_model_space(out)
    }

    /// Held-out metrics for the model and the copy-actor baseline.
    #[pyo3(signature = (pairs, seed = 0, num_pairs = None))]
    fn evaluate(&self, pairs: Vec<PyPair>, seed: u64, num_pairs: Option<usize>) -> PyResult<(BTreeMap<String, f64>, BTreeMap<String, f64>)> {
        let norm = self
            .norm
            .as_ref()
            .ok_or_else(|| PyValueError::new_err("evaluate needs a model loaded from a checkpoint"))?;
        let pairs: Vec<data::InteractionPair> = pairs.into_iter().map(|p| p.inner).collect();
        let out = evaluation::evaluate_model(&self.model, norm, &pairs, seed, num_pairs).py()?;
        Ok((report_dict(&out.model), report_dict(&out.copy_actor)))
    }

    fn __repr__(&self) -> String {
        let c = self.model.config();
        format!("ReactionMamba(variant={}, joints={}, d_model={}, layers={})", c.variant, c.joints, c.d_model, c.n_layers)
    }
}

fn log_dict(l: &StepLog) -> BTreeMap<String, f64> {
    BTreeMap::from([
        ("step".to_string(), l.step as f64),
        ("lr".to_string(), l.lr),
        ("recon".to_string(), l.recon),
        ("kl".to_string(), l.kl),
        ("react".to_string(), l.react),
        ("total".to_string(), l.total),
    ])
}

/// Metric report as a dict; `div_ratio` is NaN when the ground truth has no spread.
fn report_dict(r: &EvalReport) -> BTreeMap<String, f64> {
    BTreeMap::from([
        ("mpjpe".to_string(), r.mpjpe),
        ("mpjve".to_string(), r.mpjve),
        ("fid".to_string(), r.fid),
        ("div_gen".to_string(), r.div_gen),
        ("div_gt".to_string(), r.div_gt),
        ("div_ratio".to_string(), r.div_ratio.unwrap_or(f64::NAN)),
        ("sequence_count".to_string(), r.sequence_count as f64),
        ("frame_count".to_string(), r.frame_count as f64),
    ])
}

/// Adam training with a cosine schedule on a list of raw pairs.
#[pyclass(name = "Trainer", module = "reactionmamba")]
pub struct PyTrainer {
    inner: trainer::Trainer,
}

#[pymethods]
impl PyTrainer {
    #[new]
    #[pyo3(signature = (pairs, variant = "S1", steps = 5000, batch_size = 16, lr = 1e-4, seed = 42, size = "desk"))]
    fn new(pairs: Vec<PyPair>, variant: &str, steps: u64, batch_size: usize, lr: f64, seed: u64, size: &str) -> PyResult<Self> {
        let pairs: Vec<data::InteractionPair> = pairs.into_iter().map(|p| p.inner).collect();
        let joints = pairs
            .first()
            .ok_or_else(|| PyValueError::new_err("training needs at least one pair"))?
            .actor
            .joint_count();
        let mut cfg = TrainConfig::new(model_config(joints, variant, size, seed)?, steps).with_lr(lr);
        cfg.batch_size = batch_size;
        cfg.seed = seed;
        Ok(PyTrainer {
            inner: trainer::Trainer::new(cfg, &pairs).py()?,
        })
    }

    /// One optimisation step; returns its loss components.
    fn step(&mut self) -> PyResult<BTreeMap<String, f64>> {
        Ok(log_dict(&self.inner.step().py()?))
    }

    /// Runs the remaining schedule, writing checkpoints to `out_dir` if given.
    #[pyo3(signature = (out_dir = None))]
    fn run(&mut self, out_dir: Option<PathBuf>) -> PyResult<Vec<BTreeMap<String, f64>>> {
        if let Some(d) = &out_dir {
            std::fs::create_dir_all(d).map_err(|e| py_err(Error::io(d, e)))?;
        }
        let logs = self.inner.run(out_dir.as_deref(), &mut std::io::sink()).py()?;
        Ok(logs.iter().map(log_dict).collect())
    }

    /// Writes `ckpt_<step>.tar` and `latest.tar` under `dir`; returns the first path.
    fn save(&self, dir: PathBuf) -> PyResult<PathBuf> {
        std::fs::create_dir_all(&dir).map_err(|e| py_err(Error::io(&dir, e)))?;
        self.inner.save_to(&dir).py()
    }

    #[getter]
    fn step_count(&self) -> u64 {
        self.inner.step_count()
    }

    /// Snapshot of the current weights with the training normalization.
    fn model(&self) -> PyModel {
        PyModel {
            model: self.inner.model().clone(),
            norm: Some(self.inner.norm().clone()),
        }
    }
}

#[pyfunction]
fn mpjpe(pred: Vec<PyMotion>, gt: Vec<PyMotion>) -> PyResult<f64> {
    metrics::mpjpe(&unwrap_motions(&pred), &unwrap_motions(&gt)).py()
}

#[pyfunction]
fn mpjve(pred: Vec<PyMotion>, gt: Vec<PyMotion>) -> PyResult<f64> {
    metrics::mpjve(&unwrap_motions(&pred), &unwrap_motions(&gt)).py()
}

/// Mean distance over `num_pairs` sampled sequence pairs (default min(1000, all)).
#[pyfunction]
#[pyo3(signature = (sequences, num_pairs = None, seed = 0))]
fn diversity(sequences: Vec<PyMotion>, num_pairs: Option<usize>, seed: u64) -> PyResult<f64> {
    let seqs = unwrap_motions(&sequences);
    let n = num_pairs.unwrap_or_else(|| default_pair_count(seqs.len()));
    metrics::diversity(&seqs, n, &mut ChaCha8Rng::seed_from_u64(seed)).py()
}

/// MPJPE, MPJVE, FID and diversity of `pred` against `gt`.
#[pyfunction]
#[pyo3(signature = (pred, gt, num_pairs = None, seed = 0))]
fn evaluate(pred: Vec<PyMotion>, gt: Vec<PyMotion>, num_pairs: Option<usize>, seed: u64) -> PyResult<BTreeMap<String, f64>> {
    let n = num_pairs.unwrap_or_else(|| default_pair_count(gt.len()));
    let r = metrics::evaluate(&unwrap_motions(&pred), &unwrap_motions(&gt), n, &mut ChaCha8Rng::seed_from_u64(seed)).py()?;
    Ok(report_dict(&r))
}

fn lti(a: Vec<f64>, b: Vec<f64>, c: Vec<f64>, delta: f64) -> PyResult<reactionmamba_core::ssm::DiscreteSsm<f64>> {
    SsmParams { a, b, c, delta: StepSize::Fixed(delta) }.discretize().py()
}

/// Recurrent scan of a diagonal LTI system (ZOH-discretized with step `delta`).
#[pyfunction]
fn ssm_scan(u: Vec<f64>, a: Vec<f64>, b: Vec<f64>, c: Vec<f64>, delta: f64) -> PyResult<Vec<f64>> {
    ssm_scan_recurrent(&u, &lti(a, b, c, delta)?).py()
}

/// The same system applied as a causal convolution with its full-length kernel.
#[pyfunction]
fn ssm_conv(u: Vec<f64>, a: Vec<f64>, b: Vec<f64>, c: Vec<f64>, delta: f64) -> PyResult<Vec<f64>> {
    let k = ssm_conv_kernel(&lti(a, b, c, delta)?, u.len()).py()?;
    ssm_conv_apply(&u, &k).py()
}

#[pymodule]
fn reactionmamba(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMotion>()?;
    m.add_class::<PyPair>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyTrainer>()?;
    m.add_function(wrap_pyfunction!(synth_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(load_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(mpjpe, m)?)?;
    m.add_function(wrap_pyfunction!(mpjve, m)?)?;
    m.add_function(wrap_pyfunction!(diversity, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(ssm_scan, m)?)?;
    m.add_function(wrap_pyfunction!(ssm_conv, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
