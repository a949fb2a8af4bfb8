//! Adam with cosine annealing, JSON-lines logging and resumable
//! checkpoints.

mod adam;
mod checkpoint;

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, clip_global_norm, cosine_lr, AdamHyper, AdamState};
pub use checkpoint::{
    checkpoint_bytes, checkpoint_from_bytes, load_checkpoint, save_checkpoint, Checkpoint, RngState,
    CHECKPOINT_VERSION,
};

use crate::data::{normalize, InteractionPair, NormStats};
use crate::error::{Error, Result};
use crate::model::{sample_standard_normal, ModelConfig, ReactionMamba};
use crate::numerics::{Graph, Tensor};
use crate::objectives::{total_loss_graph, LossReport, LossWeights};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub base_lr: f64,
    pub lr_min: f64,
    pub total_steps: u64,
    pub batch_size: usize,
    pub weights: LossWeights,
    pub seed: u64,
    /// Write a checkpoint every this many steps (0: only at the end).
    pub checkpoint_every: u64,
    /// Global gradient-norm cap; off when absent.
    pub grad_clip: Option<f64>,
    pub adam: AdamHyper,
}

impl TrainConfig {
    pub fn new(model: ModelConfig, total_steps: u64) -> Self {
        let base_lr = 1e-4;
        TrainConfig {
            seed: model.seed,
            model,
            base_lr,
            lr_min: base_lr / 100.0,
            total_steps,
            batch_size: 16,
            weights: LossWeights::default(),
            checkpoint_every: 0,
            grad_clip: None,
            adam: AdamHyper::default(),
        }
    }

    /// Sets the base rate and keeps the floor at a hundredth of it.
    pub fn with_lr(mut self, base_lr: f64) -> Self {
        self.base_lr = base_lr;
        self.lr_min = base_lr / 100.0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.weights.validate()?;
        if !(self.lr_min > 0.0 && self.lr_min <= self.base_lr) {
            return Err(Error::Config(format!(
                "need 0 < lr_min <= base_lr, got {} and {}",
                self.lr_min, self.base_lr
            )));
        }
        if self.total_steps == 0 || self.batch_size == 0 {
            return Err(Error::Config("total_steps and batch_size must be positive".into()));
        }
        if matches!(self.grad_clip, Some(c) if !(c > 0.0)) {
            return Err(Error::Config("grad_clip must be positive".into()));
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: u64,
    pub lr: f64,
    pub recon: f64,
    pub kl: f64,
    pub react: f64,
    pub total: f64,
}

impl StepLog {
    fn new(step: u64, lr: f64, r: LossReport) -> Self {
        StepLog {
            step,
            lr,
            recon: r.recon,
            kl: r.kl,
            react: r.react,
            total: r.total,
        }
    }
}

/// Batched tensors for one step: `actor`/`reactor` `[B, T, d]`, `init` `[B, d]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub actor: Tensor<f32>,
    pub reactor: Tensor<f32>,
    pub init: Tensor<f32>,
}

impl Batch {
    /// Stacks already-normalized pairs of equal length.
    pub fn from_pairs(pairs: &[&InteractionPair]) -> Result<Self> {
        let first = pairs.first().ok_or_else(|| Error::Usage("empty batch".into()))?;
        let (t, d) = (first.len(), first.actor.pose_dim());
        let mut actor = Vec::with_capacity(pairs.len() * t * d);
        let mut reactor = Vec::with_capacity(pairs.len() * t * d);
        let mut init = Vec::with_capacity(pairs.len() * d);
        for p in pairs {
            if p.len() != t || p.actor.pose_dim() != d {
                return Err(Error::Usage(format!(
                    "batch mixes shapes [{t}, {d}] and [{}, {}]; window the data first",
                    p.len(),
                    p.actor.pose_dim()
                )));
            }
            actor.extend_from_slice(p.actor.frames().data());
            reactor.extend_from_slice(p.reactor.frames().data());
            init.extend_from_slice(p.reactor.frame(0));
        }
        let b = pairs.len();
        Ok(Batch {
            actor: Tensor::new(&[b, t, d], actor)?,
            reactor: Tensor::new(&[b, t, d], reactor)?,
            init: Tensor::new(&[b, d], init)?,
        })
    }
}

/// Owns the model, optimizer state, RNG stream and normalized training data.
pub struct Trainer {
    config: TrainConfig,
    model: ReactionMamba,
    adam: AdamState,
    rng: ChaCha8Rng,
    norm: NormStats,
    data: Vec<InteractionPair>,
}

impl Trainer {
    /// Fresh run: fits normalization on `train` (raw coordinates).
    pub fn new(config: TrainConfig, train: &[InteractionPair]) -> Result<Self> {
        config.validate()?;
        let (data, norm) = normalize(train, None)?;
        Self::check_data(&config, &data)?;
        let model = ReactionMamba::new(config.model.clone())?;
        let adam = AdamState::new(model.params());
        Ok(Trainer {
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            config,
            model,
            adam,
            norm,
            data,
        })
    }

    /// Continues from `ck`, reusing its normalization statistics.
    pub fn resume(ck: Checkpoint, train: &[InteractionPair]) -> Result<Self> {
        ck.train_config.validate()?;
        let (data, _) = normalize(train, Some(&ck.norm))?;
        Self::check_data(&ck.train_config, &data)?;
        let model = ck.model()?;
        let mut rng = ChaCha8Rng::seed_from_u64(ck.rng.seed);
        rng.set_word_pos(ck.rng.word_pos);
        Ok(Trainer {
            config: ck.train_config,
            model,
            adam: ck.adam,
            rng,
            norm: ck.norm,
            data,
        })
    }

    fn check_data(config: &TrainConfig, data: &[InteractionPair]) -> Result<()> {
        if data.is_empty() {
            return Err(Error::Usage("training split is empty".into()));
        }
        if let Some(p) = data.iter().find(|p| p.actor.joint_count() != config.model.joints) {
            return Err(Error::Usage(format!(
                "pair {} has {} joints, model expects {}",
                p.pair_id,
                p.actor.joint_count(),
                config.model.joints
            )));
        }
        let t = data[0].len();
        if let Some(p) = data.iter().find(|p| p.len() != t) {
            return Err(Error::Usage(format!(
                "training pairs must share one length ({} vs {t} frames); use fixed windows",
                p.len()
            )));
        }
        Ok(())
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn model(&self) -> &ReactionMamba {
        &self.model
    }

    pub fn norm(&self) -> &NormStats {
        &self.norm
    }

    /// Steps completed so far.
    pub fn step_count(&self) -> u64 {
        self.adam.step
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            model_config: self.config.model.clone(),
            train_config: self.config.clone(),
            params: self.model.params().clone(),
            adam: self.adam.clone(),
            norm: self.norm.clone(),
            rng: RngState {
                seed: self.config.seed,
                word_pos: self.rng.get_word_pos(),
            },
        }
    }

    fn sample_batch(&mut self) -> Result<Batch> {
        let n = self.data.len();
        let idx: Vec<usize> = (0..self.config.batch_size).map(|_| self.rng.random_range(0..n)).collect();
        let pairs: Vec<&InteractionPair> = idx.iter().map(|&i| &self.data[i]).collect();
        Batch::from_pairs(&pairs)
    }

    /// Forward, backward and Adam update on `batch`.
    pub fn step_on(&mut self, batch: &Batch) -> Result<StepLog> {
        let s = self.adam.step;
        if s >= self.config.total_steps {
            return Err(Error::Usage(format!("schedule of {} steps already finished", self.config.total_steps)));
        }
        let lr = cosine_lr(s, self.config.total_steps, self.config.base_lr, self.config.lr_min)?;
        let shape = batch.reactor.shape();
        let eps = sample_standard_normal::<f32>(&[shape[0], shape[1], self.config.model.d_z], &mut self.rng);
        let mut g = Graph::new();
        let y = g.constant(batch.reactor.clone())?;
        let x = g.constant(batch.actor.clone())?;
        let y1 = g.constant(batch.init.clone())?;
        let (yhat, mu, logvar) = self.model.reconstruct_graph(&mut g, y, x, y1, &eps)?;
        let losses = total_loss_graph(&mut g, yhat, mu, logvar, &batch.reactor, &batch.actor, &self.config.weights)?;
        let report = losses.report(&g, &self.config.weights)?;
        let mut grads = g.backward(losses.total)?.into_by_name();
        if let Some(c) = self.config.grad_clip {
            clip_global_norm(&mut grads, c);
        }
        adam_step(self.model.params_mut(), &grads, &mut self.adam, lr, &self.config.adam)?;
        Ok(StepLog::new(self.adam.step, lr, report))
    }

    /// One step on a freshly sampled batch.
    pub fn step(&mut self) -> Result<StepLog> {
        let b = self.sample_batch()?;
        self.step_on(&b)
    }

    /// Runs the remaining schedule. Each step is written as one JSON line to
    /// `log`; checkpoints go to `out_dir` every `checkpoint_every` steps and at
    /// the end (`ckpt_<step>.tar` plus `latest.tar`).
    pub fn run(&mut self, out_dir: Option<&Path>, log: &mut dyn Write) -> Result<Vec<StepLog>> {
        let mut history = Vec::new();
        while self.adam.step < self.config.total_steps {
            let entry = self.step()?;
            let line = serde_json::to_string(&entry).expect("log serialization is infallible");
            writeln!(log, "{line}").map_err(|e| Error::io("<training log>", e))?;
            history.push(entry);
            let every = self.config.checkpoint_every;
            let done = self.adam.step == self.config.total_steps;
            if let Some(dir) = out_dir {
                if done || (every > 0 && self.adam.step % every == 0) {
                    self.save_to(dir)?;
                }
            }
        }
        log.flush().map_err(|e| Error::io("<training log>", e))?;
        Ok(history)
    }

    /// Writes `ckpt_<step>.tar` and refreshes `latest.tar`.
    pub fn save_to(&self, dir: &Path) -> Result<PathBuf> {
        let ck = self.checkpoint();
        let bytes = checkpoint_bytes(&ck)?;
        let path = dir.join(format!("ckpt_{:06}.tar", self.adam.step));
        crate::data::write_atomic(&path, &bytes)?;
        crate::data::write_atomic(&dir.join("latest.tar"), &bytes)?;
        Ok(path)
    }
}
