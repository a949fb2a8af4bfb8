use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::Args;
use reactionmamba_core::data::InteractionPair;
use reactionmamba_core::model::Variant;
use reactionmamba_core::trainer::{StepLog, TrainConfig, Trainer};
use reactionmamba_core::{Error, Result};
use serde::{Deserialize, Serialize};

use super::{open_dataset, parse_variant, ModelSize};
use crate::config::{self, require};
use crate::ConfigFlag;

pub const LOG_NAME: &str = "train_log.jsonl";

#[derive(Args, Debug, Serialize)]
pub struct TrainArgs {
    /// Dataset directory or manifest.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// S1..S5.
    #[arg(long, value_parser = parse_variant)]
    pub variant: Option<Variant>,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Peak learning rate of the cosine schedule; the floor is a hundredth of it.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, value_enum)]
    pub size: Option<ModelSize>,
    /// Checkpoint interval in steps (0: final checkpoint only).
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    /// Global gradient-norm cap (off unless given).
    #[arg(long)]
    pub grad_clip: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    #[serde(skip)]
    pub config: ConfigFlag,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub data: Option<PathBuf>,
    pub variant: Variant,
    pub steps: u64,
    pub batch: usize,
    pub seed: u64,
    pub lr: f64,
    pub size: ModelSize,
    pub checkpoint_every: u64,
    pub grad_clip: Option<f64>,
    pub out: Option<PathBuf>,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            data: None,
            variant: Variant::S1,
            steps: 5000,
            batch: 16,
            seed: 42,
            lr: 1e-4,
            size: ModelSize::Desk,
            checkpoint_every: 1000,
            grad_clip: None,
            out: None,
        }
    }
}

impl TrainSettings {
    pub fn train_config(&self, joints: usize) -> TrainConfig {
        let model = self.size.config(joints, self.variant, self.seed);
        let mut cfg = TrainConfig::new(model, self.steps).with_lr(self.lr);
        cfg.batch_size = self.batch;
        cfg.seed = self.seed;
        cfg.checkpoint_every = self.checkpoint_every;
        cfg.grad_clip = self.grad_clip;
        cfg
    }
}

pub fn training_split(data: &Path) -> Result<Vec<InteractionPair>> {
    let ds = open_dataset(data)?;
    if ds.train.is_empty() {
        return Err(Error::Usage(format!("dataset {} has no train split", data.display())));
    }
    Ok(ds.train)
}

/// Trains into `out` (config echo, log, checkpoints) and returns the trainer.
pub fn train_into(s: &TrainSettings, train: &[InteractionPair], out: &Path) -> Result<(Trainer, Vec<StepLog>)> {
    let cfg = s.train_config(train[0].actor.joint_count());
    cfg.validate()?;
    let mut trainer = Trainer::new(cfg, train)?;
    config::create_dir(out)?;
    config::echo(out, s)?;
    let log_path = out.join(LOG_NAME);
    let file = File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let history = trainer.run(Some(out), &mut BufWriter::new(file))?;
    Ok((trainer, history))
}

pub fn run(args: &TrainArgs) -> Result<()> {
    let s: TrainSettings = config::resolve(args, args.config.config.as_deref())?;
    let data = require(&s.data, "--data")?;
    let out = require(&s.out, "--out")?;
    let train = training_split(&data)?;
    let (trainer, history) = train_into(&s, &train, &out)?;
    if let Some(last) = history.last() {
        println!(
            "step {} total {:.6} recon {:.6} kl {:.6} react {:.6}",
            last.step, last.total, last.recon, last.kl, last.react
        );
    }
    println!("{}", out.join("latest.tar").display());
    log::info!("trained {} steps", trainer.step_count());
    Ok(())
}
