use std::path::PathBuf;

use clap::Args;
use reactionmamba_core::bench::{bench_inference, scaling_curve};
use reactionmamba_core::data::write_atomic;
use reactionmamba_core::model::{ReactionMamba, Variant};
use reactionmamba_core::trainer::load_checkpoint;
use reactionmamba_core::{Error, Result};
use serde::{Deserialize, Serialize};

use super::{parse_variant, ModelSize};
use crate::config::{self, require};
use crate::ConfigFlag;

#[derive(Args, Debug, Serialize)]
pub struct BenchArgs {
    /// Trained checkpoint; without it a freshly initialised model is timed.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Variant of the fresh model (with --checkpoint, overrides its backbone).
    #[arg(long, value_parser = parse_variant)]
    pub variant: Option<Variant>,
    /// Comma-separated sequence lengths.
    #[arg(long)]
    pub lengths: Option<String>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub warmup: Option<usize>,
    /// Sequences generated per trial.
    #[arg(long)]
    pub sequences: Option<usize>,
    #[arg(long)]
    pub joints: Option<usize>,
    #[arg(long, value_enum)]
    pub size: Option<ModelSize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    #[serde(skip)]
    pub config: ConfigFlag,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSettings {
    pub checkpoint: Option<PathBuf>,
    pub variant: Option<Variant>,
    pub lengths: String,
    pub trials: usize,
    pub warmup: usize,
    pub sequences: usize,
    pub joints: usize,
    pub size: ModelSize,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

impl Default for BenchSettings {
    fn default() -> Self {
        BenchSettings {
            checkpoint: None,
            variant: None,
            lengths: "256,512,1024,2048,4096".into(),
            trials: 3,
            warmup: 1,
            sequences: 1,
            joints: 5,
            size: ModelSize::Desk,
            seed: 0,
            out: None,
        }
    }
}

pub fn parse_lengths(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .ok()
                .filter(|&n| n > 0)
                .ok_or_else(|| Error::Usage(format!("bad length {p:?} in --lengths")))
        })
        .collect()
}

pub fn run(args: &BenchArgs) -> Result<()> {
    let s: BenchSettings = config::resolve(args, args.config.config.as_deref())?;
    let out = require(&s.out, "--out")?;
    let lengths = parse_lengths(&s.lengths)?;
    let model = match &s.checkpoint {
        Some(p) => {
            let ck = load_checkpoint(p)?;
            match s.variant {
                Some(v) if v != ck.model_config.variant => {
                    return Err(Error::Usage(format!(
                        "checkpoint holds {}, cannot time it as {v}",
                        ck.model_config.variant
                    )))
                }
                _ => ck.model()?,
            }
        }
        None => ReactionMamba::new(s.size.config(s.joints, s.variant.unwrap_or(Variant::S1), s.seed))?,
    };
    let report = match lengths.len() {
        0 => return Err(Error::Usage("--lengths is empty".into())),
        1 => bench_inference(&model, s.sequences, lengths[0], s.trials, s.warmup)?,
        _ if lengths.len() < 3 => return Err(Error::Usage("give one length or at least three".into())),
        _ => scaling_curve(&model, &lengths, s.sequences, s.trials, s.warmup)?,
    };
    config::create_dir(&out)?;
    config::echo(&out, &s)?;
    write_atomic(&out.join("timing.json"), report.to_json().as_bytes())?;
    write_atomic(&out.join("timing.md"), report.to_markdown().as_bytes())?;
    write_atomic(&out.join("timing.csv"), report.to_csv().as_bytes())?;
    print!("{}", report.to_markdown());
    Ok(())
}
