use std::path::PathBuf;

use clap::Args;
use reactionmamba_core::data::{load_motion, save_motion};
use reactionmamba_core::model::MotionSequence;
use reactionmamba_core::trainer::load_checkpoint;
use reactionmamba_core::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::config::{self, require};
use crate::ConfigFlag;

pub const OUTPUT_NAME: &str = "reaction.json";

#[derive(Args, Debug, Serialize)]
pub struct GenerateArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Actor motion file.
    #[arg(long)]
    pub actor: Option<PathBuf>,
    /// Initial reactor pose: a frame index into --reference (or the actor
    /// when no reference is given), or a motion file whose first frame is used.
    #[arg(long)]
    pub init_pose: Option<String>,
    /// Motion file that --init-pose indexes into, usually the ground-truth reactor.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Generate this many frames by chaining windows over the actor motion.
    #[arg(long)]
    pub long_frames: Option<usize>,
    /// Window length for chained generation.
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    #[serde(skip)]
    pub config: ConfigFlag,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateSettings {
    pub checkpoint: Option<PathBuf>,
    pub actor: Option<PathBuf>,
    pub init_pose: String,
    pub reference: Option<PathBuf>,
    pub seed: u64,
    pub long_frames: Option<usize>,
    pub window: usize,
    pub out: Option<PathBuf>,
}

impl Default for GenerateSettings {
    fn default() -> Self {
        GenerateSettings {
            checkpoint: None,
            actor: None,
            init_pose: "0".into(),
            reference: None,
            seed: 0,
            long_frames: None,
            window: 20,
            out: None,
        }
    }
}

fn initial_pose(s: &GenerateSettings, actor: &MotionSequence) -> Result<Vec<f32>> {
    if let Ok(index) = s.init_pose.trim().parse::<usize>() {
        let source = match &s.reference {
            Some(p) => load_motion(p)?,
            None => actor.clone(),
        };
        if index >= source.len() {
            return Err(Error::Usage(format!(
                "--init-pose {index} is past the last frame ({} frames)",
                source.len()
            )));
        }
        return Ok(source.frame(index).to_vec());
    }
    Ok(load_motion(&s.init_pose)?.frame(0).to_vec())
}

pub fn run(args: &GenerateArgs) -> Result<()> {
    let s: GenerateSettings = config::resolve(args, args.config.config.as_deref())?;
    let ck = load_checkpoint(require(&s.checkpoint, "--checkpoint")?)?;
    let actor = load_motion(require(&s.actor, "--actor")?)?;
    let out = require(&s.out, "--out")?;
    let model = ck.model()?;
    if actor.joint_count() != model.config().joints {
        return Err(Error::Usage(format!(
            "actor has {} joints, checkpoint expects {}",
            actor.joint_count(),
            model.config().joints
        )));
    }
    let y1 = initial_pose(&s, &actor)?;
    if y1.len() != actor.pose_dim() {
        return Err(Error::Usage(format!("initial pose has {} values, expected {}", y1.len(), actor.pose_dim())));
    }
    let x = ck.norm.normalize_seq(&actor)?;
    let y1 = ck.norm.normalize_frame(&y1);
    let generated = match s.long_frames {
        None => model.generate(&x, &y1, s.seed)?,
        Some(n) => {
            if n == 0 || n > x.len() {
                return Err(Error::Usage(format!(
                    "--long-frames {n} needs an actor motion of at least that many frames (got {})",
                    x.len()
                )));
            }
            if s.window > n {
                return Err(Error::Usage(format!("actor segment ({n} frames) is shorter than --window {}", s.window)));
            }
            model.generate_long(&x.slice(0, n)?, &y1, s.window, s.seed)?
        }
    };
    let reaction = ck.norm.denormalize_seq(&generated)?;
    reaction.frames().check_finite("generated reaction")?;
    config::create_dir(&out)?;
    config::echo(&out, &s)?;
    let path = out.join(OUTPUT_NAME);
    save_motion(&path, &reaction)?;
    println!("{}", path.display());
    Ok(())
}
