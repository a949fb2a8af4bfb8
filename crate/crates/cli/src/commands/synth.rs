use std::fs;
use std::path::PathBuf;

use clap::Args;
use reactionmamba_core::data::{save_dataset, synth_dataset, Dataset, Family, SynthConfig, MANIFEST_NAME};
use reactionmamba_core::{Error, Result};
use serde::{Deserialize, Serialize};

use super::check_empty_dir;
use crate::config::{self, require};
use crate::ConfigFlag;

#[derive(Args, Debug, Serialize)]
pub struct SynthArgs {
    /// Number of interaction pairs.
    #[arg(long)]
    pub pairs: Option<usize>,
    /// Frames per sequence.
    #[arg(long)]
    pub frames: Option<usize>,
    /// Joints per skeleton.
    #[arg(long)]
    pub joints: Option<usize>,
    /// mirror, lagged-follow or push-impulse.
    #[arg(long, value_parser = |s: &str| s.parse::<Family>())]
    pub family: Option<Family>,
    /// Standard deviation of Gaussian noise added to reactor coordinates.
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Fraction of pairs (taken from the end) assigned to the test split.
    #[arg(long)]
    pub test_fraction: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Replace an existing dataset in --out.
    #[arg(long)]
    #[serde(skip)]
    pub force: bool,
    #[command(flatten)]
    #[serde(skip)]
    pub config: ConfigFlag,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSettings {
    pub pairs: usize,
    pub frames: usize,
    pub joints: usize,
    pub family: Family,
    pub noise: f64,
    pub seed: u64,
    pub test_fraction: f64,
    pub out: Option<PathBuf>,
}

impl Default for SynthSettings {
    fn default() -> Self {
        SynthSettings {
            pairs: 2000,
            frames: 20,
            joints: 5,
            family: Family::LaggedFollow,
            noise: 0.0,
            seed: 42,
            test_fraction: 0.1,
            out: None,
        }
    }
}

impl SynthSettings {
    /// Number of pairs held out for testing.
    pub fn test_count(&self) -> usize {
        let n = (self.pairs as f64 * self.test_fraction).round() as usize;
        if self.test_fraction > 0.0 && self.pairs >= 2 {
            n.clamp(1, self.pairs - 1)
        } else {
            n.min(self.pairs)
        }
    }
}

pub fn run(args: &SynthArgs) -> Result<()> {
    let s: SynthSettings = config::resolve(args, args.config.config.as_deref())?;
    let out = require(&s.out, "--out")?;
    if !(0.0..1.0).contains(&s.test_fraction) {
        return Err(Error::Usage(format!("--test-fraction must be in [0, 1), got {}", s.test_fraction)));
    }
    if !(s.noise >= 0.0 && s.noise.is_finite()) {
        return Err(Error::Usage(format!("--noise must be finite and non-negative, got {}", s.noise)));
    }
    if !args.force {
        check_empty_dir(&out, "; pass --force to replace it")?;
    }
    let pairs = synth_dataset(&SynthConfig {
        n_pairs: s.pairs,
        frames: s.frames,
        joints: s.joints,
        family: s.family,
        noise: s.noise,
        seed: s.seed,
    })?;
    let n_train = s.pairs - s.test_count();
    let data = Dataset {
        train: pairs[..n_train].to_vec(),
        test: pairs[n_train..].to_vec(),
    };
    if args.force {
        // only what this command writes
        let pairs_dir = out.join("pairs");
        if pairs_dir.is_dir() {
            fs::remove_dir_all(&pairs_dir).map_err(|e| Error::io(&pairs_dir, e))?;
        }
        for name in [MANIFEST_NAME, config::ECHO_NAME] {
            let _ = fs::remove_file(out.join(name));
        }
    }
    config::create_dir(&out)?;
    let manifest = save_dataset(&out, &data)?;
    config::echo(&out, &s)?;
    println!("{}", manifest.display());
    Ok(())
}
