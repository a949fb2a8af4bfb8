pub mod ablate;
pub mod bench;
pub mod evaluate;
pub mod generate;
pub mod plot;
pub mod synth;
pub mod train;

use std::path::Path;

use reactionmamba_core::data::{load_dataset, Dataset, MANIFEST_NAME};
use reactionmamba_core::model::{ModelConfig, Variant};
use reactionmamba_core::{Error, Result};
use serde::{Deserialize, Serialize};

/// Model dimension preset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ModelSize {
    /// d_model 64, d_z 32, 2 layers: trains in minutes on one core.
    #[default]
    Desk,
    /// d_model 256, d_z 128, 6 layers.
    Full,
}

impl ModelSize {
    pub fn config(self, joints: usize, variant: Variant, seed: u64) -> ModelConfig {
        let base = match self {
            ModelSize::Desk => ModelConfig::desk(joints, variant),
            ModelSize::Full => ModelConfig::full(joints, variant),
        };
        ModelConfig { seed, ..base }
    }
}

pub fn parse_variant(s: &str) -> Result<Variant> {
    s.parse()
}

/// Comma-separated variant list, order preserved, duplicates rejected.
pub fn parse_variants(list: &str) -> Result<Vec<Variant>> {
    let mut out = Vec::new();
    for part in list.split(',').filter(|p| !p.trim().is_empty()) {
        let v: Variant = part.parse()?;
        if out.contains(&v) {
            return Err(Error::Usage(format!("variant {v} listed twice")));
        }
        out.push(v);
    }
    if out.is_empty() {
        return Err(Error::Usage("no variants given".into()));
    }
    Ok(out)
}

/// Loads a dataset; a path with no manifest is a usage error, a manifest
/// that fails to parse is a data error.
pub fn open_dataset(path: &Path) -> Result<Dataset> {
    let manifest = if path.is_dir() { path.join(MANIFEST_NAME) } else { path.to_path_buf() };
    if !manifest.is_file() {
        return Err(Error::Usage(format!("no dataset manifest at {}", manifest.display())));
    }
    load_dataset(&manifest)
}

/// Fails when `dir` exists and has entries.
pub fn check_empty_dir(dir: &Path, hint: &str) -> Result<()> {
    if let Ok(mut entries) = std::fs::read_dir(dir) {
        if entries.next().is_some() {
            return Err(Error::Usage(format!("output directory {} is not empty{hint}", dir.display())));
        }
    }
    if dir.exists() && !dir.is_dir() {
        return Err(Error::Usage(format!("{} exists and is not a directory", dir.display())));
    }
    Ok(())
}
