use std::path::PathBuf;

use clap::Args;
use reactionmamba_core::data::{load_motion, write_atomic};
use reactionmamba_core::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::config::{self, require};
use crate::plot::{render_svg, PlotMode};
use crate::ConfigFlag;

#[derive(Args, Debug, Serialize)]
pub struct PlotArgs {
    /// Motion files, one legend entry each (e.g. actor, ground truth, generated).
    #[arg(long, num_args = 1..)]
    pub motion: Option<Vec<PathBuf>>,
    #[arg(long, value_enum)]
    pub mode: Option<PlotMode>,
    /// Output SVG path; the resolved settings go next to it as `<stem>.config.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    #[serde(skip)]
    pub config: ConfigFlag,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlotSettings {
    pub motion: Vec<PathBuf>,
    pub mode: PlotMode,
    pub out: Option<PathBuf>,
}

impl Default for PlotSettings {
    fn default() -> Self {
        PlotSettings {
            motion: Vec::new(),
            mode: PlotMode::Trajectory,
            out: None,
        }
    }
}

pub fn run(args: &PlotArgs) -> Result<()> {
    let s: PlotSettings = config::resolve(args, args.config.config.as_deref())?;
    let out = require(&s.out, "--out")?;
    if s.motion.is_empty() {
        return Err(Error::Usage("--motion needs at least one file".into()));
    }
    let series = s
        .motion
        .iter()
        .map(|p| Ok((p.display().to_string(), load_motion(p)?)))
        .collect::<Result<Vec<_>>>()?;
    let svg = render_svg(&series, s.mode);
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        config::create_dir(dir)?;
    }
    write_atomic(&out, svg.as_bytes())?;
    let stem = out.file_stem().map_or("plot".into(), |s| s.to_string_lossy().into_owned());
    config::write_json(&out.with_file_name(format!("{stem}.config.json")), &s)?;
    println!("{}", out.display());
    Ok(())
}
