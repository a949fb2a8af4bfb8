use std::path::{Path, PathBuf};

use clap::Args;
use reactionmamba_core::data::{write_atomic, InteractionPair, NormStats, Split};
use reactionmamba_core::evaluation::{evaluate_model, EvalOutcome};
use reactionmamba_core::metrics::EvalReport;
use reactionmamba_core::model::ReactionMamba;
use reactionmamba_core::trainer::load_checkpoint;
use reactionmamba_core::{Error, Result};
use serde::{Deserialize, Serialize};

use super::open_dataset;
use crate::config::{self, require};
use crate::ConfigFlag;

pub const REPORT_NAME: &str = "eval_report.json";
pub const BASELINE_NAME: &str = "copy_actor_report.json";
pub const TABLE_NAME: &str = "eval_table.md";

#[derive(Args, Debug, Serialize)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Dataset directory or manifest.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// train or test.
    #[arg(long, value_parser = parse_split)]
    pub split: Option<Split>,
    /// Number of sequence pairs sampled for diversity (default min(1000, all pairs)).
    #[arg(long)]
    pub pairs_sample: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    #[serde(skip)]
    pub config: ConfigFlag,
}

fn parse_split(s: &str) -> Result<Split> {
    match s {
        "train" => Ok(Split::Train),
        "test" => Ok(Split::Test),
        other => Err(Error::Usage(format!("unknown split {other:?}, expected train or test"))),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSettings {
    pub checkpoint: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub split: Split,
    pub pairs_sample: Option<usize>,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

impl Default for EvaluateSettings {
    fn default() -> Self {
        EvaluateSettings {
            checkpoint: None,
            data: None,
            split: Split::Test,
            pairs_sample: None,
            seed: 0,
            out: None,
        }
    }
}

pub fn table(rows: &[(&str, &EvalReport)]) -> String {
    let mut s = format!("{}\n", EvalReport::MARKDOWN_HEADER);
    for (label, r) in rows {
        s.push_str(&r.markdown_row(label));
        s.push('\n');
    }
    s
}

/// Scores `model` and writes the report, the baseline report and the table.
pub fn evaluate_into(
    model: &ReactionMamba,
    norm: &NormStats,
    pairs: &[InteractionPair],
    s: &EvaluateSettings,
    label: &str,
    out: &Path,
) -> Result<EvalOutcome> {
    let outcome = evaluate_model(model, norm, pairs, s.seed, s.pairs_sample)?;
    config::write_json(&out.join(REPORT_NAME), &outcome.model)?;
    config::write_json(&out.join(BASELINE_NAME), &outcome.copy_actor)?;
    let md = table(&[(label, &outcome.model), ("copy-actor", &outcome.copy_actor)]);
    write_atomic(&out.join(TABLE_NAME), md.as_bytes())?;
    Ok(outcome)
}

pub fn run(args: &EvaluateArgs) -> Result<()> {
    let s: EvaluateSettings = config::resolve(args, args.config.config.as_deref())?;
    let ck = load_checkpoint(require(&s.checkpoint, "--checkpoint")?)?;
    let data = require(&s.data, "--data")?;
    let out = require(&s.out, "--out")?;
    let ds = open_dataset(&data)?;
    let pairs = ds.split(s.split);
    if pairs.is_empty() {
        return Err(Error::Usage(format!("dataset {} has no {:?} split", data.display(), s.split)));
    }
    let model = ck.model()?;
    config::create_dir(&out)?;
    config::echo(&out, &s)?;
    let label = format!("ReactionMamba {}", model.config().variant);
    let outcome = evaluate_into(&model, &ck.norm, pairs, &s, &label, &out)?;
    print!("{}", table(&[(&label, &outcome.model), ("copy-actor", &outcome.copy_actor)]));
    Ok(())
}
