use std::path::PathBuf;

use clap::Args;
use reactionmamba_core::data::write_atomic;
use reactionmamba_core::metrics::EvalReport;
use reactionmamba_core::model::Variant;
use reactionmamba_core::{Error, Result};
use serde::{Deserialize, Serialize};

use super::evaluate::{evaluate_into, EvaluateSettings};
use super::train::{train_into, TrainSettings};
use super::{open_dataset, parse_variants, ModelSize};
use crate::config::{self, require};
use crate::ConfigFlag;

#[derive(Args, Debug, Serialize)]
pub struct AblateArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Comma-separated variants, in table order.
    #[arg(long)]
    pub variants: Option<String>,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, value_enum)]
    pub size: Option<ModelSize>,
    #[arg(long)]
    pub pairs_sample: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    #[serde(skip)]
    pub config: ConfigFlag,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateSettings {
    pub data: Option<PathBuf>,
    pub variants: String,
    pub steps: u64,
    pub batch: usize,
    pub seed: u64,
    pub lr: f64,
    pub size: ModelSize,
    pub pairs_sample: Option<usize>,
    pub out: Option<PathBuf>,
}

impl Default for AblateSettings {
    fn default() -> Self {
        let t = TrainSettings::default();
        AblateSettings {
            data: None,
            variants: "S1,S2,S3,S4,S5".into(),
            steps: t.steps,
            batch: t.batch,
            seed: t.seed,
            lr: t.lr,
            size: t.size,
            pairs_sample: None,
            out: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub description: String,
    /// Absent when training or evaluation of this variant failed.
    pub report: Option<EvalReport>,
    pub error: Option<String>,
}

pub fn ablation_table(rows: &[AblationRow]) -> String {
    let mut s = String::from("| Variant | Description | MPJPE | MPJVE | FID | div_gen/div_gt |\n|---|---|---|---|---|---|\n");
    for r in rows {
        match &r.report {
            Some(e) => {
                let ratio = e.div_ratio.map_or("n/a".to_string(), |v| format!("{v:.4}"));
                s.push_str(&format!(
                    "| {} | {} | {:.4} | {:.4} | {:.4} | {ratio} |\n",
                    r.variant, r.description, e.mpjpe, e.mpjve, e.fid
                ));
            }
            None => s.push_str(&format!("| {} | {} | failed | failed | failed | failed |\n", r.variant, r.description)),
        }
    }
    s
}

pub fn run(args: &AblateArgs) -> Result<()> {
    let s: AblateSettings = config::resolve(args, args.config.config.as_deref())?;
    let data = require(&s.data, "--data")?;
    let out = require(&s.out, "--out")?;
    let variants = parse_variants(&s.variants)?;
    let ds = open_dataset(&data)?;
    if ds.train.is_empty() || ds.test.len() < 2 {
        return Err(Error::Usage(format!(
            "ablation needs a train split and at least 2 test pairs in {}",
            data.display()
        )));
    }
    config::create_dir(&out)?;
    config::echo(&out, &s)?;
    let mut rows = Vec::new();
    for v in variants {
        let dir = out.join(v.to_string());
        let train = TrainSettings {
            data: Some(data.clone()),
            variant: v,
            steps: s.steps,
            batch: s.batch,
            seed: s.seed,
            lr: s.lr,
            size: s.size,
            checkpoint_every: 0,
            grad_clip: None,
            out: Some(dir.clone()),
        };
        let eval = EvaluateSettings {
            data: Some(data.clone()),
            pairs_sample: s.pairs_sample,
            seed: s.seed,
            out: Some(dir.clone()),
            ..Default::default()
        };
        let result = train_into(&train, &ds.train, &dir)
            .and_then(|(t, _)| evaluate_into(t.model(), t.norm(), &ds.test, &eval, &v.to_string(), &dir));
        let row = match result {
            Ok(o) => AblationRow {
                variant: v,
                description: v.description().into(),
                report: Some(o.model),
                error: None,
            },
            Err(e) => {
                log::warn!("variant {v} failed: {e}");
                AblationRow {
                    variant: v,
                    description: v.description().into(),
                    report: None,
                    error: Some(e.to_string()),
                }
            }
        };
        rows.push(row);
    }
    config::write_json(&out.join("ablation.json"), &rows)?;
    let md = ablation_table(&rows);
    write_atomic(&out.join("ablation.md"), md.as_bytes())?;
    print!("{md}");
    Ok(())
}
