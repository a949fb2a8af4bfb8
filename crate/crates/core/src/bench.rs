//! Inference timing: end-to-end generation (conditioning + decode) on
//! random inputs, with a log-log fit of time against sequence length.
//! Only model compute is timed; inputs are built beforehand and nothing is
//! written inside the measured region.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ReactionMamba;
use crate::numerics::Tensor;

pub const MEASUREMENT_NOTE: &str = "pure model compute on CPU; excludes data loading and file output";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LengthTiming {
    pub length: usize,
    /// Median wall-clock time for all sequences, seconds.
    pub total_time: f64,
    pub time_per_sequence: f64,
    pub frames_per_second: f64,
    /// Raw per-trial totals, seconds.
    pub samples: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub variant: String,
    pub lengths: Vec<usize>,
    pub per_length: Vec<LengthTiming>,
    /// Least-squares slope of `ln(time)` against `ln(T)`; needs three lengths.
    pub exponent: Option<f64>,
    pub n_sequences: usize,
    pub trials: usize,
    pub warmup: usize,
    pub note: String,
}

impl TimingReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization is infallible")
    }

    /// Markdown table with one row per length.
    pub fn to_markdown(&self) -> String {
        let mut s = String::from(
            "| Method | Frames | Total Time (min) | Time per Sequence (s) | FPS |\n|---|---|---|---|---|\n",
        );
        for l in &self.per_length {
            s.push_str(&format!(
                "| {} | {} | {:.6} | {:.6} | {:.1} |\n",
                self.variant,
                l.length,
                l.total_time / 60.0,
                l.time_per_sequence,
                l.frames_per_second
            ));
        }
        if let Some(e) = self.exponent {
            s.push_str(&format!("\nlog-log exponent: {e:.3}\n"));
        }
        s.push_str(&format!("\n{}\n", self.note));
        s
    }

    /// `length,trial,seconds` rows of the raw samples.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("variant,length,trial,seconds\n");
        for l in &self.per_length {
            for (i, t) in l.samples.iter().enumerate() {
                s.push_str(&format!("{},{},{i},{t:.9}\n", self.variant, l.length));
            }
        }
        s
    }
}

/// Slope of the least-squares line through `(ln T, ln time)`.
pub fn fit_exponent(lengths: &[usize], times: &[f64]) -> Result<f64> {
    if lengths.len() != times.len() {
        return Err(Error::shape("fit_exponent", &[lengths.len()], &[times.len()]));
    }
    if lengths.len() < 3 {
        return Err(Error::Domain(format!("exponent fit needs at least 3 lengths, got {}", lengths.len())));
    }
    if times.iter().any(|&t| !(t > 0.0)) || lengths.contains(&0) {
        return Err(Error::Domain("exponent fit needs positive lengths and times".into()));
    }
    let xs: Vec<f64> = lengths.iter().map(|&l| (l as f64).ln()).collect();
    let ys: Vec<f64> = times.iter().map(|t| t.ln()).collect();
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Domain("exponent fit needs distinct lengths".into()));
    }
    Ok(sxy / sxx)
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Sequences per forward pass in the timed loop.
const BENCH_BATCH: usize = 16;

fn time_length(model: &ReactionMamba, n_sequences: usize, t: usize, trials: usize, warmup: usize) -> Result<LengthTiming> {
    let d = model.config().pose_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(t as u64);
    let batches: Vec<(Tensor<f32>, Tensor<f32>)> = (0..n_sequences.div_ceil(BENCH_BATCH))
        .map(|i| {
            let b = BENCH_BATCH.min(n_sequences - i * BENCH_BATCH);
            (Tensor::randn(&[b, t, d], 1.0, &mut rng), Tensor::randn(&[b, d], 1.0, &mut rng))
        })
        .collect();
    let run = |rng: &mut ChaCha8Rng| -> Result<()> {
        for (x, y1) in &batches {
            std::hint::black_box(model.generate_batch(x, y1, rng)?);
        }
        Ok(())
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..warmup {
        run(&mut rng)?;
    }
    let mut samples = Vec::with_capacity(trials);
    for _ in 0..trials {
        let start = Instant::now();
        run(&mut rng)?;
        samples.push(start.elapsed().as_secs_f64());
    }
    let total = median(&samples);
    let per_seq = total / n_sequences as f64;
    Ok(LengthTiming {
        length: t,
        total_time: total,
        time_per_sequence: per_seq,
        frames_per_second: t as f64 / per_seq,
        samples,
    })
}

fn check_counts(n_sequences: usize, trials: usize, warmup: usize) -> Result<()> {
    if n_sequences == 0 || trials < 3 || warmup < 1 {
        return Err(Error::Usage(format!(
            "benchmark needs n_sequences >= 1, trials >= 3, warmup >= 1 (got {n_sequences}, {trials}, {warmup})"
        )));
    }
    Ok(())
}

/// Median generation time for `n_sequences` sequences of `t` frames.
pub fn bench_inference(
    model: &ReactionMamba,
    n_sequences: usize,
    t: usize,
    trials: usize,
    warmup: usize,
) -> Result<TimingReport> {
    check_counts(n_sequences, trials, warmup)?;
    let timing = time_length(model, n_sequences, t, trials, warmup)?;
    Ok(TimingReport {
        variant: model.config().variant.to_string(),
        lengths: vec![t],
        per_length: vec![timing],
        exponent: None,
        n_sequences,
        trials,
        warmup,
        note: MEASUREMENT_NOTE.into(),
    })
}

/// Timings over several lengths plus the fitted exponent.
pub fn scaling_curve(
    model: &ReactionMamba,
    lengths: &[usize],
    n_sequences: usize,
    trials: usize,
    warmup: usize,
) -> Result<TimingReport> {
    check_counts(n_sequences, trials, warmup)?;
    if lengths.len() < 3 {
        return Err(Error::Domain(format!("scaling curve needs at least 3 lengths, got {}", lengths.len())));
    }
    let per_length = lengths
        .iter()
        .map(|&t| time_length(model, n_sequences, t, trials, warmup))
        .collect::<Result<Vec<_>>>()?;
    let times: Vec<f64> = per_length.iter().map(|l| l.total_time).collect();
    Ok(TimingReport {
        variant: model.config().variant.to_string(),
        lengths: lengths.to_vec(),
        exponent: Some(fit_exponent(lengths, &times)?),
        per_length,
        n_sequences,
        trials,
        warmup,
        note: MEASUREMENT_NOTE.into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelConfig, Variant};

    #[test]
    fn exponent_of_injected_power_laws() {
        let ls = [256, 512, 1024, 2048];
        let lin: Vec<f64> = ls.iter().map(|&l| 3e-6 * l as f64).collect();
        let quad: Vec<f64> = ls.iter().map(|&l| 1e-9 * (l as f64).powi(2)).collect();
        assert!((fit_exponent(&ls, &lin).unwrap() - 1.0).abs() < 1e-9);
        assert!((fit_exponent(&ls, &quad).unwrap() - 2.0).abs() < 1e-9);
        assert!(matches!(fit_exponent(&ls[..2], &lin[..2]), Err(Error::Domain(_))));
    }

    #[test]
    fn median_of_trials() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn report_schema_and_fps() {
        let mut cfg = ModelConfig::desk(5, Variant::S1);
        cfg.n_layers = 1;
        let m = ReactionMamba::new(cfg).unwrap();
        let r = bench_inference(&m, 3, 16, 3, 1).unwrap();
        let l = &r.per_length[0];
        assert!(l.frames_per_second.is_finite() && l.frames_per_second > 0.0);
        assert!((l.frames_per_second - 16.0 / l.time_per_sequence).abs() < 1e-6 * l.frames_per_second);
        assert!(r.to_markdown().contains("Time per Sequence (s)"));
        assert_eq!(r.to_csv().lines().count(), 4);
        assert!(matches!(bench_inference(&m, 3, 16, 2, 1), Err(Error::Usage(_))));
    }
}
