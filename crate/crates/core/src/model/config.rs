use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture variants compared in the ablation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
pub enum Variant {
    /// Mamba backbone, action and initial pose concatenated to the latent.
    S1,
    /// S1 with every Mamba layer replaced by causal self-attention.
    S2,
    /// S1 without the initial-pose stream.
    S3,
    /// S1 with the initial pose injected through a decaying gate.
    S4,
    /// S1 with the action injected through cross-attention.
    S5,
}

impl Variant {
    pub const ALL: [Variant; 5] = [Variant::S1, Variant::S2, Variant::S3, Variant::S4, Variant::S5];

    pub fn uses_attention_backbone(self) -> bool {
        self == Variant::S2
    }

    pub fn description(self) -> &'static str {
        match self {
            Variant::S1 => "VAE + Mamba + Concat Action + Concat Init-Pose",
            Variant::S2 => "S1 -> Replace Mamba with Attention",
            Variant::S3 => "S1 -> Remove Init-Pose Concatenation",
            Variant::S4 => "S1 -> Replace Init-Pose Concatenation with Gating",
            Variant::S5 => "S1 -> Replace Action Concatenation with Cross-Attention",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "S1" => Ok(Variant::S1),
            "S2" => Ok(Variant::S2),
            "S3" => Ok(Variant::S3),
            "S4" => Ok(Variant::S4),
            "S5" => Ok(Variant::S5),
            other => Err(Error::Usage(format!("unknown variant {other}, expected S1..S5"))),
        }
    }
}

/// Schedule `g(t) = k0 · exp(−α · t / T)` for the S4 initial-pose gate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GatingParams {
    pub k0: f64,
    pub alpha: f64,
}

impl Default for GatingParams {
    fn default() -> Self {
        GatingParams { k0: 1.0, alpha: 5.0 }
    }
}

impl GatingParams {
    /// Gate value for each of `t` frames (frame 0 gets `k0`).
    pub fn schedule(&self, t: usize) -> Vec<f64> {
        (0..t)
            .map(|i| self.k0 * (-self.alpha * i as f64 / t as f64).exp())
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Joints per skeleton; poses have `3 · joints` coordinates.
    pub joints: usize,
    pub d_model: usize,
    pub d_z: usize,
    pub d_intermediate: usize,
    pub d_c: usize,
    pub n_layers: usize,
    /// SSM state size N of each Mamba layer.
    pub d_state: usize,
    /// Heads for attention layers (S2 backbone, S5 cross-attention).
    pub heads: usize,
    pub variant: Variant,
    /// Only present for S4.
    pub gating: Option<GatingParams>,
    pub seed: u64,
}

impl ModelConfig {
    /// Full-width configuration: d_model 256, six layers.
    pub fn full(joints: usize, variant: Variant) -> Self {
        ModelConfig {
            joints,
            d_model: 256,
            d_z: 128,
            d_intermediate: 512,
            d_c: 64,
            n_layers: 6,
            d_state: 16,
            heads: 4,
            variant,
            gating: (variant == Variant::S4).then(GatingParams::default),
            seed: 0,
        }
    }

    /// A reduced configuration that trains in minutes on one CPU core.
    pub fn desk(joints: usize, variant: Variant) -> Self {
        ModelConfig {
            d_model: 64,
            d_z: 32,
            d_intermediate: 128,
            d_c: 32,
            n_layers: 2,
            ..Self::full(joints, variant)
        }
    }

    pub fn with_variant(&self, variant: Variant) -> Self {
        ModelConfig {
            variant,
            gating: if variant == Variant::S4 {
                Some(self.gating.unwrap_or_default())
            } else {
                None
            },
            ..self.clone()
        }
    }

    pub fn pose_dim(&self) -> usize {
        3 * self.joints
    }

    /// Width of the decoder input after conditioning.
    pub fn cond_width(&self) -> usize {
        match self.variant {
            Variant::S1 | Variant::S2 => self.d_z + 2 * self.d_c,
            Variant::S3 | Variant::S4 | Variant::S5 => self.d_z + self.d_c,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("joints", self.joints),
            ("d_model", self.d_model),
            ("d_z", self.d_z),
            ("d_intermediate", self.d_intermediate),
            ("d_c", self.d_c),
            ("n_layers", self.n_layers),
            ("d_state", self.d_state),
            ("heads", self.heads),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        match (self.variant, &self.gating) {
            (Variant::S4, None) => return Err(Error::Config("S4 needs gating parameters".into())),
            (Variant::S4, Some(gp)) => {
                if !(gp.k0 > 0.0 && gp.k0 <= 1.0) || !(gp.alpha > 0.0) {
                    return Err(Error::Config(format!(
                        "gating needs k0 in (0, 1] and alpha > 0, got {gp:?}"
                    )));
                }
            }
            (v, Some(_)) => return Err(Error::Config(format!("gating parameters given for {v}"))),
            _ => {}
        }
        if self.variant == Variant::S2 && self.d_model % self.heads != 0 {
            return Err(Error::Config("heads must divide d_model".into()));
        }
        if self.variant == Variant::S5 && self.d_z % self.heads != 0 {
            return Err(Error::Config("heads must divide d_z".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_defaults() {
        let c = ModelConfig::full(24, Variant::S1);
        assert_eq!((c.d_model, c.d_z, c.d_intermediate, c.d_c, c.n_layers), (256, 128, 512, 64, 6));
        assert_eq!(c.cond_width(), 256);
        assert_eq!(c.with_variant(Variant::S3).cond_width(), 192);
        c.validate().unwrap();
    }

    #[test]
    fn gating_only_for_s4() {
        let mut c = ModelConfig::full(5, Variant::S1);
        c.gating = Some(GatingParams::default());
        assert!(c.validate().is_err());
        let c4 = ModelConfig::full(5, Variant::S4);
        assert!(c4.gating.is_some());
        c4.validate().unwrap();
        assert!(c4.with_variant(Variant::S1).gating.is_none());
    }

    #[test]
    fn gate_schedule_starts_at_k0_and_decays() {
        let g = GatingParams { k0: 0.8, alpha: 5.0 }.schedule(10);
        assert_eq!(g[0], 0.8);
        assert!(g.windows(2).all(|w| w[1] < w[0]));
        assert!((g[5] - 0.8 * (-2.5f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn variant_parsing() {
        assert_eq!("s2".parse::<Variant>().unwrap(), Variant::S2);
        assert!("S6".parse::<Variant>().is_err());
    }
}
