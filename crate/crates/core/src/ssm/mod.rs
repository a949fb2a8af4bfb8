//! State-space core: reference LTI operators, the selective scan, and the
//! Mamba / attention blocks used by the encoder and decoder.

mod attention;
pub mod lti;
mod mamba;

pub use attention::{
    attention_block, cross_attention, init_cross_attention, AttentionBlockConfig, AttentionBlockParams,
};
pub use lti::{
    discretize, ssm_conv_apply, ssm_conv_kernel, ssm_scan_recurrent, DiscreteSsm, SsmParams, StepSize,
    Transition,
};
pub use mamba::{mamba_block, mamba_mixer, selective_scan, MambaBlockConfig, MambaBlockParams, NORM_EPS};
