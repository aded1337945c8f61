//! The ViT model family.

pub mod attention;
mod config;
mod model;
pub mod names;
pub mod patch;

pub use attention::{attention_head, multi_head, AttentionParams};
pub use config::{parameter_count, preset_config, ViTConfig, Variant};
pub use model::{
    encoder_block, fine_tune_head, parameter_shapes, ActivationSite, BlockParams,
    ForwardOutput, Probe, ViTModel, INIT_STD, LAYER_NORM_EPS,
};
pub use patch::{patchify, patchify_on, unpatchify};
