//! Canonical parameter names, shared with checkpoint archives.
//!
//! ```text
//! embed.proj.w  [P²C, D]      embed.proj.b  [D]
//! embed.cls     [1, D]        embed.pos     [N+1, D]
//! block.{i}.norm1.gamma|beta  [D]
//! block.{i}.attn.wq|wk|wv|wo  [D, D]   block.{i}.attn.bq|bk|bv|bo  [D]
//! block.{i}.norm2.gamma|beta  [D]
//! block.{i}.mlp_in.w  [D, M]  block.{i}.mlp_in.b  [M]
//! block.{i}.mlp_out.w [M, D]  block.{i}.mlp_out.b [D]
//! norm.gamma|beta [D]         head.w [D, K]   head.b [K]
//! ```
//!
//! Linear layers compute `y = x·W + b`, so weights are stored `[in, out]`.

pub const PROJ_W: &str = "embed.proj.w";
pub const PROJ_B: &str = "embed.proj.b";
pub const CLS: &str = "embed.cls";
pub const POS: &str = "embed.pos";

pub const NORM1_GAMMA: &str = "norm1.gamma";
pub const NORM1_BETA: &str = "norm1.beta";
pub const WQ: &str = "attn.wq";
pub const BQ: &str = "attn.bq";
pub const WK: &str = "attn.wk";
pub const BK: &str = "attn.bk";
pub const WV: &str = "attn.wv";
pub const BV: &str = "attn.bv";
pub const WO: &str = "attn.wo";
pub const BO: &str = "attn.bo";
pub const NORM2_GAMMA: &str = "norm2.gamma";
pub const NORM2_BETA: &str = "norm2.beta";
pub const MLP_IN_W: &str = "mlp_in.w";
pub const MLP_IN_B: &str = "mlp_in.b";
pub const MLP_OUT_W: &str = "mlp_out.w";
pub const MLP_OUT_B: &str = "mlp_out.b";

pub const NORM_GAMMA: &str = "norm.gamma";
pub const NORM_BETA: &str = "norm.beta";
pub const HEAD_W: &str = "head.w";
pub const HEAD_B: &str = "head.b";

/// `block.{layer}.{suffix}`.
pub fn block(layer: usize, suffix: &str) -> String {
    format!("block.{layer}.{suffix}")
}

pub fn is_head(name: &str) -> bool {
    name == HEAD_W || name == HEAD_B
}

pub(crate) fn is_weight_matrix(name: &str) -> bool {
    name == PROJ_W
        || name == HEAD_W
        || [WQ, WK, WV, WO, MLP_IN_W, MLP_OUT_W]
            .iter()
            .any(|s| name.ends_with(&format!(".{s}")))
}
