//! GPT-2 style decoder assembled from [`crate::numkernel`] primitives.
//!
//! Forward and backward can run through only the first `active_depth`
//! blocks; the final norm and the weight-tied head always sit on top of the
//! current top block. Blocks above the active depth are never read.

mod config;
mod store;
mod transformer;

pub use config::{count_params, ModelConfig};
pub use store::{init_model, GroupId, Param, ParamGroup, ParameterStore};
pub use transformer::{backward, forward, ActivationTape, BackwardSpec};

/// Index of each parameter inside a block group.
pub mod block_param {
    pub const LN1_GAIN: usize = 0;
    pub const LN1_BIAS: usize = 1;
    pub const QKV_W: usize = 2;
    pub const QKV_B: usize = 3;
    pub const ATTN_PROJ_W: usize = 4;
    pub const ATTN_PROJ_B: usize = 5;
    pub const LN2_GAIN: usize = 6;
    pub const LN2_BIAS: usize = 7;
    pub const FC_W: usize = 8;
    pub const FC_B: usize = 9;
    pub const MLP_PROJ_W: usize = 10;
    pub const MLP_PROJ_B: usize = 11;
    pub const COUNT: usize = 12;
}
