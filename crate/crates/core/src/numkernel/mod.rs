//! Dense-array primitives with hand-written forward and backward passes.
//!
//! Everything a small GPT-2 style decoder needs: affine maps, layer
//! normalization, causal multi-head attention, the tanh GELU and next-token
//! cross entropy. There is no tape or graph here; each op returns whatever
//! its backward needs and the caller threads it through.
//!
//! All ops are generic over [`Scalar`], implemented for `f64` (verification,
//! gradient checks) and `f32` (experiment throughput).

mod array;
mod attention;
mod gelu;
mod layernorm;
mod linear;
mod loss;

pub use array::{DenseArray, DualBuffer, Precision, Scalar};
pub use attention::{
    attention_core_backward, attention_core_forward, causal_self_attention,
    causal_self_attention_backward, AttentionCache, AttentionGrads, AttentionParams,
};
pub use gelu::{gelu, gelu_backward, gelu_derivative, gelu_scalar};
pub use layernorm::{layernorm, layernorm_backward, LayerNormCache, LayerNormGrads, LAYERNORM_EPS};
pub use linear::{linear, linear_backward, LinearGrads};
pub use loss::{cross_entropy_logits, CrossEntropy};

pub(crate) use array::{ensure_finite, gemm, MatRef};
pub(crate) use attention::{attention_core_backward_into, attention_core_into};
pub(crate) use layernorm::{layernorm_backward_into, layernorm_into};
pub(crate) use linear::{linear_backward_into, linear_into};
