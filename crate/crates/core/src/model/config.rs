use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::numkernel::Precision;

/// Shape and numeric mode of a decoder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub context_len: usize,
    #[serde(default = "default_vocab")]
    pub vocab_size: usize,
    #[serde(default = "default_precision")]
    pub precision: Precision,
    #[serde(default)]
    pub init_seed: u64,
}

fn default_vocab() -> usize {
    crate::corpus::VOCAB_SIZE
}

fn default_precision() -> Precision {
    Precision::Fast32
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 {
            bail!(Config, "n_layers must be at least 1");
        }
        if self.d_model == 0 || self.n_heads == 0 {
            bail!(Config, "d_model and n_heads must be positive");
        }
        if self.d_model % self.n_heads != 0 {
            bail!(
                Config,
                "d_model {} is not divisible by n_heads {}",
                self.d_model,
                self.n_heads
            );
        }
        if self.context_len == 0 {
            bail!(Config, "context_len must be at least 1");
        }
        if self.vocab_size < 2 {
            bail!(Config, "vocab_size must be at least 2");
        }
        Ok(())
    }

    /// Parameters in one transformer block: `12·D² + 13·D`.
    pub fn params_per_block(&self) -> usize {
        let d = self.d_model;
        12 * d * d + 13 * d
    }
}

/// Closed-form trainable-parameter count with tied input/output embeddings:
/// `V·D + ctx·D + L·(12·D² + 13·D) + 2·D`.
pub fn count_params(cfg: &ModelConfig) -> usize {
    let d = cfg.d_model;
    cfg.vocab_size * d + cfg.context_len * d + cfg.n_layers * cfg.params_per_block() + 2 * d
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(l: usize, d: usize, h: usize, ctx: usize, v: usize) -> ModelConfig {
        ModelConfig {
            n_layers: l,
            d_model: d,
            n_heads: h,
            context_len: ctx,
            vocab_size: v,
            precision: Precision::Verify64,
            init_seed: 0,
        }
    }

    #[test]
    fn hand_enumerated_tiny_count() {
        // wte 4·2, wpe 2·2; block: ln1 2+2, qkv 2·6+6, proj 2·2+2, ln2 2+2,
        // fc 2·8+8, mlp proj 8·2+2; final norm 2+2
        let by_hand = 8 + 4 + (4 + 18 + 6 + 4 + 24 + 18) + 4;
        assert_eq!(count_params(&cfg(1, 2, 1, 2, 4)), by_hand);
    }

    #[test]
    fn count_is_linear_in_depth() {
        let base = cfg(3, 16, 2, 8, 259);
        let deeper = ModelConfig { n_layers: 6, ..base.clone() };
        assert_eq!(count_params(&deeper) - count_params(&base), 3 * base.params_per_block());
    }

    #[test]
    fn tied_head_is_not_counted_twice() {
        let c = cfg(1, 4, 1, 4, 10);
        let untied = count_params(&c) + c.vocab_size * c.d_model;
        assert_eq!(untied - count_params(&c), 40);
        assert_eq!(count_params(&c), 10 * 4 + 4 * 4 + c.params_per_block() + 8);
    }

    #[test]
    fn gpt2_small_scale_reference() {
        // 12 layers, 768 wide, 1024 positions, 50257-token vocabulary
        let c = cfg(12, 768, 12, 1024, 50257);
        assert_eq!(count_params(&c), 124_439_808);
    }

    #[test]
    fn validation() {
        assert!(cfg(1, 6, 4, 2, 4).validate().is_err());
        assert!(cfg(0, 4, 1, 2, 4).validate().is_err());
        assert!(cfg(1, 4, 1, 2, 1).validate().is_err());
        assert!(cfg(2, 8, 2, 4, 259).validate().is_ok());
    }
}
