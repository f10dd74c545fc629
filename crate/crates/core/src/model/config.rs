//! Model and sampling configuration.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture of the toy causal transformer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    #[serde(default = "default_rope_theta")]
    pub rope_theta: f32,
    #[serde(default = "default_norm_eps")]
    pub norm_eps: f32,
}

fn default_rope_theta() -> f32 {
    10_000.0
}

fn default_norm_eps() -> f32 {
    1e-5
}

impl Default for ModelConfig {
    /// Desk-scale default: trains in minutes on one CPU core.
    fn default() -> Self {
        Self {
            n_layers: 2,
            d_model: 64,
            n_heads: 4,
            d_ff: 128,
            vocab_size: 1024,
            max_seq_len: 256,
            rope_theta: default_rope_theta(),
            norm_eps: default_norm_eps(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_layers", self.n_layers),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("d_ff", self.d_ff),
            ("vocab_size", self.vocab_size),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::InvalidConfig(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if !(self.d_model / self.n_heads).is_multiple_of(2) {
            return Err(Error::InvalidConfig(format!(
                "head size {} must be even for rotary pairing",
                self.d_model / self.n_heads
            )));
        }
        if self.max_seq_len < 16 {
            return Err(Error::InvalidConfig(format!(
                "max_seq_len {} below minimum 16",
                self.max_seq_len
            )));
        }
        if self.rope_theta <= 0.0 || self.norm_eps <= 0.0 {
            return Err(Error::InvalidConfig(
                "rope_theta and norm_eps must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Total parameter count implied by this config.
    pub fn param_count(&self) -> usize {
        let d = self.d_model;
        let per_layer = 2 * d            // two norm gains
            + 4 * d * d                  // q, k, v, o projections
            + 3 * d * self.d_ff; // gate, up, down
        self.vocab_size * d              // token embedding
            + self.n_layers * per_layer
            + d                          // final norm gain
            + d * self.vocab_size // output head (untied)
    }
}

/// Decoding controls for [`crate::model::generate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingParams {
    /// 0 means greedy decoding regardless of `top_p`.
    pub temperature: f32,
    /// Nucleus mass in (0, 1].
    pub top_p: f32,
    pub max_new_tokens: usize,
    /// Token ids that terminate generation (excluded from the output).
    #[serde(default)]
    pub stop_tokens: Vec<u32>,
    pub seed: u64,
}

impl Default for SamplingParams {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            top_p: 1.0,
            max_new_tokens: 64,
            stop_tokens: Vec::new(),
            seed: 0,
        }
    }
}

impl SamplingParams {
    pub fn validate(&self) -> Result<()> {
        if self.temperature < 0.0 || !self.temperature.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "temperature {} must be finite and >= 0",
                self.temperature
            )));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "top_p {} must lie in (0, 1]",
                self.top_p
            )));
        }
        if self.max_new_tokens == 0 {
            return Err(Error::InvalidConfig("max_new_tokens must be >= 1".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        ModelConfig::default().validate().unwrap();
    }

    #[test]
    fn rejects_odd_head_dim() {
        let cfg = ModelConfig {
            d_model: 6,
            n_heads: 2,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn rejects_non_divisible_heads() {
        let cfg = ModelConfig {
            d_model: 10,
            n_heads: 3,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn param_count_closed_form() {
        let cfg = ModelConfig {
            n_layers: 2,
            d_model: 32,
            n_heads: 4,
            d_ff: 64,
            vocab_size: 512,
            max_seq_len: 64,
            ..Default::default()
        };
        // Independent count: embedding 512*32 + head 32*512 + final norm 32
        // + 2 layers of (2*32 norms + 4*32*32 attn + 3*32*64 ffn).
        let expected = 512 * 32 + 32 * 512 + 32 + 2 * (64 + 4096 + 6144);
        assert_eq!(cfg.param_count(), expected);
    }

    #[test]
    fn sampling_params_validation() {
        assert!(SamplingParams::default().validate().is_ok());
        assert!(SamplingParams {
            top_p: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(SamplingParams {
            temperature: -1.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(SamplingParams {
            max_new_tokens: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}
