use serde::{Deserialize, Serialize};

use crate::activity::SEQ_LEN;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    /// Tanh approximation of the Gaussian error linear unit.
    #[default]
    Gelu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Model width C.
    pub hidden: usize,
    /// Latent width C0.
    pub latent: usize,
    pub layers: usize,
    pub heads: usize,
    /// Feed-forward width as a multiple of `hidden`.
    pub ffn_mult: usize,
    pub activation: Activation,
    /// Only shortened for small numerical tests; real days are 288 bins.
    pub seq_len: usize,
    pub kl_weight: f64,
    pub contrastive_weight: f64,
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::full()
    }
}

impl ModelConfig {
    pub fn full() -> Self {
        ModelConfig {
            hidden: 768,
            latent: 768,
            layers: 12,
            heads: 12,
            ffn_mult: 4,
            activation: Activation::Gelu,
            seq_len: SEQ_LEN,
            kl_weight: 1e-5,
            contrastive_weight: 1.0,
            dropout: 0.1,
        }
    }

    pub fn desk() -> Self {
        ModelConfig {
            hidden: 64,
            latent: 64,
            layers: 2,
            heads: 4,
            dropout: 0.0,
            ..ModelConfig::full()
        }
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }

    pub fn ffn_width(&self) -> usize {
        self.hidden * self.ffn_mult
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.hidden == 0 || self.latent == 0 || self.layers == 0 || self.heads == 0 || self.ffn_mult == 0 {
            return bad("model widths, layers and heads must be positive".into());
        }
        if self.hidden % self.heads != 0 {
            return bad(format!("heads ({}) must divide hidden ({})", self.heads, self.hidden));
        }
        if self.seq_len == 0 || self.seq_len > SEQ_LEN {
            return bad(format!("seq_len must be in 1..={SEQ_LEN}"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        if !(self.kl_weight >= 0.0 && self.contrastive_weight >= 0.0) {
            return bad("loss weights must be non-negative".into());
        }
        Ok(())
    }
}
