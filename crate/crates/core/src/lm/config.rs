use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Transformer,
    Ssm,
}

/// Width multiplier of the feed-forward sublayer.
pub const MLP_EXPANSION: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub family: Family,
    pub n_layers: usize,
    pub hidden_size: usize,
    /// Attention heads; ignored by the SSM family.
    pub n_heads: usize,
    pub vocab_size: usize,
    pub max_positions: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            family: Family::Transformer,
            n_layers: 6,
            hidden_size: 64,
            n_heads: 4,
            vocab_size: 512,
            max_positions: 256,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Every violated constraint, one message each.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.n_layers < 3 {
            out.push(format!("n_layers must be >= 3, got {}", self.n_layers));
        }
        if self.hidden_size == 0 {
            out.push("hidden_size must be positive".to_string());
        }
        if self.family == Family::Transformer
            && (self.n_heads == 0 || self.hidden_size % self.n_heads != 0)
        {
            out.push(format!(
                "hidden_size {} must be divisible by n_heads {}",
                self.hidden_size, self.n_heads
            ));
        }
        if self.vocab_size < 2 {
            out.push("vocab_size must be >= 2".to_string());
        }
        if self.max_positions == 0 {
            out.push("max_positions must be positive".to_string());
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(invalid(v.join("; ")))
        }
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_size / self.n_heads.max(1)
    }
}
