use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Network dimensions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// shared hidden width `d` of encoder outputs and layer states
    pub hidden_dim: usize,
    /// hidden width inside each per-block encoder MLP
    pub encoder_hidden: usize,
    /// output embedding width per head
    pub out_dim: usize,
    pub layers: usize,
    pub heads: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 32,
            encoder_hidden: 32,
            out_dim: 32,
            layers: 2,
            heads: 2,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("hidden_dim", self.hidden_dim),
            ("encoder_hidden", self.encoder_hidden),
            ("out_dim", self.out_dim),
            ("layers", self.layers),
            ("heads", self.heads),
        ] {
            if v == 0 {
                return Err(Error::validation(format!("model {name} must be >= 1")));
            }
        }
        Ok(())
    }
}
