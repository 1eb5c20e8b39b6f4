use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub margin: f64,
    pub temperature: f64,
    /// weight of the triplet term
    pub alpha: f64,
    /// weight of the InfoNCE term
    pub beta: f64,
    /// negatives per positive, per source
    pub n_neg: usize,
    pub pool_capacity: usize,
    pub semantic_negatives: bool,
    /// stop gradients through other-head negatives
    pub detach_semantic: bool,
    pub in_batch_negatives: bool,
    pub pool_negatives: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            margin: 0.4,
            temperature: 0.1,
            alpha: 1.0,
            beta: 1.0,
            n_neg: 8,
            pool_capacity: 4096,
            semantic_negatives: true,
            detach_semantic: false,
            in_batch_negatives: true,
            pool_negatives: true,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) {
            return Err(Error::validation(format!("temperature must be > 0, got {}", self.temperature)));
        }
        if !(self.alpha >= 0.0 && self.beta >= 0.0 && self.alpha + self.beta > 0.0) {
            return Err(Error::validation("alpha, beta must be >= 0 with alpha + beta > 0"));
        }
        if self.n_neg == 0 {
            return Err(Error::validation("n_neg must be >= 1"));
        }
        if self.pool_capacity == 0 {
            return Err(Error::validation("pool_capacity must be >= 1"));
        }
        if !self.margin.is_finite() {
            return Err(Error::validation("margin must be finite"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Everything a training run needs besides graph, features and seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub optimizer: AdamConfig,
    pub steps: usize,
    /// positive pairs per relation per step
    pub batch_size: usize,
    /// relations supplying positives; empty means every non-self-loop relation
    pub relations: Vec<String>,
    /// also treat the destination as an anchor
    pub symmetric: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            loss: LossConfig::default(),
            optimizer: AdamConfig::default(),
            steps: 300,
            batch_size: 64,
            relations: Vec::new(),
            symmetric: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        let o = &self.optimizer;
        if !(o.lr > 0.0 && (0.0..1.0).contains(&o.beta1) && (0.0..1.0).contains(&o.beta2) && o.eps > 0.0) {
            return Err(Error::validation("invalid optimizer settings"));
        }
        if self.batch_size == 0 {
            return Err(Error::validation("batch_size must be >= 1"));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_partial_json() {
        let cfg = TrainConfig::from_json(r#"{"steps": 5, "loss": {"temperature": 0.2}}"#).unwrap();
        assert_eq!(cfg.steps, 5);
        assert_eq!(cfg.loss.temperature, 0.2);
        assert_eq!(cfg.loss.margin, 0.4);
        assert_eq!(cfg.optimizer.lr, 1e-3);
        assert!(TrainConfig::from_json(r#"{"loss": {"temperature": 0}}"#).is_err());
        assert!(TrainConfig::from_json(r#"{"bogus": 1}"#).is_err());
    }
}
