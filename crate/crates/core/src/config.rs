//! Single JSON configuration covering filtering, model, training and
//! synthetic-data settings. Every section and field is optional.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::FilterThresholds;
use crate::model::{ModelConfig, TrainConfig};
use crate::priors::DEFAULT_EPS;
use crate::synth::SynthConfig;
use crate::taxonomy::Taxonomy;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub taxonomy: Taxonomy,
    pub thresholds: FilterThresholds,
    pub model: ModelSettings,
    pub train: TrainConfig,
    pub synth: SynthConfig,
}

/// Module flags and optional size overrides; `D` and `K` come from the data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSettings {
    pub enable_mgsa: bool,
    pub enable_map: bool,
    pub enable_sim: bool,
    pub enable_pfv: bool,
    pub attn_dim: Option<usize>,
    pub hidden_dim: Option<usize>,
    pub pool_hidden: Option<usize>,
    pub eps: f64,
}

impl Default for ModelSettings {
    fn default() -> Self {
        Self {
            enable_mgsa: true,
            enable_map: true,
            enable_sim: true,
            enable_pfv: true,
            attn_dim: None,
            hidden_dim: None,
            pool_hidden: None,
            eps: DEFAULT_EPS,
        }
    }
}

impl ModelSettings {
    pub fn all_off() -> Self {
        Self {
            enable_mgsa: false,
            enable_map: false,
            enable_sim: false,
            enable_pfv: false,
            ..Self::default()
        }
    }

    pub fn resolve(&self, feature_dim: usize, categories: usize) -> ModelConfig {
        let base = ModelConfig::new(feature_dim, categories);
        ModelConfig {
            attn_dim: self.attn_dim.unwrap_or(base.attn_dim),
            hidden_dim: self.hidden_dim.unwrap_or(base.hidden_dim),
            pool_hidden: self.pool_hidden.unwrap_or(base.pool_hidden),
            eps: self.eps,
            ..base
        }
        .with_flags(self.enable_mgsa, self.enable_map, self.enable_sim, self.enable_pfv)
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_slice(&bytes)
            .map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.thresholds.validate()?;
        self.synth.validate()?;
        self.model.resolve(1, self.taxonomy.len()).validate()?;
        let t = &self.train;
        if !(t.lr >= 0.0 && t.lr.is_finite()) || t.batch_size == 0 {
            return Err(Error::invalid("train.lr must be >= 0 and batch_size >= 1"));
        }
        if !(0.0..1.0).contains(&t.beta1) || !(0.0..1.0).contains(&t.beta2) || t.adam_eps.is_nan() || t.adam_eps <= 0.0 {
            return Err(Error::invalid("Adam betas must be in [0, 1) and adam_eps > 0"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_is_default() {
        let c: PipelineConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(c, PipelineConfig::default());
        c.validate().unwrap();
    }

    #[test]
    fn partial_sections() {
        let c: PipelineConfig = serde_json::from_str(
            r#"{"thresholds": {"pond_coverage": 0.5}, "model": {"enable_map": false, "attn_dim": 8}, "train": {"epochs": 3}}"#,
        )
        .unwrap();
        assert_eq!(c.thresholds.pond_coverage, 0.5);
        assert_eq!(c.thresholds.barn_containment, 0.9);
        let m = c.model.resolve(16, 7);
        assert!(!m.enable_map && m.enable_mgsa);
        assert_eq!((m.attn_dim, m.hidden_dim, m.prior_dim), (8, 8, 12));
        assert_eq!(c.train.epochs, 3);
        assert_eq!(c.train.batch_size, 32);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"thresholds": {"barn": 1}}"#).is_err());
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"extra": 1}"#).is_err());
    }

    #[test]
    fn out_of_range_threshold() {
        let c: PipelineConfig = serde_json::from_str(r#"{"thresholds": {"silo_containment": 1.5}}"#).unwrap();
        assert!(c.validate().is_err());
    }
}
