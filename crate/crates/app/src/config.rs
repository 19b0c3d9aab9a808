//! Run configuration: world spec, training hyperparameters, model shape,
//! and evaluation settings, read from one JSON file with flag overrides.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use localeq_core::synth::WorldSpec;
use localeq_model::{EncoderConfig, TokenizerConfig, TrainConfig};

/// Encoder and tokenizer shape.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSettings {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_len: usize,
    pub n_buckets: usize,
    /// Seed of parameter initialization (shared by all variants so they
    /// start from the same encoder weights).
    pub init_seed: u64,
}

impl Default for ModelSettings {
    fn default() -> Self {
        Self {
            d_model: 32,
            n_layers: 2,
            n_heads: 4,
            d_ff: 64,
            max_len: 24,
            n_buckets: 4096,
            init_seed: 1,
        }
    }
}

impl ModelSettings {
    pub fn encoder_config(&self, dropout_rate: f64) -> EncoderConfig {
        EncoderConfig {
            d_model: self.d_model,
            n_layers: self.n_layers,
            n_heads: self.n_heads,
            d_ff: self.d_ff,
            max_len: self.max_len,
            dropout_rate,
        }
    }

    pub fn tokenizer_config(&self, n_locales: usize) -> TokenizerConfig {
        TokenizerConfig {
            n_buckets: self.n_buckets,
            max_len: self.max_len,
            n_locales,
        }
    }
}

/// Evaluation, labeling and analysis settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSettings {
    pub target_precision: f64,
    /// Number of high-resource locales for bucket aggregation.
    pub hi_re_count: usize,
    /// Use one pooled worldwide threshold instead of per-locale ones.
    pub global_threshold: bool,
    pub derive_threshold: f64,
    pub min_total_clicks: u64,
    pub emd_min_clicks: u64,
    pub emd_bins: usize,
    pub split_fractions: (f64, f64, f64),
    pub split_seed: u64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            target_precision: 0.8,
            hi_re_count: 9,
            global_threshold: false,
            derive_threshold: 0.5,
            min_total_clicks: 1,
            emd_min_clicks: 5,
            emd_bins: 19,
            split_fractions: (0.8, 0.1, 0.1),
            split_seed: 13,
        }
    }
}

/// Full pipeline configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub world: WorldSpec,
    pub model: ModelSettings,
    pub train: TrainConfig,
    pub eval: EvalSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            world: WorldSpec::benchmark(),
            model: ModelSettings::default(),
            train: benchmark_train_config(),
            eval: EvalSettings::default(),
        }
    }
}

/// Training configuration of the shipped benchmark. The learning rate is
/// raised relative to the fine-tuning default because the tiny encoder
/// trains from random initialization.
pub fn benchmark_train_config() -> TrainConfig {
    TrainConfig {
        learning_rate: 3e-3,
        dropout: 0.001,
        batch_size: 256,
        max_epochs: 30,
        patience: 4,
        seed: 0,
        ..TrainConfig::default()
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let raw = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let config: RunConfig = serde_json::from_str(&raw)
            .with_context(|| format!("parsing config {}", path.display()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.world
            .validate()
            .context("world section of the config")?;
        self.train
            .validate()
            .context("train section of the config")?;
        if !(0.0..=1.0).contains(&self.eval.target_precision) {
            bail!("eval.target_precision outside [0, 1]");
        }
        if self.eval.hi_re_count == 0 || self.eval.hi_re_count >= self.world.n_locales {
            bail!(
                "eval.hi_re_count must be in [1, {})",
                self.world.n_locales
            );
        }
        if self.eval.emd_bins == 0 {
            bail!("eval.emd_bins must be >= 1");
        }
        if !(0.5..1.0).contains(&self.eval.derive_threshold) {
            bail!("eval.derive_threshold outside [0.5, 1)");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid_and_round_trips() {
        let config = RunConfig::default();
        config.validate().unwrap();
        let json = serde_json::to_string_pretty(&config).unwrap();
        let back: RunConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(config, back);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = serde_json::from_str::<RunConfig>(r#"{"no_such_key": 1}"#);
        assert!(err.is_err());
        let err = serde_json::from_str::<RunConfig>(r#"{"train": {"learning_rute": 0.1}}"#);
        assert!(err.is_err());
    }

    #[test]
    fn partial_configs_fill_defaults() {
        let config: RunConfig =
            serde_json::from_str(r#"{"train": {"max_epochs": 3}}"#).unwrap();
        assert_eq!(config.train.max_epochs, 3);
        assert_eq!(config.train.batch_size, 256);
        assert_eq!(config.world, WorldSpec::benchmark());
    }
}
