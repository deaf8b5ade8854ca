//! Run configuration read from TOML. Every section is optional and falls back
//! to library defaults; a top-level `seed` (or `--seed`) overrides the seed of
//! every section so one number reproduces a whole run.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use convpred::bidsim::Scenario;
use convpred::model::{ModelConfig, Variant};
use convpred::synth::GeneratorConfig;
use convpred::train::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationSettings {
    pub variants: Vec<Variant>,
    pub seeds: Vec<u64>,
}

impl Default for AblationSettings {
    fn default() -> Self {
        Self {
            variants: vec![Variant::Full, Variant::WoSmoothing, Variant::WoProxy],
            seeds: vec![1, 2, 3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub generator: GeneratorConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub ablation: AblationSettings,
    pub scenario: Scenario,
}

impl RunConfig {
    /// Reads `path` if given, applies the seed override and validates.
    pub fn load(path: Option<&Path>, seed: Option<u64>) -> Result<Self> {
        let mut config = match path {
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?
            }
            None => RunConfig::default(),
        };
        if let Some(s) = seed {
            config.seed = Some(s);
        }
        if let Some(s) = config.seed {
            config.generator.seed = s;
            config.train.seed = s;
            config.scenario.seed = s;
        }
        Ok(config)
    }

    pub fn validate_generator(&self) -> Result<()> {
        self.generator.validate().context("generator config")
    }

    pub fn validate_training(&self) -> Result<()> {
        self.model.validate().context("model config")?;
        self.train.validate().context("train config")
    }

    pub fn validate_ablation(&self) -> Result<()> {
        self.validate_training()?;
        if self.ablation.variants.is_empty() || self.ablation.seeds.is_empty() {
            bail!("ablation config: variants and seeds must be non-empty");
        }
        Ok(())
    }

    pub fn validate_scenario(&self) -> Result<()> {
        self.scenario.validate().context("scenario config")
    }
}
