//! Versioned JSON checkpoints. Floats are written with round-trip precision,
//! so save followed by load reproduces every parameter bit for bit.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Model, ModelConfig, ModelParams};
use crate::nn::{AdamState, ParamBlocks};
use crate::train::TrainConfig;
use crate::tree::{BucketTree, TreeError, TreeNode};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint version {found} is not supported (expected {CHECKPOINT_VERSION})")]
    Version { found: u32 },
    #[error("checkpoint tree is invalid: {0}")]
    Tree(#[from] TreeError),
    #[error("checkpoint parameters do not match the model layout")]
    Layout,
    #[error("checkpoint JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub model_config: ModelConfig,
    pub train_config: TrainConfig,
    pub tree: Option<Vec<Option<TreeNode>>>,
    pub params: ModelParams,
    pub adam: Option<AdamState>,
    pub best_val_mape: Option<f64>,
}

impl Checkpoint {
    pub fn new(model: &Model, train_config: &TrainConfig, adam: Option<AdamState>, best_val_mape: Option<f64>) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            model_config: model.config.clone(),
            train_config: train_config.clone(),
            tree: model.tree.as_ref().map(|t| t.nodes().to_vec()),
            params: model.params.clone(),
            adam,
            best_val_mape,
        }
    }

    /// Rebuilds the model, validating the tree and the parameter layout.
    pub fn model(&self) -> Result<Model, CheckpointError> {
        let tree = match &self.tree {
            Some(nodes) => Some(BucketTree::from_nodes(nodes.clone())?),
            None => None,
        };
        let expected = ModelParams::init(
            &self.model_config,
            tree.as_ref().map(|t| 2 * t.internal().len()),
            0,
        );
        let same_shape = expected.param_count() == self.params.param_count()
            && expected
                .blocks()
                .iter()
                .zip(self.params.blocks())
                .all(|(a, b)| a.len() == b.len())
            && expected.blocks().len() == self.params.blocks().len();
        if !same_shape {
            return Err(CheckpointError::Layout);
        }
        Ok(Model {
            config: self.model_config.clone(),
            tree,
            params: self.params.clone(),
        })
    }

    pub fn to_json(&self) -> Result<String, CheckpointError> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, CheckpointError> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(CheckpointError::Version { found: ck.version });
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        fs::write(path, self.to_json()?).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let text = fs::read_to_string(path).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Variant;

    fn sample_model(variant: Variant) -> Model {
        let labels: Vec<u64> = (0..500).map(|i| (i * i) % 97).collect();
        let config = ModelConfig {
            variant,
            num_leaves: 8,
            ..Default::default()
        };
        Model::new(config, &labels, 11).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for variant in [Variant::Full, Variant::VrP] {
            let model = sample_model(variant);
            let ck = Checkpoint::new(&model, &TrainConfig::default(), None, Some(0.123456789));
            let back = Checkpoint::from_json(&ck.to_json().unwrap()).unwrap();
            let restored = back.model().unwrap();
            let a: Vec<u64> = model.params.blocks().iter().flat_map(|b| b.iter().map(|v| v.to_bits())).collect();
            let b: Vec<u64> = restored.params.blocks().iter().flat_map(|b| b.iter().map(|v| v.to_bits())).collect();
            assert_eq!(a, b);
            assert_eq!(restored, model);
            assert_eq!(back, ck);
        }
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        let model = sample_model(Variant::Full);
        let ck = Checkpoint::new(&model, &TrainConfig::default(), None, None);
        ck.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), ck);
        let err = Checkpoint::load(&dir.path().join("missing.json")).unwrap_err();
        assert!(err.to_string().contains("missing.json"));
    }

    #[test]
    fn corrupted_checkpoints_are_rejected() {
        let model = sample_model(Variant::Full);
        let mut ck = Checkpoint::new(&model, &TrainConfig::default(), None, None);
        ck.version = 99;
        assert!(matches!(
            Checkpoint::from_json(&ck.to_json().unwrap()),
            Err(CheckpointError::Version { found: 99 })
        ));
        let mut ck = Checkpoint::new(&model, &TrainConfig::default(), None, None);
        ck.params.gate_head = None;
        assert!(matches!(ck.model(), Err(CheckpointError::Layout)));
        let mut ck = Checkpoint::new(&model, &TrainConfig::default(), None, None);
        if let Some(nodes) = ck.tree.as_mut() {
            nodes[0].as_mut().unwrap().cutoff = Some(10_000);
        }
        assert!(matches!(ck.model(), Err(CheckpointError::Tree(_))));
    }
}
