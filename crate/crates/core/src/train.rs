//! Mini-batch Adam training with validation-MAPE early stopping.

use std::io::Write;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{compliance_rate, mape, MetricsError};
use crate::model::{Encoded, LossConfig, LossParts, Model, ModelError, ModelParams};
use crate::nn::{AdamConfig, AdamState, ParamBlocks};
use crate::tree::SoftLabelSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub alpha: f64,
    pub beta: f64,
    pub batch_size: usize,
    pub lr: f64,
    pub max_epochs: usize,
    pub patience: usize,
    /// Added to label denominators in the fusion loss.
    pub mape_floor: f64,
    pub joint_routing: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            batch_size: 128,
            lr: 1e-3,
            max_epochs: 20,
            patience: 2,
            mape_floor: 1.0,
            joint_routing: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if !(self.alpha >= 0.0 && self.beta >= 0.0 && self.alpha.is_finite() && self.beta.is_finite()) {
            return bad("alpha and beta must be finite and non-negative");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.patience == 0 {
            return bad("patience must be at least 1");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be at least 1");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !(self.mape_floor >= 0.0) {
            return bad("mape_floor must be non-negative");
        }
        Ok(())
    }

    pub fn loss(&self) -> LossConfig {
        LossConfig {
            alpha: self.alpha,
            beta: self.beta,
            eps_y: self.mape_floor,
            joint_routing: self.joint_routing,
        }
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("training set is empty")]
    EmptyTrain,
    #[error("validation set is empty")]
    EmptyValidation,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("validation metrics: {0}")]
    Metrics(#[from] MetricsError),
    #[error("non-finite loss at epoch {epoch}, batch {batch}; returning last good parameters")]
    NonFinite {
        epoch: usize,
        batch: usize,
        last_good: Box<ModelParams>,
    },
    #[error("writing training log: {0}")]
    Log(#[from] std::io::Error),
}

/// Tracks the best validation score and signals when `patience` epochs have
/// passed without improvement.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopper {
    patience: usize,
    best: f64,
    best_epoch: usize,
    stale: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            stale: 0,
        }
    }

    /// Records the score of `epoch` (1-based; 0 is a resumed starting point).
    /// Returns `true` if it improved
    /// on the best so far.
    pub fn observe(&mut self, epoch: usize, score: f64) -> bool {
        if score < self.best {
            self.best = score;
            self.best_epoch = epoch;
            self.stale = 0;
            true
        } else {
            self.stale += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.stale >= self.patience
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best(&self) -> f64 {
        self.best
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_total: f64,
    pub train_bucket: f64,
    pub train_proxy: f64,
    pub train_fusion: f64,
    pub val_mape: f64,
    pub val_cr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub best_epoch: usize,
    pub best_val_mape: f64,
    pub log: Vec<EpochRecord>,
    pub adam: AdamState,
}

/// Validation MAPE and CR of the clamped predictions.
pub fn validation_scores(model: &Model, val: &[Encoded]) -> Result<(f64, f64), TrainError> {
    let preds: Vec<f64> = model.predict_all(val)?.iter().map(|p| p.y_final).collect();
    let labels: Vec<u64> = val.iter().map(|x| x.label).collect();
    Ok((mape(&preds, &labels)?.value, compliance_rate(&preds, &labels)?))
}

/// Trains `model` in place and leaves it holding the parameters of the epoch
/// with the lowest validation MAPE. Each epoch's record is also written as a
/// JSON line to `log_sink` when given.
pub fn fit(
    model: &mut Model,
    train: &[Encoded],
    val: &[Encoded],
    config: &TrainConfig,
    log_sink: Option<&mut dyn Write>,
) -> Result<TrainOutcome, TrainError> {
    fit_resumed(model, train, val, config, log_sink, None)
}

/// Like [`fit`], but continues from the model's current parameters: the
/// starting point is scored and logged as epoch 0 and competes for "best",
/// and `adam` (when its layout matches) carries the optimizer moments over.
pub fn resume(
    model: &mut Model,
    train: &[Encoded],
    val: &[Encoded],
    config: &TrainConfig,
    log_sink: Option<&mut dyn Write>,
    adam: Option<AdamState>,
) -> Result<TrainOutcome, TrainError> {
    fit_resumed(model, train, val, config, log_sink, Some(adam))
}

fn fit_resumed(
    model: &mut Model,
    train: &[Encoded],
    val: &[Encoded],
    config: &TrainConfig,
    mut log_sink: Option<&mut dyn Write>,
    resume_from: Option<Option<AdamState>>,
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    if train.is_empty() {
        return Err(TrainError::EmptyTrain);
    }
    if val.is_empty() {
        return Err(TrainError::EmptyValidation);
    }
    let targets: Vec<SoftLabelSet> = train
        .iter()
        .map(|x| model.edge_targets(x.label))
        .collect::<Result<_, _>>()?;
    let loss = config.loss();
    let adam_config = AdamConfig {
        lr: config.lr,
        ..AdamConfig::default()
    };
    let count = model.params.param_count();
    let mut adam = match resume_from.clone().flatten() {
        Some(mut state) if state.moments().0.len() == count => {
            state.config.lr = config.lr;
            state
        }
        _ => AdamState::new(adam_config, count),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(2);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut stopper = EarlyStopper::new(config.patience);
    let mut best_params = model.params.clone();
    let mut best_adam = adam.clone();
    let mut log = Vec::new();
    if resume_from.is_some() {
        let (val_mape, val_cr) = validation_scores(model, val)?;
        info!("resumed {}: val MAPE {val_mape:.4} CR {val_cr:.4}", model.config.variant.name());
        let record = EpochRecord {
            epoch: 0,
            train_total: f64::NAN,
            train_bucket: f64::NAN,
            train_proxy: f64::NAN,
            train_fusion: f64::NAN,
            val_mape,
            val_cr,
        };
        if let Some(sink) = log_sink.as_deref_mut() {
            let line = serde_json::to_string(&record).map_err(std::io::Error::other)?;
            writeln!(sink, "{line}")?;
        }
        log.push(record);
        stopper.observe(0, val_mape);
    }
    let mut grads = model.params.zeros_like();

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut sum = LossParts::default();
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<(&Encoded, &SoftLabelSet)> = chunk.iter().map(|&i| (&train[i], &targets[i])).collect();
            grads.fill(0.0);
            let parts = model.batch_loss(&model.params, &batch, &loss, Some(&mut grads))?;
            let last_good = model.params.clone();
            if !parts.total.is_finite() || adam.update(&mut model.params, &grads).is_err() {
                warn!("non-finite loss at epoch {epoch} batch {b}");
                return Err(TrainError::NonFinite {
                    epoch,
                    batch: b,
                    last_good: Box::new(last_good),
                });
            }
            sum += parts.scaled(chunk.len() as f64);
        }
        let mean = sum.scaled(1.0 / train.len() as f64);
        let (val_mape, val_cr) = validation_scores(model, val)?;
        let record = EpochRecord {
            epoch,
            train_total: mean.total,
            train_bucket: mean.bucket,
            train_proxy: mean.proxy,
            train_fusion: mean.fusion,
            val_mape,
            val_cr,
        };
        info!(
            "{} epoch {epoch}: loss {:.4} val MAPE {val_mape:.4} CR {val_cr:.4}",
            model.config.variant.name(),
            mean.total
        );
        if let Some(sink) = log_sink.as_deref_mut() {
            let line = serde_json::to_string(&record).map_err(std::io::Error::other)?;
            writeln!(sink, "{line}")?;
        }
        log.push(record);
        if stopper.observe(epoch, val_mape) {
            best_params = model.params.clone();
            best_adam = adam.clone();
        }
        if stopper.should_stop() {
            break;
        }
    }
    model.params = best_params;
    Ok(TrainOutcome {
        best_epoch: stopper.best_epoch(),
        best_val_mape: stopper.best(),
        log,
        adam: best_adam,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{encode_all, ModelConfig, Variant};
    use crate::synth::{generate_campaigns, GeneratorConfig};

    #[test]
    fn early_stop_trace() {
        let mut s = EarlyStopper::new(2);
        let mut stopped_after = None;
        for (k, v) in [0.5, 0.4, 0.41, 0.42, 0.3].into_iter().enumerate() {
            s.observe(k + 1, v);
            if s.should_stop() {
                stopped_after = Some(k + 1);
                break;
            }
        }
        assert_eq!(stopped_after, Some(4));
        assert_eq!(s.best_epoch(), 2);
        assert_eq!(s.best(), 0.4);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig { max_epochs: 0, ..Default::default() },
            TrainConfig { batch_size: 0, ..Default::default() },
            TrainConfig { patience: 0, ..Default::default() },
            TrainConfig { alpha: -1.0, ..Default::default() },
        ] {
            assert!(matches!(bad.validate(), Err(TrainError::InvalidConfig(_))));
        }
    }

    fn setup(variant: Variant) -> (Model, Vec<Encoded>, Vec<Encoded>) {
        let data = generate_campaigns(&GeneratorConfig {
            n_samples: 1200,
            ..Default::default()
        })
        .unwrap();
        let xs = encode_all(&data).unwrap();
        let (train, val) = xs.split_at(1000);
        let labels: Vec<u64> = train.iter().map(|x| x.label).collect();
        let config = ModelConfig {
            variant,
            num_leaves: 16,
            ..Default::default()
        };
        (Model::new(config, &labels, 1).unwrap(), train.to_vec(), val.to_vec())
    }

    #[test]
    fn one_epoch_cap() {
        let (mut m, train, val) = setup(Variant::Full);
        let cfg = TrainConfig { max_epochs: 1, patience: 5, ..Default::default() };
        let out = fit(&mut m, &train, &val, &cfg, None).unwrap();
        assert_eq!(out.log.len(), 1);
        assert_eq!(out.best_epoch, 1);
        assert_eq!(out.adam.step, 8);
    }

    #[test]
    fn training_is_deterministic_and_logs_lines() {
        let cfg = TrainConfig { max_epochs: 3, ..Default::default() };
        let (mut a, train, val) = setup(Variant::Full);
        let mut sink = Vec::new();
        let out = fit(&mut a, &train, &val, &cfg, Some(&mut sink)).unwrap();
        let (mut b, _, _) = setup(Variant::Full);
        fit(&mut b, &train, &val, &cfg, None).unwrap();
        assert_eq!(a.params, b.params);
        let text = String::from_utf8(sink).unwrap();
        assert_eq!(text.lines().count(), out.log.len());
        let first: EpochRecord = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(first, out.log[0]);
    }

    #[test]
    fn returned_parameters_score_the_best_epoch() {
        let cfg = TrainConfig { max_epochs: 4, patience: 1, ..Default::default() };
        let (mut m, train, val) = setup(Variant::Full);
        let out = fit(&mut m, &train, &val, &cfg, None).unwrap();
        let (v, _) = validation_scores(&m, &val).unwrap();
        assert_eq!(v, out.best_val_mape);
        assert!(out.log.len() <= cfg.max_epochs);
        assert!(out.log.len() - out.best_epoch <= cfg.patience);
    }

    #[test]
    fn non_finite_inputs_abort_with_last_good_parameters() {
        let (mut m, mut train, val) = setup(Variant::Full);
        let before = m.params.clone();
        train[0].dense[0] = f64::NAN;
        let cfg = TrainConfig { batch_size: 2000, ..Default::default() };
        match fit(&mut m, &train, &val, &cfg, None) {
            Err(TrainError::NonFinite { epoch: 1, batch: 0, last_good }) => assert_eq!(*last_good, before),
            other => panic!("expected non-finite abort, got {other:?}"),
        }
    }

    #[test]
    fn value_regression_converges_to_constant() {
        let (_, mut train, mut val) = setup(Variant::VrN);
        for x in train.iter_mut().chain(val.iter_mut()) {
            x.label = 10;
        }
        let labels = vec![10; train.len()];
        let config = ModelConfig { variant: Variant::VrN, ..Default::default() };
        let mut m = Model::new(config, &labels, 1).unwrap();
        let cfg = TrainConfig { lr: 1e-2, max_epochs: 30, patience: 30, batch_size: 32, ..Default::default() };
        fit(&mut m, &train, &val, &cfg, None).unwrap();
        for x in &val {
            let y = m.predict(x).unwrap().y_hat;
            assert!((9.5..=10.5).contains(&y), "{y}");
        }
    }

    #[test]
    fn resume_scores_the_starting_point_as_epoch_zero() {
        let cfg = TrainConfig { max_epochs: 2, ..Default::default() };
        let (mut m, train, val) = setup(Variant::Full);
        let first = fit(&mut m, &train, &val, &cfg, None).unwrap();
        let mut sink = Vec::new();
        let again = resume(&mut m, &train, &val, &cfg, Some(&mut sink), Some(first.adam.clone())).unwrap();
        assert_eq!(again.log[0].epoch, 0);
        assert_eq!(again.log[0].val_mape, first.best_val_mape);
        assert!(again.best_val_mape <= first.best_val_mape);
        let line: serde_json::Value = serde_json::from_str(String::from_utf8(sink).unwrap().lines().next().unwrap()).unwrap();
        assert_eq!(line["epoch"], 0);
        assert!(again.adam.step >= first.adam.step);
    }
}
