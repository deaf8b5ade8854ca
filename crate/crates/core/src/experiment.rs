//! Training and evaluation harness: baselines, ablations and report tables.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::metrics::{rm_baseline, ExpertColumns, MetricsError, MetricsReport};
use crate::model::{encode_all, Model, ModelConfig, Prediction, Variant};
use crate::synth::{CampaignSample, DatasetSplit};
use crate::train::{fit, TrainConfig, TrainError, TrainOutcome};

#[derive(Debug)]
pub struct TrainedRun {
    pub model: Model,
    pub outcome: TrainOutcome,
}

/// Builds the model on the training labels and fits it with validation
/// early stopping.
pub fn train_variant(
    split: &DatasetSplit,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
) -> Result<TrainedRun, TrainError> {
    train_config.validate()?;
    let train = encode_all(&split.train)?;
    let val = encode_all(&split.val)?;
    let labels: Vec<u64> = split.train.iter().map(|s| s.label).collect();
    let mut model = Model::new(model_config.clone(), &labels, train_config.seed)?;
    let outcome = fit(&mut model, &train, &val, train_config, None)?;
    Ok(TrainedRun { model, outcome })
}

/// Count-regression (`VrN`) or PCOC-regression (`VrP`) baseline.
pub fn vr_baseline_train(
    split: &DatasetSplit,
    variant: Variant,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
) -> Result<TrainedRun, TrainError> {
    assert!(matches!(variant, Variant::VrN | Variant::VrP), "not a value-regression variant");
    let config = ModelConfig {
        variant,
        ..model_config.clone()
    };
    train_variant(split, &config, train_config)
}

pub fn predict_samples(model: &Model, samples: &[CampaignSample]) -> Result<Vec<Prediction>, TrainError> {
    let xs = encode_all(samples)?;
    let chunks: Vec<Vec<Prediction>> = xs
        .par_chunks(1024)
        .map(|c| model.predict_all(c))
        .collect::<Result<_, _>>()?;
    Ok(chunks.into_iter().flatten().collect())
}

/// Report over `samples`, scoring the clamped prediction.
pub fn evaluate_model(model: &Model, samples: &[CampaignSample]) -> Result<MetricsReport, TrainError> {
    let preds = predict_samples(model, samples)?;
    Ok(report_from_predictions(model.config.variant.name(), samples, &preds)?)
}

pub fn report_from_predictions(
    name: &str,
    samples: &[CampaignSample],
    preds: &[Prediction],
) -> Result<MetricsReport, MetricsError> {
    let y_final: Vec<f64> = preds.iter().map(|p| p.y_final).collect();
    let column = |get: fn(&Prediction) -> Option<f64>| -> Option<Vec<f64>> { preds.iter().map(get).collect() };
    let y_f = column(|p| p.y_f);
    let y_g = column(|p| p.y_g);
    let lambda = column(|p| p.lambda);
    MetricsReport::build(
        name,
        samples,
        &y_final,
        ExpertColumns {
            y_f: y_f.as_deref(),
            y_g: y_g.as_deref(),
            lambda: lambda.as_deref(),
        },
    )
}

/// The ranking model's own estimate, `y_hat = z`.
pub fn rm_report(samples: &[CampaignSample]) -> Result<MetricsReport, MetricsError> {
    let preds: Vec<f64> = samples.iter().map(rm_baseline).collect();
    MetricsReport::build("rm", samples, &preds, ExpertColumns::default())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub seed: u64,
    pub best_epoch: usize,
    pub val_mape: f64,
    pub test_mape: f64,
    pub test_cr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
    pub reports: Vec<MetricsReport>,
}

impl AblationReport {
    pub fn row(&self, variant: Variant, seed: u64) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == variant && r.seed == seed)
    }

    pub fn seeds(&self) -> Vec<u64> {
        let mut seeds: Vec<u64> = self.rows.iter().map(|r| r.seed).collect();
        seeds.sort_unstable();
        seeds.dedup();
        seeds
    }

    /// Seeds on which `winner` has strictly lower test MAPE and strictly
    /// higher test CR than every variant in `others`.
    pub fn strict_wins(&self, winner: Variant, others: &[Variant]) -> usize {
        self.seeds()
            .into_iter()
            .filter(|&seed| {
                let Some(w) = self.row(winner, seed) else { return false };
                others.iter().all(|&o| {
                    self.row(o, seed)
                        .is_some_and(|r| w.test_mape < r.test_mape && w.test_cr > r.test_cr)
                })
            })
            .count()
    }

    /// Mean test MAPE and CR per variant, in first-seen order.
    pub fn means(&self) -> Vec<(Variant, f64, f64)> {
        let mut out: Vec<(Variant, f64, f64)> = Vec::new();
        for r in &self.rows {
            if out.iter().any(|(v, _, _)| *v == r.variant) {
                continue;
            }
            let rows: Vec<&AblationRow> = self.rows.iter().filter(|x| x.variant == r.variant).collect();
            let n = rows.len() as f64;
            out.push((
                r.variant,
                rows.iter().map(|x| x.test_mape).sum::<f64>() / n,
                rows.iter().map(|x| x.test_cr).sum::<f64>() / n,
            ));
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("variant,seed,best_epoch,val_mape,test_mape,test_cr\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.variant.name(),
                r.seed,
                r.best_epoch,
                r.val_mape,
                r.test_mape,
                r.test_cr
            ));
        }
        s
    }
}

impl fmt::Display for AblationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<14} {:>6} {:>10} {:>9}", "variant", "seed", "MAPE", "CR")?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<14} {:>6} {:>10.4} {:>8.2}%",
                r.variant.name(),
                r.seed,
                r.test_mape,
                100.0 * r.test_cr
            )?;
        }
        for (v, m, c) in self.means() {
            writeln!(f, "{:<14} {:>6} {:>10.4} {:>8.2}%", v.name(), "mean", m, 100.0 * c)?;
        }
        Ok(())
    }
}

/// Trains every (variant, seed) pair with otherwise identical settings and
/// scores each on the test split. Runs are independent and execute in
/// parallel; output order follows `variants` then `seeds`.
pub fn run_ablation(
    split: &DatasetSplit,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    variants: &[Variant],
    seeds: &[u64],
) -> Result<AblationReport, TrainError> {
    train_config.validate()?;
    model_config.validate()?;
    let jobs: Vec<(Variant, u64)> = variants
        .iter()
        .flat_map(|&v| seeds.iter().map(move |&s| (v, s)))
        .collect();
    let results: Vec<(AblationRow, MetricsReport)> = jobs
        .par_iter()
        .map(|&(variant, seed)| {
            let config = ModelConfig {
                variant,
                ..model_config.clone()
            };
            let tc = TrainConfig {
                seed,
                ..train_config.clone()
            };
            let run = train_variant(split, &config, &tc)?;
            let mut report = evaluate_model(&run.model, &split.test)?;
            report.model = format!("{}-seed{seed}", variant.name());
            let row = AblationRow {
                variant,
                seed,
                best_epoch: run.outcome.best_epoch,
                val_mape: run.outcome.best_val_mape,
                test_mape: report.mape,
                test_cr: report.cr,
            };
            Ok((row, report))
        })
        .collect::<Result<_, TrainError>>()?;
    let (rows, reports) = results.into_iter().unzip();
    Ok(AblationReport { rows, reports })
}
