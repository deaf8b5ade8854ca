//! Evaluation metrics and report tables.
//!
//! MAPE is computed over positive labels only; CR counts a sample compliant
//! when `lo <= y_hat / y <= hi`, and a zero-label sample compliant when its
//! prediction rounds to zero.

use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::synth::{CampaignSample, Industry};

pub const CR_LOW: f64 = 0.8;
pub const CR_HIGH: f64 = 1.2;
/// Zero-label predictions at or below this count as compliant.
pub const ZERO_LABEL_TOLERANCE: f64 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("every label is zero; MAPE is undefined")]
    NoPositiveLabels,
    #[error("no samples to evaluate")]
    Empty,
    #[error("{predictions} predictions for {labels} labels")]
    LengthMismatch { predictions: usize, labels: usize },
    #[error("thresholds must be sorted ascending within (0, 1]")]
    InvalidTaus,
    #[error("bucket edges must be strictly ascending")]
    InvalidEdges,
}

fn check_lengths(predictions: &[f64], labels: &[u64]) -> Result<(), MetricsError> {
    if predictions.len() != labels.len() {
        return Err(MetricsError::LengthMismatch {
            predictions: predictions.len(),
            labels: labels.len(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mape {
    pub value: f64,
    pub evaluated: usize,
    pub excluded_zero: usize,
}

pub fn mape(predictions: &[f64], labels: &[u64]) -> Result<Mape, MetricsError> {
    check_lengths(predictions, labels)?;
    let mut total = 0.0;
    let mut evaluated = 0;
    for (&p, &y) in predictions.iter().zip(labels) {
        if y > 0 {
            total += (p - y as f64).abs() / y as f64;
            evaluated += 1;
        }
    }
    if evaluated == 0 {
        return Err(MetricsError::NoPositiveLabels);
    }
    Ok(Mape {
        value: total / evaluated as f64,
        evaluated,
        excluded_zero: labels.len() - evaluated,
    })
}

pub fn is_compliant(prediction: f64, label: u64, lo: f64, hi: f64) -> bool {
    if label == 0 {
        return prediction <= ZERO_LABEL_TOLERANCE;
    }
    let ratio = prediction / label as f64;
    lo <= ratio && ratio <= hi
}

pub fn compliance_rate_within(predictions: &[f64], labels: &[u64], lo: f64, hi: f64) -> Result<f64, MetricsError> {
    check_lengths(predictions, labels)?;
    if labels.is_empty() {
        return Err(MetricsError::Empty);
    }
    let hits = predictions
        .iter()
        .zip(labels)
        .filter(|(&p, &y)| is_compliant(p, y, lo, hi))
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Fraction of samples with `0.8 <= y_hat / y <= 1.2`.
pub fn compliance_rate(predictions: &[f64], labels: &[u64]) -> Result<f64, MetricsError> {
    compliance_rate_within(predictions, labels, CR_LOW, CR_HIGH)
}

/// `tau = 0.05, 0.10, ..., 0.50`.
pub fn default_taus() -> Vec<f64> {
    (1..=10).map(|k| k as f64 / 20.0).collect()
}

pub fn cr_tau_curve(predictions: &[f64], labels: &[u64], taus: &[f64]) -> Result<Vec<(f64, f64)>, MetricsError> {
    if taus.iter().any(|&t| !(t > 0.0 && t <= 1.0)) || taus.windows(2).any(|w| w[0] >= w[1]) {
        return Err(MetricsError::InvalidTaus);
    }
    taus.iter()
        .map(|&t| Ok((t, compliance_rate_within(predictions, labels, 1.0 - t, 1.0 + t)?)))
        .collect()
}

/// Ranking-model baseline: the aggregated pCTCVR itself.
pub fn rm_baseline(sample: &CampaignSample) -> f64 {
    sample.z
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndustryRow {
    pub industry: Industry,
    pub n: usize,
    pub mape: Option<f64>,
    pub cr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketRow {
    /// Labels in `[lower, upper)`.
    pub lower: u64,
    pub upper: u64,
    pub n: usize,
    pub cr_f: Option<f64>,
    pub cr_g: Option<f64>,
    pub cr_hat: Option<f64>,
    pub mean_lambda: Option<f64>,
}

/// Expert-level outputs aligned with the final predictions, when a model has
/// them.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExpertColumns<'a> {
    pub y_f: Option<&'a [f64]>,
    pub y_g: Option<&'a [f64]>,
    pub lambda: Option<&'a [f64]>,
}

fn subset_cr(values: Option<&[f64]>, labels: &[u64], idx: &[usize]) -> Option<f64> {
    let values = values?;
    if idx.is_empty() {
        return None;
    }
    let p: Vec<f64> = idx.iter().map(|&i| values[i]).collect();
    let y: Vec<u64> = idx.iter().map(|&i| labels[i]).collect();
    compliance_rate(&p, &y).ok()
}

/// Per-label-bucket CR of each expert and of the fused prediction, with mean
/// gate weight. Buckets are `[edges[k], edges[k + 1])`.
pub fn per_bucket_report(
    y_hat: &[f64],
    experts: ExpertColumns<'_>,
    labels: &[u64],
    edges: &[u64],
) -> Result<Vec<BucketRow>, MetricsError> {
    check_lengths(y_hat, labels)?;
    if edges.len() < 2 || edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(MetricsError::InvalidEdges);
    }
    Ok(edges
        .windows(2)
        .map(|w| {
            let idx: Vec<usize> = (0..labels.len())
                .filter(|&i| w[0] <= labels[i] && labels[i] < w[1])
                .collect();
            let mean_lambda = experts.lambda.filter(|_| !idx.is_empty()).map(|l| {
                idx.iter().map(|&i| l[i]).sum::<f64>() / idx.len() as f64
            });
            BucketRow {
                lower: w[0],
                upper: w[1],
                n: idx.len(),
                cr_f: subset_cr(experts.y_f, labels, &idx),
                cr_g: subset_cr(experts.y_g, labels, &idx),
                cr_hat: subset_cr(Some(y_hat), labels, &idx),
                mean_lambda,
            }
        })
        .collect())
}

/// Bucket edges splitting labels into `parts` groups of roughly equal size.
/// Ties can merge groups, so fewer buckets may come back.
pub fn quantile_edges(labels: &[u64], parts: usize) -> Vec<u64> {
    if labels.is_empty() || parts == 0 {
        return Vec::new();
    }
    let mut sorted = labels.to_vec();
    sorted.sort_unstable();
    let mut edges = vec![sorted[0]];
    for k in 1..parts {
        let cut = sorted[k * sorted.len() / parts];
        if cut > *edges.last().expect("non-empty") {
            edges.push(cut);
        }
    }
    let top = sorted[sorted.len() - 1] + 1;
    if top > *edges.last().expect("non-empty") {
        edges.push(top);
    }
    edges
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model: String,
    pub n: usize,
    pub mape: f64,
    pub excluded_zero: usize,
    pub cr: f64,
    pub cr_tau: Vec<(f64, f64)>,
    pub industries: Vec<IndustryRow>,
    pub buckets: Vec<BucketRow>,
}

impl MetricsReport {
    /// Full report over a sample set; buckets are label terciles.
    pub fn build(
        model: &str,
        samples: &[CampaignSample],
        y_hat: &[f64],
        experts: ExpertColumns<'_>,
    ) -> Result<Self, MetricsError> {
        let labels: Vec<u64> = samples.iter().map(|s| s.label).collect();
        let m = mape(y_hat, &labels)?;
        let cr = compliance_rate(y_hat, &labels)?;
        let cr_tau = cr_tau_curve(y_hat, &labels, &default_taus())?;
        let industries = Industry::ALL
            .iter()
            .map(|&industry| {
                let idx: Vec<usize> = (0..samples.len()).filter(|&i| samples[i].industry == industry).collect();
                let p: Vec<f64> = idx.iter().map(|&i| y_hat[i]).collect();
                let y: Vec<u64> = idx.iter().map(|&i| labels[i]).collect();
                IndustryRow {
                    industry,
                    n: idx.len(),
                    mape: mape(&p, &y).ok().map(|m| m.value),
                    cr: compliance_rate(&p, &y).ok(),
                }
            })
            .collect();
        let edges = quantile_edges(&labels, 3);
        let buckets = per_bucket_report(y_hat, experts, &labels, &edges)?;
        Ok(Self {
            model: model.to_string(),
            n: samples.len(),
            mape: m.value,
            excluded_zero: m.excluded_zero,
            cr,
            cr_tau,
            industries,
            buckets,
        })
    }

    /// Writes `<stem>.json`, `<stem>_cr_tau.csv`, `<stem>_industries.csv` and
    /// `<stem>_buckets.csv` into `dir`.
    pub fn write_files(&self, dir: &Path, stem: &str) -> std::io::Result<()> {
        fs::create_dir_all(dir)?;
        let json = serde_json::to_string_pretty(self).map_err(std::io::Error::other)?;
        fs::write(dir.join(format!("{stem}.json")), json + "\n")?;

        let mut tau = String::from("tau,cr\n");
        for (t, c) in &self.cr_tau {
            tau.push_str(&format!("{t},{c}\n"));
        }
        fs::write(dir.join(format!("{stem}_cr_tau.csv")), tau)?;

        let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        let mut ind = String::from("industry,n,mape,cr\n");
        for r in &self.industries {
            ind.push_str(&format!("{},{},{},{}\n", r.industry, r.n, opt(r.mape), opt(r.cr)));
        }
        fs::write(dir.join(format!("{stem}_industries.csv")), ind)?;

        let mut buckets = String::from("lower,upper,n,cr_f,cr_g,cr_hat,mean_lambda\n");
        for b in &self.buckets {
            buckets.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                b.lower,
                b.upper,
                b.n,
                opt(b.cr_f),
                opt(b.cr_g),
                opt(b.cr_hat),
                opt(b.mean_lambda)
            ));
        }
        fs::write(dir.join(format!("{stem}_buckets.csv")), buckets)
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let pct = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{:.2}%", 100.0 * x));
        writeln!(f, "model {}  n={}  zero labels excluded from MAPE: {}", self.model, self.n, self.excluded_zero)?;
        writeln!(f, "  MAPE {:.4}  CR {}", self.mape, pct(Some(self.cr)))?;
        writeln!(f, "  {:<14} {:>7} {:>8} {:>8}", "industry", "n", "MAPE", "CR")?;
        for r in &self.industries {
            let m = r.mape.map_or("-".to_string(), |x| format!("{x:.4}"));
            writeln!(f, "  {:<14} {:>7} {:>8} {:>8}", r.industry.name(), r.n, m, pct(r.cr))?;
        }
        writeln!(f, "  {:<16} {:>7} {:>8} {:>8} {:>8} {:>7}", "labels", "n", "CR f", "CR g", "CR", "lambda")?;
        for b in &self.buckets {
            let lam = b.mean_lambda.map_or("-".to_string(), |x| format!("{x:.3}"));
            writeln!(
                f,
                "  {:<16} {:>7} {:>8} {:>8} {:>8} {:>7}",
                format!("[{}, {})", b.lower, b.upper),
                b.n,
                pct(b.cr_f),
                pct(b.cr_g),
                pct(b.cr_hat),
                lam
            )?;
        }
        write!(f, "  CR_tau")?;
        for (t, c) in &self.cr_tau {
            write!(f, " {t:.2}:{:.3}", c)?;
        }
        writeln!(f)
    }
}
