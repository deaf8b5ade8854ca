//! Synthetic campaign-level advertising data.
//!
//! Each sample is one campaign snapshot taken `t_k - t_0` minutes after
//! deployment. The generator draws a heavy-tailed campaign scale, realized
//! conversions, a multiplicative ranking-model bias, post-impression counts,
//! and the subset of conversions already tracked given the delay tables.
//!
//! The aggregated pCTCVR is coupled to the realized label,
//! `z = b * y * noise`, so that the PCOC proxy task is learnable. This is the
//! central simulation assumption: the real `z` comes from a production
//! ranking model.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pcoc::pcoc_label;

pub const NUM_PRODUCTS: u32 = 1141;
pub const NUM_OBJECTIVES: u32 = 8;
pub const NUM_DAYS: u8 = 8;
/// Conversions count toward the label when they land within three days.
pub const ATTRIBUTION_WINDOW_MINUTES: f64 = 3.0 * 24.0 * 60.0;

/// Decile quantiles p10..p90 of the conversion delay, in minutes.
pub const DELAY_DECILES: [[f64; 9]; 4] = [
    [7.0, 11.0, 17.0, 27.0, 46.0, 103.0, 305.0, 999.0, 2770.0],
    [1.0, 3.0, 5.0, 7.0, 20.0, 88.0, 294.0, 569.0, 931.0],
    [3.0, 4.0, 5.0, 7.0, 9.0, 13.0, 18.0, 29.0, 74.0],
    [9.0, 18.0, 26.0, 35.0, 50.0, 85.0, 269.0, 1176.0, 4434.0],
];

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("calibration target violated: {target} ({detail})")]
    Calibration { target: &'static str, detail: String },
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
    #[error("unknown campaign type `{0}`")]
    UnknownCampaignType(String),
    #[error("unknown industry `{0}`")]
    UnknownIndustry(String),
    #[error("uniform draw {0} outside [0, 1]")]
    InvalidDraw(f64),
    #[error("negative value {value} for feature `{feature}`")]
    NegativeFeature { feature: &'static str, value: f64 },
    #[error("dataset is missing column `{0}`")]
    MissingColumn(String),
    #[error("dataset has unknown column `{0}`")]
    UnknownColumn(String),
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("sample {campaign_id} has day tag {day}, expected 1..={max}", max = NUM_DAYS)]
    MissingDay { campaign_id: u64, day: u8 },
    #[error("split produced an empty training set")]
    EmptyTrain,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Industry {
    #[serde(rename = "Games")]
    Games,
    #[serde(rename = "Media")]
    Media,
    #[serde(rename = "E-commerce")]
    ECommerce,
    #[serde(rename = "Life Services")]
    LifeServices,
}

impl Industry {
    pub const ALL: [Industry; 4] = [
        Industry::Games,
        Industry::Media,
        Industry::ECommerce,
        Industry::LifeServices,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Industry::Games => "Games",
            Industry::Media => "Media",
            Industry::ECommerce => "E-commerce",
            Industry::LifeServices => "Life Services",
        }
    }
}

impl fmt::Display for Industry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Industry {
    type Err = SynthError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Industry::ALL
            .into_iter()
            .find(|i| i.name() == s)
            .ok_or_else(|| SynthError::UnknownIndustry(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CampaignType {
    App,
    AppAdvance,
    SitePage,
    LiveStream,
}

impl CampaignType {
    pub const ALL: [CampaignType; 4] = [
        CampaignType::App,
        CampaignType::AppAdvance,
        CampaignType::SitePage,
        CampaignType::LiveStream,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            CampaignType::App => "APP",
            CampaignType::AppAdvance => "APP_ADVANCE",
            CampaignType::SitePage => "SITE_PAGE",
            CampaignType::LiveStream => "LIVE_STREAM",
        }
    }
}

impl fmt::Display for CampaignType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CampaignType {
    type Err = SynthError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        CampaignType::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| SynthError::UnknownCampaignType(s.to_string()))
    }
}

/// Piecewise-linear inverse CDFs of conversion delay per campaign type,
/// through `(0, 0)`, the nine deciles, and `(1, 2 * p90)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayTable {
    pub deciles: [[f64; 9]; 4],
}

impl Default for DelayTable {
    fn default() -> Self {
        Self {
            deciles: DELAY_DECILES,
        }
    }
}

impl DelayTable {
    /// Every conversion lands immediately.
    pub fn zero() -> Self {
        Self {
            deciles: [[0.0; 9]; 4],
        }
    }

    fn knots(&self, t: CampaignType) -> [f64; 11] {
        let row = &self.deciles[t.index()];
        let mut knots = [0.0; 11];
        knots[1..10].copy_from_slice(row);
        knots[10] = 2.0 * row[8];
        knots
    }

    pub fn sample(&self, t: CampaignType, u: f64) -> Result<f64, SynthError> {
        if !(0.0..=1.0).contains(&u) {
            return Err(SynthError::InvalidDraw(u));
        }
        let knots = self.knots(t);
        let pos = u * 10.0;
        let k = (pos.floor() as usize).min(9);
        let frac = pos - k as f64;
        Ok(knots[k] + frac * (knots[k + 1] - knots[k]))
    }

    /// Probability that a delay is at most `minutes`.
    pub fn cdf(&self, t: CampaignType, minutes: f64) -> f64 {
        let knots = self.knots(t);
        if minutes < 0.0 {
            return 0.0;
        }
        for k in 0..10 {
            if minutes < knots[k + 1] {
                let width = knots[k + 1] - knots[k];
                let frac = if width > 0.0 { (minutes - knots[k]) / width } else { 1.0 };
                return (k as f64 + frac) / 10.0;
            }
        }
        1.0
    }
}

/// Delay in minutes for the `u`-quantile of `t`'s published delay deciles.
pub fn sample_delay(t: CampaignType, u: f64) -> Result<f64, SynthError> {
    DelayTable::default().sample(t, u)
}

/// Same as [`sample_delay`] with the campaign type given by name.
pub fn sample_delay_named(campaign_type: &str, u: f64) -> Result<f64, SynthError> {
    sample_delay(campaign_type.parse()?, u)
}

/// One campaign snapshot. Field order is the on-disk column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignSample {
    pub campaign_id: u64,
    pub day: u8,
    pub industry: Industry,
    pub product_id: u32,
    pub objective_id: u32,
    pub campaign_type: CampaignType,
    pub impressions: u64,
    pub clicks: u64,
    pub views: u64,
    pub tracked_conversions: u64,
    /// Aggregated pCTCVR over the campaign's impressions.
    pub z: f64,
    pub pcoc_prior_industry: f64,
    pub pcoc_prior_product: f64,
    pub pcoc_prior_account: f64,
    pub churn_industry: f64,
    pub churn_product: f64,
    pub churn_account: f64,
    pub t0: f64,
    pub tk: f64,
    /// Conversions attributed within three days of impression.
    pub label: u64,
}

pub const COLUMNS: [&str; 20] = [
    "campaign_id",
    "day",
    "industry",
    "product_id",
    "objective_id",
    "campaign_type",
    "impressions",
    "clicks",
    "views",
    "tracked_conversions",
    "z",
    "pcoc_prior_industry",
    "pcoc_prior_product",
    "pcoc_prior_account",
    "churn_industry",
    "churn_product",
    "churn_account",
    "t0",
    "tk",
    "label",
];

impl CampaignSample {
    pub fn window_minutes(&self) -> f64 {
        self.tk - self.t0
    }

    pub fn pcoc(&self) -> f64 {
        pcoc_label(self.z, self.label)
    }
}

pub const NUM_DENSE: usize = 13;

/// `log10(1 + v)` for a non-negative count or aggregate.
pub fn log_transform(feature: &'static str, v: f64) -> Result<f64, SynthError> {
    if v < 0.0 || v.is_nan() {
        return Err(SynthError::NegativeFeature { feature, value: v });
    }
    Ok((1.0 + v).log10())
}

/// Dense model inputs: log-transformed counts and aggregates, then the bias
/// priors and churn rates untransformed.
pub fn dense_features(s: &CampaignSample) -> Result<[f64; NUM_DENSE], SynthError> {
    Ok([
        log_transform("impressions", s.impressions as f64)?,
        log_transform("clicks", s.clicks as f64)?,
        log_transform("views", s.views as f64)?,
        log_transform("tracked_conversions", s.tracked_conversions as f64)?,
        log_transform("z", s.z)?,
        log_transform("window_minutes", s.window_minutes())?,
        s.pcoc_prior_industry,
        s.pcoc_prior_product,
        s.pcoc_prior_account,
        s.churn_industry,
        s.churn_product,
        s.churn_account,
        // tracked share of the aggregated pCTCVR, a direct delay signal
        s.tracked_conversions as f64 / (1.0 + s.z),
    ])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub n_samples: usize,
    pub seed: u64,
    /// Log-normal body of the campaign scale (expected conversions).
    pub scale_log_mean: f64,
    pub scale_log_sigma: f64,
    /// Share of campaigns drawn from the Pareto tail.
    pub tail_weight: f64,
    pub tail_min: f64,
    pub tail_exponent: f64,
    pub max_scale: f64,
    /// Log-normal sigma of the ranking-model bias `b`.
    pub pcoc_sigma: f64,
    /// Log-scale noise of `z` around `b * y`, shrinking as `1 / sqrt(y + 1)`.
    pub z_noise: f64,
    pub window_min_minutes: f64,
    pub window_max_minutes: f64,
    /// Multiplies every snapshot window without changing any other draw.
    pub window_scale: f64,
    pub type_weights: [f64; 4],
    pub delays: DelayTable,
    /// Reject configs whose analytic label mean or PCOC spread miss targets.
    pub calibrate: bool,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            n_samples: 100_000,
            seed: 20240101,
            scale_log_mean: 1.2,
            scale_log_sigma: 1.6,
            tail_weight: 0.08,
            tail_min: 60.0,
            tail_exponent: 1.6,
            max_scale: 40_000.0,
            pcoc_sigma: 0.35,
            z_noise: 0.6,
            window_min_minutes: 60.0,
            window_max_minutes: ATTRIBUTION_WINDOW_MINUTES,
            window_scale: 1.0,
            type_weights: [0.35, 0.2, 0.25, 0.2],
            delays: DelayTable::default(),
            calibrate: true,
        }
    }
}

// Variance shares of log b across industry, product, account and campaign.
const BIAS_SHARES: [f64; 4] = [0.08, 0.33, 0.33, 0.26];
const PRIOR_NOISE: [f64; 3] = [0.02, 0.05, 0.1];

impl GeneratorConfig {
    /// Expected campaign scale under the log-normal / truncated-Pareto mixture.
    pub fn expected_scale(&self) -> f64 {
        let body = (self.scale_log_mean + 0.5 * self.scale_log_sigma.powi(2)).exp();
        let a = self.tail_exponent;
        let ratio = self.tail_min / self.max_scale;
        let tail = if (a - 1.0).abs() < 1e-12 {
            self.tail_min * (1.0 / ratio).ln() / (1.0 - ratio)
        } else {
            a * self.tail_min / (a - 1.0) * (1.0 - ratio.powf(a - 1.0)) / (1.0 - ratio.powf(a))
        };
        (1.0 - self.tail_weight) * body + self.tail_weight * tail
    }

    /// Approximate p99 / p50 of PCOC labels for single-conversion campaigns,
    /// the widest part of the distribution.
    pub fn pcoc_spread(&self) -> f64 {
        let log_sd = (self.pcoc_sigma.powi(2) + self.z_noise.powi(2) / 2.0).sqrt();
        (2.326 * log_sd).exp()
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidConfig(m.to_string()));
        if self.n_samples == 0 {
            return bad("n_samples must be positive");
        }
        if !(self.scale_log_sigma >= 0.0 && self.pcoc_sigma >= 0.0 && self.z_noise >= 0.0) {
            return bad("sigmas and noise must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.tail_weight) || self.tail_exponent <= 0.0 || self.tail_min <= 0.0 {
            return bad("tail parameters out of range");
        }
        if self.max_scale <= self.tail_min {
            return bad("max_scale must exceed tail_min");
        }
        if !(self.window_min_minutes > 0.0
            && self.window_max_minutes >= self.window_min_minutes
            && self.window_scale > 0.0)
        {
            return bad("window bounds must be positive and ordered");
        }
        if self.type_weights.iter().any(|&w| w < 0.0) || self.type_weights.iter().sum::<f64>() <= 0.0 {
            return bad("campaign type weights must be non-negative with a positive sum");
        }
        if self.calibrate {
            let mean = self.expected_scale();
            if !(15.0..=40.0).contains(&mean) {
                return Err(SynthError::Calibration {
                    target: "label mean in [15, 40]",
                    detail: format!("expected mean {mean:.2}"),
                });
            }
            let spread = self.pcoc_spread();
            if spread >= 5.0 {
                return Err(SynthError::Calibration {
                    target: "PCOC p99/p50 < 5",
                    detail: format!("approximate spread {spread:.2}"),
                });
            }
        }
        Ok(())
    }
}

struct Population {
    product_industry: Vec<Industry>,
    industry_bias: [f64; 4],
    industry_prior: [f64; 4],
    industry_churn: [f64; 4],
    product_bias: Vec<f64>,
    product_prior: Vec<f64>,
    product_churn: Vec<f64>,
    product_cvr: Vec<f64>,
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

impl Population {
    fn draw(config: &GeneratorConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(0);
        let sd = |share: f64| config.pcoc_sigma * share.sqrt();
        let mut industry_bias = [0.0; 4];
        let mut industry_prior = [0.0; 4];
        let mut industry_churn = [0.0; 4];
        for k in 0..4 {
            industry_bias[k] = sd(BIAS_SHARES[0]) * normal(&mut rng);
            industry_prior[k] = (industry_bias[k] + PRIOR_NOISE[0] * normal(&mut rng)).exp();
            industry_churn[k] = rng.random_range(0.05..0.4);
        }
        let n = NUM_PRODUCTS as usize;
        let mut pop = Population {
            product_industry: Vec::with_capacity(n),
            industry_bias,
            industry_prior,
            industry_churn,
            product_bias: Vec::with_capacity(n),
            product_prior: Vec::with_capacity(n),
            product_churn: Vec::with_capacity(n),
            product_cvr: Vec::with_capacity(n),
        };
        for _ in 0..n {
            pop.product_industry.push(Industry::ALL[rng.random_range(0..4)]);
            let bias = sd(BIAS_SHARES[1]) * normal(&mut rng);
            pop.product_bias.push(bias);
            pop.product_prior.push((bias + PRIOR_NOISE[1] * normal(&mut rng)).exp());
            pop.product_churn.push(rng.random_range(0.02..0.6));
            // conversions per click
            pop.product_cvr.push(0.05 * (0.4 * normal(&mut rng)).exp());
        }
        pop
    }
}

fn pick_type<R: Rng + ?Sized>(weights: &[f64; 4], rng: &mut R) -> CampaignType {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (k, &w) in weights.iter().enumerate() {
        if u < w {
            return CampaignType::ALL[k];
        }
        u -= w;
    }
    CampaignType::ALL[3]
}

fn poisson<R: Rng + ?Sized>(lambda: f64, rng: &mut R) -> u64 {
    if lambda <= 0.0 {
        return 0;
    }
    let draw: f64 = Poisson::new(lambda).expect("positive finite rate").sample(rng);
    draw as u64
}

fn generate_one(config: &GeneratorConfig, pop: &Population, index: usize) -> Result<CampaignSample, SynthError> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(index as u64 + 1);

    let product_id = rng.random_range(0..NUM_PRODUCTS);
    let industry = pop.product_industry[product_id as usize];
    let campaign_type = pick_type(&config.type_weights, &mut rng);
    let objective_id = campaign_type.index() as u32 * 2 + rng.random_range(0..2);
    let day = rng.random_range(1..=NUM_DAYS);

    let scale = if rng.random::<f64>() < config.tail_weight {
        let u: f64 = rng.random();
        config.tail_min * (1.0 - u).powf(-1.0 / config.tail_exponent)
    } else {
        (config.scale_log_mean + config.scale_log_sigma * normal(&mut rng)).exp()
    }
    .min(config.max_scale);
    let label = poisson(scale, &mut rng);

    let sd = |share: f64| config.pcoc_sigma * share.sqrt();
    let account_bias = sd(BIAS_SHARES[2]) * normal(&mut rng);
    let residual = sd(BIAS_SHARES[3]) * normal(&mut rng);
    let log_b = pop.industry_bias[industry.index()] + pop.product_bias[product_id as usize] + account_bias + residual;
    let bias = log_b.exp();
    let account_prior = (account_bias + PRIOR_NOISE[2] * normal(&mut rng)).exp();

    let xi = normal(&mut rng);
    let z = if label > 0 {
        let sd = config.z_noise / ((label + 1) as f64).sqrt();
        bias * label as f64 * (sd * xi - 0.5 * sd * sd).exp()
    } else if config.z_noise > 0.0 {
        bias * scale
    } else {
        // A noise-free ranking model reproduces realized conversions exactly.
        0.0
    };

    let span = (config.window_max_minutes / config.window_min_minutes).ln();
    let window = config.window_min_minutes * (rng.random::<f64>() * span).exp() * config.window_scale;
    let t0 = (day - 1) as f64 * 1440.0 + rng.random_range(0.0..1440.0);
    let tk = t0 + window;

    let cvr = pop.product_cvr[product_id as usize] * (0.3 * normal(&mut rng)).exp();
    let clicks = poisson(scale / cvr, &mut rng);
    let ctr = 0.02 * (0.3 * normal(&mut rng)).exp();
    let impressions = clicks + poisson(clicks as f64 * (1.0 / ctr - 1.0), &mut rng) + 1;
    let view_rate = rng.random_range(0.2..0.6);
    let views = Binomial::new(impressions, view_rate).expect("valid binomial").sample(&mut rng);

    let churn_account = rng.random_range(0.0..0.5);

    let cap = config.delays.cdf(campaign_type, ATTRIBUTION_WINDOW_MINUTES);
    let mut tracked = 0;
    for _ in 0..label {
        let position: f64 = rng.random();
        let u: f64 = rng.random();
        let delay = config.delays.sample(campaign_type, u * cap)?;
        if delay <= (1.0 - position) * window {
            tracked += 1;
        }
    }

    Ok(CampaignSample {
        campaign_id: index as u64,
        day,
        industry,
        product_id,
        objective_id,
        campaign_type,
        impressions,
        clicks,
        views,
        tracked_conversions: tracked,
        z,
        pcoc_prior_industry: pop.industry_prior[industry.index()],
        pcoc_prior_product: pop.product_prior[product_id as usize],
        pcoc_prior_account: account_prior,
        churn_industry: pop.industry_churn[industry.index()],
        churn_product: pop.product_churn[product_id as usize],
        churn_account,
        t0,
        tk,
        label,
    })
}

/// Generates `config.n_samples` campaigns. Each sample draws from its own
/// stream of the master seed, so output is identical however the work is
/// sharded.
pub fn generate_campaigns(config: &GeneratorConfig) -> Result<Vec<CampaignSample>, SynthError> {
    config.validate()?;
    let pop = Population::draw(config);
    (0..config.n_samples).map(|i| generate_one(config, &pop, i)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetStats {
    pub n: usize,
    pub label_mean: f64,
    pub label_median: f64,
    pub label_max: u64,
    pub zero_fraction: f64,
    pub pcoc_p50: f64,
    pub pcoc_p99: f64,
}

fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let idx = ((sorted.len() - 1) as f64 * q).round() as usize;
    sorted[idx]
}

impl DatasetStats {
    pub fn of(samples: &[CampaignSample]) -> Option<Self> {
        if samples.is_empty() {
            return None;
        }
        let n = samples.len();
        let mut labels: Vec<f64> = samples.iter().map(|s| s.label as f64).collect();
        labels.sort_by(f64::total_cmp);
        let mut pcoc: Vec<f64> = samples.iter().map(CampaignSample::pcoc).collect();
        pcoc.sort_by(f64::total_cmp);
        Some(Self {
            n,
            label_mean: labels.iter().sum::<f64>() / n as f64,
            label_median: quantile_sorted(&labels, 0.5),
            label_max: samples.iter().map(|s| s.label).max().unwrap_or(0),
            zero_fraction: samples.iter().filter(|s| s.label == 0).count() as f64 / n as f64,
            pcoc_p50: quantile_sorted(&pcoc, 0.5),
            pcoc_p99: quantile_sorted(&pcoc, 0.99),
        })
    }

    /// Long-tail and narrow-PCOC contract on a generated dataset.
    pub fn check(&self) -> Result<(), SynthError> {
        let fail = |target: &'static str, detail: String| Err(SynthError::Calibration { target, detail });
        if !(15.0..=40.0).contains(&self.label_mean) {
            return fail("label mean in [15, 40]", format!("mean {:.2}", self.label_mean));
        }
        if !(self.zero_fraction > 0.01 && self.zero_fraction < 0.5) {
            return fail("zero-label fraction in (0.01, 0.5)", format!("{:.4}", self.zero_fraction));
        }
        if (self.label_max as f64) < 1000.0 * self.label_median {
            return fail(
                "max label >= 1000 x median",
                format!("max {} median {}", self.label_max, self.label_median),
            );
        }
        if self.pcoc_p99 / self.pcoc_p50 >= 5.0 {
            return fail("PCOC p99/p50 < 5", format!("{:.3}", self.pcoc_p99 / self.pcoc_p50));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<CampaignSample>,
    pub val: Vec<CampaignSample>,
    pub test: Vec<CampaignSample>,
}

/// Days 1-7 are shuffled and split 9:1 into train and validation; day 8 is
/// the test set.
pub fn split_dataset(samples: &[CampaignSample], seed: u64) -> Result<DatasetSplit, SynthError> {
    let mut early = Vec::new();
    let mut test = Vec::new();
    for s in samples {
        match s.day {
            1..=7 => early.push(s.clone()),
            NUM_DAYS => test.push(s.clone()),
            day => {
                return Err(SynthError::MissingDay {
                    campaign_id: s.campaign_id,
                    day,
                })
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    early.shuffle(&mut rng);
    let n_train = early.len() * 9 / 10;
    if n_train == 0 {
        return Err(SynthError::EmptyTrain);
    }
    let val = early.split_off(n_train);
    Ok(DatasetSplit {
        train: early,
        val,
        test,
    })
}

pub fn write_dataset<W: Write>(samples: &[CampaignSample], writer: W) -> Result<(), SynthError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    w.write_record(COLUMNS)?;
    for s in samples {
        w.serialize(s)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset<R: Read>(reader: R) -> Result<Vec<CampaignSample>, SynthError> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = r.headers()?.clone();
    if let Some(unknown) = headers.iter().find(|h| !COLUMNS.contains(h)) {
        return Err(SynthError::UnknownColumn(unknown.to_string()));
    }
    if let Some(missing) = COLUMNS.iter().find(|c| !headers.iter().any(|h| h == **c)) {
        return Err(SynthError::MissingColumn(missing.to_string()));
    }
    let mut out = Vec::new();
    for record in r.deserialize::<CampaignSample>() {
        out.push(record.map_err(|e| SynthError::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn save_dataset(samples: &[CampaignSample], path: &Path) -> Result<(), SynthError> {
    write_dataset(samples, BufWriter::new(File::create(path)?))
}

pub fn load_dataset(path: &Path) -> Result<Vec<CampaignSample>, SynthError> {
    read_dataset(BufReader::new(File::open(path)?))
}
