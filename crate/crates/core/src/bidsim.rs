//! Auto-bidding under delayed conversion feedback.
//!
//! Each campaign bids `coef * target_cpa * cvr` per offered impression and
//! wins it with probability `1 - exp(-coef / competition)`. Every interval
//! the controller compares the spend per signalled conversion against the
//! target CPA and nudges `coef` multiplicatively. Conversions land after a
//! delay drawn from the campaign type's delay table, so a controller that
//! trusts tracked counts alone sees an inflated CPA early on.
//!
//! In an A/B run both arms of a campaign get half the traffic and budget and
//! consume the same market draws, so any difference comes from the policy.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{CR_HIGH, CR_LOW};
use crate::model::{encode, Model};
use crate::synth::{CampaignSample, CampaignType, DelayTable, Industry};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("horizon of {horizon} minutes is shorter than one {interval}-minute adjustment interval")]
    HorizonTooShort { horizon: f64, interval: f64 },
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("scenario asks for a model predictor but no model was supplied")]
    MissingModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimCampaign {
    pub id: u64,
    pub campaign_type: CampaignType,
    pub industry: Industry,
    pub budget: f64,
    pub target_cpa: f64,
    /// Conversion probability of a won impression.
    pub cvr: f64,
    pub impressions_per_interval: u32,
    /// Ranking-model bias applied to the pCTCVR seen by a model predictor.
    #[serde(default = "one")]
    pub rm_bias: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarketConfig {
    /// Coefficient at which the win probability is `1 - 1/e`.
    pub competition: f64,
    /// Paid price as a fraction of the bid.
    pub price_ratio: f64,
    pub ctr: f64,
    pub view_rate: f64,
}

impl Default for MarketConfig {
    fn default() -> Self {
        Self {
            competition: 1.0,
            price_ratio: 1.0,
            ctr: 0.02,
            view_rate: 0.4,
        }
    }
}

impl MarketConfig {
    pub fn win_probability(&self, coef: f64) -> f64 {
        1.0 - (-coef / self.competition).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerConfig {
    pub interval_minutes: f64,
    pub initial_coef: f64,
    pub coef_min: f64,
    pub coef_max: f64,
    pub step_min: f64,
    pub step_max: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            interval_minutes: 10.0,
            initial_coef: 1.0,
            coef_min: 0.1,
            coef_max: 3.0,
            step_min: 0.9,
            step_max: 1.1,
        }
    }
}

impl ControllerConfig {
    /// New coefficient after observing `spent` against `signal` conversions.
    pub fn adjust(&self, coef: f64, spent: f64, signal: f64, target_cpa: f64) -> f64 {
        let cpa = spent / signal.max(1.0);
        let ratio = if cpa > 0.0 { target_cpa / cpa } else { self.step_max };
        (coef * ratio.clamp(self.step_min, self.step_max)).clamp(self.coef_min, self.coef_max)
    }
}

/// What the bidding system sees of a campaign at the end of an interval.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation<'a> {
    pub campaign: &'a SimCampaign,
    pub interval: u64,
    pub clock: f64,
    pub impressions: u64,
    pub clicks: u64,
    pub views: u64,
    pub tracked: u64,
    pub true_conversions: u64,
    /// Accumulated pCTCVR of the won impressions.
    pub z: f64,
}

pub trait ConversionPredictor: Send + Sync {
    fn predict(&self, obs: &Observation<'_>) -> f64;
}

/// Knows the conversions already caused, delayed or not.
#[derive(Debug, Clone, Copy, Default)]
pub struct OraclePredictor;

impl ConversionPredictor for OraclePredictor {
    fn predict(&self, obs: &Observation<'_>) -> f64 {
        obs.true_conversions as f64
    }
}

/// The oracle count times mean-one log-normal noise.
#[derive(Debug, Clone, Copy)]
pub struct NoisyOracle {
    pub sigma: f64,
    pub seed: u64,
}

impl ConversionPredictor for NoisyOracle {
    fn predict(&self, obs: &Observation<'_>) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ obs.campaign.id.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        rng.set_stream(obs.interval);
        let n: f64 = StandardNormal.sample(&mut rng);
        obs.true_conversions as f64 * (self.sigma * n - 0.5 * self.sigma * self.sigma).exp()
    }
}

/// A trained conversion model fed a campaign snapshot built from the
/// simulator state.
#[derive(Debug, Clone)]
pub struct ModelPredictor {
    pub model: Model,
}

impl ModelPredictor {
    pub fn snapshot(obs: &Observation<'_>) -> CampaignSample {
        let c = obs.campaign;
        CampaignSample {
            campaign_id: c.id,
            day: 1,
            industry: c.industry,
            // outside the vocabulary: falls back to the unknown embedding row
            product_id: u32::MAX - 1,
            objective_id: c.campaign_type.index() as u32 * 2,
            campaign_type: c.campaign_type,
            impressions: obs.impressions,
            clicks: obs.clicks,
            views: obs.views,
            tracked_conversions: obs.tracked,
            z: obs.z,
            pcoc_prior_industry: c.rm_bias,
            pcoc_prior_product: c.rm_bias,
            pcoc_prior_account: c.rm_bias,
            churn_industry: 0.2,
            churn_product: 0.2,
            churn_account: 0.2,
            t0: 0.0,
            tk: obs.clock,
            label: 0,
        }
    }
}

impl ConversionPredictor for ModelPredictor {
    fn predict(&self, obs: &Observation<'_>) -> f64 {
        encode(&Self::snapshot(obs))
            .and_then(|x| self.model.predict(&x))
            .map(|p| p.y_final)
            .unwrap_or(obs.tracked as f64)
    }
}

#[derive(Clone)]
pub enum SignalPolicy {
    TrackedOnly,
    /// Predicted conversions, never below the tracked count.
    Predicted(Arc<dyn ConversionPredictor>),
    Oracle,
}

impl fmt::Debug for SignalPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SignalPolicy::TrackedOnly => "TrackedOnly",
            SignalPolicy::Predicted(_) => "Predicted",
            SignalPolicy::Oracle => "Oracle",
        })
    }
}

impl SignalPolicy {
    pub fn signal(&self, obs: &Observation<'_>) -> f64 {
        match self {
            SignalPolicy::TrackedOnly => obs.tracked as f64,
            SignalPolicy::Oracle => obs.true_conversions as f64,
            SignalPolicy::Predicted(p) => p.predict(obs).max(obs.tracked as f64),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub clock: f64,
    pub coef: f64,
    pub spent: f64,
    pub tracked: u64,
    pub true_conversions: u64,
    pub signal: f64,
}

#[derive(Debug, Clone)]
pub struct BidState {
    pub campaign: SimCampaign,
    pub coef: f64,
    pub spent: f64,
    pub tracked: u64,
    pub true_conversions: u64,
    pub impressions: u64,
    pub z: f64,
    /// Arrival times of conversions not yet tracked, in whole seconds.
    pending: BinaryHeap<Reverse<u64>>,
    pub clock: f64,
    pub interval: u64,
    pub complete: bool,
}

impl BidState {
    pub fn new(campaign: SimCampaign, controller: &ControllerConfig) -> Self {
        Self {
            campaign,
            coef: controller.initial_coef,
            spent: 0.0,
            tracked: 0,
            true_conversions: 0,
            impressions: 0,
            z: 0.0,
            pending: BinaryHeap::new(),
            clock: 0.0,
            interval: 0,
            complete: false,
        }
    }

    pub fn pending(&self) -> usize {
        self.pending.len()
    }

    fn observation(&self, market: &MarketConfig) -> Observation<'_> {
        Observation {
            campaign: &self.campaign,
            interval: self.interval,
            clock: self.clock,
            impressions: self.impressions,
            clicks: (self.impressions as f64 * market.ctr).round() as u64,
            views: (self.impressions as f64 * market.view_rate).round() as u64,
            tracked: self.tracked,
            true_conversions: self.true_conversions,
            z: self.z,
        }
    }

    /// Serves one interval of traffic, promotes matured conversions and
    /// adjusts the bid coefficient. Four uniforms are drawn per offered
    /// impression whether or not it is won, so paired runs stay aligned.
    pub fn step<R: Rng + ?Sized>(
        &mut self,
        policy: &SignalPolicy,
        market: &MarketConfig,
        controller: &ControllerConfig,
        delays: &DelayTable,
        draws: &mut R,
    ) -> StepRecord {
        let start = self.clock;
        let width = controller.interval_minutes;
        let c = &self.campaign;
        let bid = self.coef * c.target_cpa * c.cvr;
        let price = market.price_ratio * bid;
        let win = market.win_probability(self.coef);
        for _ in 0..c.impressions_per_interval {
            let u: [f64; 4] = [draws.random(), draws.random(), draws.random(), draws.random()];
            if self.complete || u[0] >= win {
                continue;
            }
            if self.spent + price > c.budget {
                self.complete = true;
                continue;
            }
            self.spent += price;
            self.impressions += 1;
            self.z += c.cvr * c.rm_bias;
            if u[1] < c.cvr {
                self.true_conversions += 1;
                let at = start + u[2] * width;
                let delay = delays
                    .sample(c.campaign_type, u[3])
                    .expect("uniform draw in [0, 1)");
                self.pending.push(Reverse(((at + delay) * 60.0).floor() as u64));
            }
        }
        self.clock = start + width;
        let now = (self.clock * 60.0).floor() as u64;
        while self.pending.peek().is_some_and(|Reverse(t)| *t < now) {
            self.pending.pop();
            self.tracked += 1;
        }
        let signal = policy.signal(&self.observation(market));
        debug_assert!(!matches!(policy, SignalPolicy::Predicted(_)) || signal >= self.tracked as f64);
        if !self.complete {
            self.coef = controller.adjust(self.coef, self.spent, signal, c.target_cpa);
        }
        self.interval += 1;
        StepRecord {
            clock: self.clock,
            coef: self.coef,
            spent: self.spent,
            tracked: self.tracked,
            true_conversions: self.true_conversions,
            signal,
        }
    }

    /// Actual CPA over target CPA, counting every caused conversion.
    pub fn cost_rate(&self) -> Option<f64> {
        (self.true_conversions > 0).then(|| self.spent / (self.true_conversions as f64 * self.campaign.target_cpa))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmOutcome {
    pub campaign_id: u64,
    pub spent: f64,
    pub conversions: u64,
    pub tracked: u64,
    pub cost_rate: Option<f64>,
    pub final_coef: f64,
}

/// Runs one campaign arm for `intervals` steps on the market stream
/// identified by `(seed, stream)`.
#[allow(clippy::too_many_arguments)]
pub fn simulate_arm(
    campaign: &SimCampaign,
    policy: &SignalPolicy,
    market: &MarketConfig,
    controller: &ControllerConfig,
    delays: &DelayTable,
    intervals: u64,
    seed: u64,
    stream: u64,
) -> (ArmOutcome, Vec<StepRecord>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut state = BidState::new(campaign.clone(), controller);
    let trace: Vec<StepRecord> = (0..intervals)
        .map(|_| state.step(policy, market, controller, delays, &mut rng))
        .collect();
    let outcome = ArmOutcome {
        campaign_id: campaign.id,
        spent: state.spent,
        conversions: state.true_conversions,
        tracked: state.tracked,
        cost_rate: state.cost_rate(),
        final_coef: state.coef,
    };
    (outcome, trace)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub arm: String,
    pub campaigns: usize,
    pub cr: f64,
    pub mean_cost_rate: f64,
    pub total_spend: f64,
    pub total_conversions: u64,
}

impl ArmSummary {
    fn of(arm: &str, outcomes: &[ArmOutcome]) -> Self {
        let rates: Vec<f64> = outcomes.iter().filter_map(|o| o.cost_rate).collect();
        let compliant = rates.iter().filter(|&&r| (CR_LOW..=CR_HIGH).contains(&r)).count();
        Self {
            arm: arm.to_string(),
            campaigns: outcomes.len(),
            cr: compliant as f64 / outcomes.len().max(1) as f64,
            mean_cost_rate: rates.iter().sum::<f64>() / rates.len().max(1) as f64,
            total_spend: outcomes.iter().map(|o| o.spent).sum(),
            total_conversions: outcomes.iter().map(|o| o.conversions).sum(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbReport {
    pub control: ArmSummary,
    pub experimental: ArmSummary,
    pub control_campaigns: Vec<ArmOutcome>,
    pub experimental_campaigns: Vec<ArmOutcome>,
}

fn relative(a: f64, b: f64) -> f64 {
    if a == 0.0 {
        0.0
    } else {
        (b - a) / a
    }
}

impl AbReport {
    /// `(metric, control, experimental, relative change)`.
    pub fn deltas(&self) -> Vec<(&'static str, f64, f64, f64)> {
        let (c, e) = (&self.control, &self.experimental);
        vec![
            ("cr", c.cr, e.cr, e.cr - c.cr),
            ("spend", c.total_spend, e.total_spend, relative(c.total_spend, e.total_spend)),
            (
                "conversions",
                c.total_conversions as f64,
                e.total_conversions as f64,
                relative(c.total_conversions as f64, e.total_conversions as f64),
            ),
            ("mean_cost_rate", c.mean_cost_rate, e.mean_cost_rate, e.mean_cost_rate - c.mean_cost_rate),
        ]
    }

    pub fn summary_csv(&self) -> String {
        let mut s = String::from("arm,campaigns,cr,mean_cost_rate,total_spend,total_conversions\n");
        for a in [&self.control, &self.experimental] {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                a.arm, a.campaigns, a.cr, a.mean_cost_rate, a.total_spend, a.total_conversions
            ));
        }
        s
    }

    pub fn campaigns_csv(&self) -> String {
        let mut s = String::from("arm,campaign_id,spent,conversions,tracked,cost_rate,final_coef\n");
        for (arm, rows) in [("control", &self.control_campaigns), ("experimental", &self.experimental_campaigns)] {
            for o in rows {
                let rate = o.cost_rate.map_or(String::new(), |r| r.to_string());
                s.push_str(&format!(
                    "{arm},{},{},{},{},{rate},{}\n",
                    o.campaign_id, o.spent, o.conversions, o.tracked, o.final_coef
                ));
            }
        }
        s
    }
}

impl fmt::Display for AbReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<16} {:>14} {:>14} {:>10}", "metric", "control", "experimental", "delta")?;
        for (name, c, e, d) in self.deltas() {
            let delta = if name == "cr" || name == "mean_cost_rate" {
                format!("{:+.4}", d)
            } else {
                format!("{:+.2}%", 100.0 * d)
            };
            writeln!(f, "{name:<16} {c:>14.4} {e:>14.4} {delta:>10}")?;
        }
        Ok(())
    }
}

/// Scenario settings shared by both arms.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SimSettings {
    pub market: MarketConfig,
    pub controller: ControllerConfig,
    pub delays: DelayTable,
}

/// Clones every campaign into a control arm and an experimental arm, each
/// with half the traffic and budget, and runs both on the campaign's market
/// stream.
pub fn run_ab(
    campaigns: &[SimCampaign],
    horizon_minutes: f64,
    seed: u64,
    control: &SignalPolicy,
    experimental: &SignalPolicy,
    settings: &SimSettings,
) -> Result<AbReport, SimError> {
    let interval = settings.controller.interval_minutes;
    if !(interval > 0.0) {
        return Err(SimError::InvalidScenario("interval_minutes must be positive".into()));
    }
    if horizon_minutes < interval {
        return Err(SimError::HorizonTooShort {
            horizon: horizon_minutes,
            interval,
        });
    }
    let intervals = (horizon_minutes / interval).floor() as u64;
    let halves: Vec<SimCampaign> = campaigns
        .iter()
        .map(|c| SimCampaign {
            budget: c.budget / 2.0,
            impressions_per_interval: c.impressions_per_interval / 2,
            ..c.clone()
        })
        .collect();
    let run = |policy: &SignalPolicy| -> Vec<ArmOutcome> {
        halves
            .par_iter()
            .enumerate()
            .map(|(k, c)| {
                simulate_arm(
                    c,
                    policy,
                    &settings.market,
                    &settings.controller,
                    &settings.delays,
                    intervals,
                    seed,
                    k as u64,
                )
                .0
            })
            .collect()
    };
    let control_campaigns = run(control);
    let experimental_campaigns = run(experimental);
    Ok(AbReport {
        control: ArmSummary::of("control", &control_campaigns),
        experimental: ArmSummary::of("experimental", &experimental_campaigns),
        control_campaigns,
        experimental_campaigns,
    })
}

/// How a scenario file names a signal policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum PolicySpec {
    TrackedOnly,
    Oracle,
    PredictedOracle,
    PredictedNoisy { sigma: f64 },
    PredictedModel,
}

impl PolicySpec {
    pub fn build(self, seed: u64, model: Option<&Model>) -> Result<SignalPolicy, SimError> {
        Ok(match self {
            PolicySpec::TrackedOnly => SignalPolicy::TrackedOnly,
            PolicySpec::Oracle => SignalPolicy::Oracle,
            PolicySpec::PredictedOracle => SignalPolicy::Predicted(Arc::new(OraclePredictor)),
            PolicySpec::PredictedNoisy { sigma } => SignalPolicy::Predicted(Arc::new(NoisyOracle { sigma, seed })),
            PolicySpec::PredictedModel => SignalPolicy::Predicted(Arc::new(ModelPredictor {
                model: model.ok_or(SimError::MissingModel)?.clone(),
            })),
        })
    }
}

/// A complete simulation run: campaigns are given explicitly or drawn from
/// the population settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub seed: u64,
    pub horizon_minutes: f64,
    pub n_campaigns: usize,
    /// Restricts generated campaigns to one type; mixed when absent.
    pub campaign_type: Option<CampaignType>,
    pub campaigns: Vec<SimCampaign>,
    pub market: MarketConfig,
    pub controller: ControllerConfig,
    pub delays: DelayTable,
    pub control: PolicySpec,
    pub experimental: PolicySpec,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            seed: 7,
            horizon_minutes: 1440.0,
            n_campaigns: 200,
            campaign_type: Some(CampaignType::App),
            campaigns: Vec::new(),
            market: MarketConfig::default(),
            controller: ControllerConfig::default(),
            delays: DelayTable::default(),
            control: PolicySpec::TrackedOnly,
            experimental: PolicySpec::PredictedOracle,
        }
    }
}

impl Scenario {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidScenario(m.to_string()));
        let c = &self.controller;
        if !(c.interval_minutes > 0.0 && c.coef_min > 0.0 && c.coef_min <= c.initial_coef && c.initial_coef <= c.coef_max) {
            return bad("controller needs interval > 0 and coef_min <= initial_coef <= coef_max");
        }
        if !(c.step_min > 0.0 && c.step_min <= 1.0 && c.step_max >= 1.0) {
            return bad("step clip must bracket 1");
        }
        if !(self.market.competition > 0.0 && self.market.price_ratio > 0.0) {
            return bad("market competition and price_ratio must be positive");
        }
        if self.campaigns.is_empty() && self.n_campaigns == 0 {
            return bad("no campaigns");
        }
        for k in &self.campaigns {
            if !(k.budget > 0.0 && k.target_cpa > 0.0 && (0.0..=1.0).contains(&k.cvr)) {
                return bad("campaigns need positive budget and target_cpa and cvr in [0, 1]");
            }
        }
        if self.horizon_minutes < c.interval_minutes {
            return Err(SimError::HorizonTooShort {
                horizon: self.horizon_minutes,
                interval: c.interval_minutes,
            });
        }
        Ok(())
    }

    pub fn settings(&self) -> SimSettings {
        SimSettings {
            market: self.market,
            controller: self.controller,
            delays: self.delays.clone(),
        }
    }

    /// Explicit campaigns, or `n_campaigns` drawn deterministically from the seed.
    pub fn campaigns(&self) -> Vec<SimCampaign> {
        if !self.campaigns.is_empty() {
            return self.campaigns.clone();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(u64::MAX);
        let intervals = self.horizon_minutes / self.controller.interval_minutes;
        (0..self.n_campaigns as u64)
            .map(|id| {
                let campaign_type = self
                    .campaign_type
                    .unwrap_or(CampaignType::ALL[rng.random_range(0..4)]);
                let industry = Industry::ALL[rng.random_range(0..4)];
                let target_cpa = rng.random_range(20.0..100.0);
                let cvr = rng.random_range(0.005..0.02);
                let impressions_per_interval = rng.random_range(400..2000u32);
                let expected = intervals * impressions_per_interval as f64 * cvr * target_cpa;
                SimCampaign {
                    id,
                    campaign_type,
                    industry,
                    budget: 3.0 * expected,
                    target_cpa,
                    cvr,
                    impressions_per_interval,
                    rm_bias: 1.0,
                }
            })
            .collect()
    }

    pub fn run(&self, model: Option<&Model>) -> Result<AbReport, SimError> {
        self.validate()?;
        let control = self.control.build(self.seed, model)?;
        let experimental = self.experimental.build(self.seed, model)?;
        run_ab(
            &self.campaigns(),
            self.horizon_minutes,
            self.seed,
            &control,
            &experimental,
            &self.settings(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn campaign() -> SimCampaign {
        SimCampaign {
            id: 3,
            campaign_type: CampaignType::App,
            industry: Industry::Games,
            budget: 1e9,
            target_cpa: 50.0,
            cvr: 0.01,
            impressions_per_interval: 2000,
            rm_bias: 1.0,
        }
    }

    fn arm(policy: &SignalPolicy, delays: &DelayTable, intervals: u64) -> (ArmOutcome, Vec<StepRecord>) {
        simulate_arm(
            &campaign(),
            policy,
            &MarketConfig::default(),
            &ControllerConfig::default(),
            delays,
            intervals,
            1,
            0,
        )
    }

    #[test]
    fn controller_clips_steps_and_bounds() {
        let c = ControllerConfig::default();
        assert_eq!(c.adjust(1.0, 100.0, 1.0, 50.0), 0.9);
        assert_eq!(c.adjust(1.0, 10.0, 1.0, 50.0), 1.1);
        assert_eq!(c.adjust(1.0, 0.0, 0.0, 50.0), 1.1);
        assert!((c.adjust(1.0, 100.0, 2.0, 52.0) - 1.04).abs() < 1e-12);
        assert_eq!(c.adjust(0.1, 1e6, 0.0, 50.0), 0.1);
        assert_eq!(c.adjust(3.0, 0.0, 0.0, 50.0), 3.0);
    }

    #[test]
    fn oracle_signal_hits_target_cost_rate() {
        let (out, _) = arm(&SignalPolicy::Oracle, &DelayTable::default(), 144);
        let rate = out.cost_rate.unwrap();
        assert!((0.9..=1.1).contains(&rate), "{rate}");
    }

    #[test]
    fn tracked_signal_backs_off_in_first_hour() {
        let (_, trace) = arm(&SignalPolicy::TrackedOnly, &DelayTable::default(), 6);
        assert!(trace[5].coef < ControllerConfig::default().initial_coef, "{trace:?}");
        assert!(trace.iter().all(|r| r.tracked <= r.true_conversions));
    }

    #[test]
    fn zero_delay_makes_tracked_and_oracle_identical() {
        let zero = DelayTable::zero();
        let (a, ta) = arm(&SignalPolicy::TrackedOnly, &zero, 60);
        let (b, tb) = arm(&SignalPolicy::Oracle, &zero, 60);
        assert_eq!(a, b);
        assert_eq!(ta, tb);
    }

    #[test]
    fn conservation_of_conversions() {
        let (out, trace) = arm(&SignalPolicy::TrackedOnly, &DelayTable::default(), 100);
        let mut state = BidState::new(campaign(), &ControllerConfig::default());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            state.step(
                &SignalPolicy::TrackedOnly,
                &MarketConfig::default(),
                &ControllerConfig::default(),
                &DelayTable::default(),
                &mut rng,
            );
        }
        assert_eq!(state.tracked as usize + state.pending(), state.true_conversions as usize);
        assert_eq!(out.tracked, trace.last().unwrap().tracked);
        for w in trace.windows(2) {
            assert!(w[0].tracked <= w[1].tracked);
        }
    }

    #[test]
    fn budget_caps_spend() {
        let c = SimCampaign {
            budget: 500.0,
            ..campaign()
        };
        let (out, _) = simulate_arm(
            &c,
            &SignalPolicy::Oracle,
            &MarketConfig::default(),
            &ControllerConfig::default(),
            &DelayTable::default(),
            50,
            1,
            0,
        );
        assert!(out.spent <= 500.0);
    }

    #[test]
    fn predicted_signal_never_below_tracked() {
        let policy = SignalPolicy::Predicted(Arc::new(NoisyOracle { sigma: 2.0, seed: 5 }));
        let (_, trace) = arm(&policy, &DelayTable::default(), 80);
        assert!(trace.iter().all(|r| r.signal >= r.tracked as f64));
    }

    #[test]
    fn identical_policies_give_identical_arms() {
        let campaigns = Scenario {
            n_campaigns: 10,
            ..Default::default()
        }
        .campaigns();
        let p = SignalPolicy::TrackedOnly;
        let r = run_ab(&campaigns, 300.0, 4, &p, &p, &SimSettings::default()).unwrap();
        assert_eq!(r.control_campaigns, r.experimental_campaigns);
        assert_eq!(r.control.cr, r.experimental.cr);
    }

    #[test]
    fn zero_delay_arms_tie() {
        let campaigns = Scenario {
            n_campaigns: 10,
            ..Default::default()
        }
        .campaigns();
        let settings = SimSettings {
            delays: DelayTable::zero(),
            ..Default::default()
        };
        let pred = SignalPolicy::Predicted(Arc::new(OraclePredictor));
        let r = run_ab(&campaigns, 600.0, 4, &SignalPolicy::TrackedOnly, &pred, &settings).unwrap();
        assert_eq!(r.control_campaigns, r.experimental_campaigns);
    }

    #[test]
    fn short_horizon_is_rejected() {
        let err = run_ab(
            &[campaign()],
            5.0,
            0,
            &SignalPolicy::Oracle,
            &SignalPolicy::Oracle,
            &SimSettings::default(),
        )
        .unwrap_err();
        assert!(matches!(err, SimError::HorizonTooShort { .. }));
    }

    #[test]
    fn model_policy_needs_model() {
        assert!(matches!(PolicySpec::PredictedModel.build(0, None), Err(SimError::MissingModel)));
    }
}
