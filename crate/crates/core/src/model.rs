//! The conversion predictor: sparse embeddings and dense features feed a
//! shared SELU trunk; a bucket head, a PCOC head and a gate head sit on top.
//!
//! Ablations and single-expert baselines are the same network with heads
//! removed and losses switched off, selected by [`Variant`].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bucket::{edge_probabilities, infer_yf, side_loss, side_loss_derivative, yf_gradient, EdgePair};
use crate::fusion::{clamp_prediction, combine, fusion_loss, fusion_loss_gradient, gate};
use crate::nn::{Activation, DenseNet, EmbeddingTable, ForwardTrace, NnError, ParamBlocks};
use crate::pcoc::{infer_yg, pcoc_from_raw, pcoc_label, pcoc_loss, pcoc_loss_derivative};
use crate::synth::{dense_features, CampaignSample, SynthError, NUM_DENSE, NUM_OBJECTIVES, NUM_PRODUCTS};
use crate::tree::{hard_labels, soft_labels, BucketTree, LeafValue, SmoothingKernel, SoftLabelSet, TreeError};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("variant {0:?} needs a bucket tree")]
    MissingTree(Variant),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Smoothed bucket expert, PCOC expert and gate.
    Full,
    /// Full model trained on one-hot edge labels.
    WoSmoothing,
    /// Smoothed bucket expert alone; predicts `y_f`.
    WoProxy,
    /// Bucket expert alone on one-hot labels.
    BucketHard,
    /// Scalar head regressing the conversion count with absolute error.
    VrN,
    /// Scalar head regressing PCOC with absolute error, converted through `z`.
    VrP,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Full,
        Variant::WoSmoothing,
        Variant::WoProxy,
        Variant::BucketHard,
        Variant::VrN,
        Variant::VrP,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::WoSmoothing => "wo-smoothing",
            Variant::WoProxy => "wo-proxy",
            Variant::BucketHard => "bucket-hard",
            Variant::VrN => "vr-n",
            Variant::VrP => "vr-p",
        }
    }

    pub fn uses_tree(self) -> bool {
        matches!(self, Variant::Full | Variant::WoSmoothing | Variant::WoProxy | Variant::BucketHard)
    }

    pub fn uses_gate(self) -> bool {
        matches!(self, Variant::Full | Variant::WoSmoothing)
    }

    pub fn uses_value_head(self) -> bool {
        !matches!(self, Variant::WoProxy | Variant::BucketHard)
    }

    pub fn hard_labels(self) -> bool {
        matches!(self, Variant::WoSmoothing | Variant::BucketHard)
    }
}

impl std::str::FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| format!("unknown variant `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: Variant,
    pub num_leaves: usize,
    pub leaf_value: LeafValue,
    pub kernel_eps: f64,
    pub kernel_sharpness: f64,
    pub embedding_dim: usize,
    pub trunk_widths: Vec<usize>,
    /// Hidden widths inside each head, before its output layer.
    pub head_hidden: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Full,
            num_leaves: 64,
            leaf_value: LeafValue::default(),
            kernel_eps: 1e-6,
            kernel_sharpness: 10.0,
            embedding_dim: 8,
            trunk_widths: vec![64, 32],
            head_hidden: Vec::new(),
        }
    }
}

impl ModelConfig {
    pub fn kernel(&self) -> Result<SmoothingKernel, ModelError> {
        SmoothingKernel::new(self.kernel_eps, self.kernel_sharpness)
            .ok_or_else(|| ModelError::InvalidConfig("kernel eps and sharpness must be positive".into()))
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidConfig(m.to_string()));
        if self.num_leaves == 0 {
            return bad("num_leaves must be at least 1");
        }
        if self.embedding_dim == 0 {
            return bad("embedding_dim must be positive");
        }
        if self.trunk_widths.is_empty() || self.trunk_widths.iter().chain(&self.head_hidden).any(|&w| w == 0) {
            return bad("layer widths must be positive and the trunk non-empty");
        }
        self.kernel()?;
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        VOCAB_SIZES.len() * self.embedding_dim + NUM_DENSE
    }
}

/// Rows per sparse field, including the reserved unknown row 0:
/// industry, product, objective, campaign type.
pub const VOCAB_SIZES: [usize; 4] = [4 + 1, NUM_PRODUCTS as usize + 1, NUM_OBJECTIVES as usize + 1, 4 + 1];

/// Model inputs and targets for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoded {
    pub ids: [usize; 4],
    pub dense: [f64; NUM_DENSE],
    pub z: f64,
    pub tracked: u64,
    pub label: u64,
    pub pcoc: f64,
}

pub fn encode(sample: &CampaignSample) -> Result<Encoded, ModelError> {
    Ok(Encoded {
        ids: [
            sample.industry.index() + 1,
            sample.product_id as usize + 1,
            sample.objective_id as usize + 1,
            sample.campaign_type.index() + 1,
        ],
        dense: dense_features(sample)?,
        z: sample.z,
        tracked: sample.tracked_conversions,
        label: sample.label,
        pcoc: pcoc_label(sample.z, sample.label),
    })
}

pub fn encode_all(samples: &[CampaignSample]) -> Result<Vec<Encoded>, ModelError> {
    samples.iter().map(encode).collect()
}

/// Trainable parameters, flattened in a fixed order: embeddings, trunk,
/// bucket head, value head, gate head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub embeddings: Vec<EmbeddingTable>,
    pub trunk: DenseNet,
    pub bucket_head: Option<DenseNet>,
    pub value_head: Option<DenseNet>,
    pub gate_head: Option<DenseNet>,
}

impl ModelParams {
    pub fn init(config: &ModelConfig, bucket_outputs: Option<usize>, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        let embeddings = VOCAB_SIZES
            .iter()
            .map(|&v| EmbeddingTable::random(v, config.embedding_dim, &mut rng))
            .collect();
        let trunk = DenseNet::lecun(
            config.input_dim(),
            &config.trunk_widths,
            Activation::Selu,
            Activation::Selu,
            &mut rng,
        );
        let trunk_out = trunk.output_dim();
        let mut head = |out: usize| {
            let mut widths = config.head_hidden.clone();
            widths.push(out);
            DenseNet::lecun(trunk_out, &widths, Activation::Selu, Activation::Linear, &mut rng)
        };
        let variant = config.variant;
        let bucket_head = bucket_outputs.map(&mut head);
        let value_head = variant.uses_value_head().then(|| head(1));
        let gate_head = variant.uses_gate().then(|| head(1));
        Self {
            embeddings,
            trunk,
            bucket_head,
            value_head,
            gate_head,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            embeddings: self
                .embeddings
                .iter()
                .map(|e| EmbeddingTable::zeros(e.vocab_size, e.dim))
                .collect(),
            trunk: self.trunk.zeros_like(),
            bucket_head: self.bucket_head.as_ref().map(DenseNet::zeros_like),
            value_head: self.value_head.as_ref().map(DenseNet::zeros_like),
            gate_head: self.gate_head.as_ref().map(DenseNet::zeros_like),
        }
    }
}

impl ParamBlocks for ModelParams {
    fn blocks(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = self.embeddings.iter().flat_map(|e| e.blocks()).collect();
        out.extend(self.trunk.blocks());
        for head in [&self.bucket_head, &self.value_head, &self.gate_head].into_iter().flatten() {
            out.extend(head.blocks());
        }
        out
    }

    fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = self.embeddings.iter_mut().flat_map(|e| e.blocks_mut()).collect();
        out.extend(self.trunk.blocks_mut());
        for head in [&mut self.bucket_head, &mut self.value_head, &mut self.gate_head]
            .into_iter()
            .flatten()
        {
            out.extend(head.blocks_mut());
        }
        out
    }
}

/// One sample's outputs. Expert fields are `None` when the variant lacks them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub lambda: Option<f64>,
    pub y_f: Option<f64>,
    pub y_g: Option<f64>,
    pub pcoc: Option<f64>,
    pub y_hat: f64,
    pub y_final: f64,
}

/// Per-sample loss components, before weighting.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossParts {
    pub bucket: f64,
    pub proxy: f64,
    pub fusion: f64,
    pub total: f64,
}

impl std::ops::AddAssign for LossParts {
    fn add_assign(&mut self, o: Self) {
        self.bucket += o.bucket;
        self.proxy += o.proxy;
        self.fusion += o.fusion;
        self.total += o.total;
    }
}

impl LossParts {
    pub fn scaled(self, f: f64) -> Self {
        Self {
            bucket: self.bucket * f,
            proxy: self.proxy * f,
            fusion: self.fusion * f,
            total: self.total * f,
        }
    }
}

/// Loss weights and gradient routing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub alpha: f64,
    pub beta: f64,
    pub eps_y: f64,
    /// Let the fusion loss reach the experts as well as the gate.
    pub joint_routing: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            eps_y: 1.0,
            joint_routing: false,
        }
    }
}

struct Pass {
    input: Vec<f64>,
    trunk: ForwardTrace,
    bucket: Option<(ForwardTrace, Vec<EdgePair>)>,
    value: Option<(ForwardTrace, f64)>,
    gate: Option<(ForwardTrace, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub config: ModelConfig,
    pub tree: Option<BucketTree>,
    pub params: ModelParams,
}

impl Model {
    /// Builds the tree from training labels (for tree variants) and
    /// initializes parameters from `seed`.
    pub fn new(config: ModelConfig, train_labels: &[u64], seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let tree = if config.variant.uses_tree() {
            Some(BucketTree::build(train_labels, config.num_leaves, config.leaf_value)?)
        } else {
            None
        };
        let outputs = tree.as_ref().map(|t| 2 * t.internal().len());
        let params = ModelParams::init(&config, outputs, seed);
        Ok(Self { config, tree, params })
    }

    /// Edge targets used by the bucket loss; empty for tree-less variants.
    pub fn edge_targets(&self, label: u64) -> Result<SoftLabelSet, ModelError> {
        let Some(tree) = &self.tree else {
            return Ok(SoftLabelSet::default());
        };
        Ok(if self.config.variant.hard_labels() {
            hard_labels(tree, label as f64)
        } else {
            soft_labels(tree, label as f64, &self.config.kernel()?)
        })
    }

    fn forward_pass(&self, params: &ModelParams, x: &Encoded) -> Result<Pass, ModelError> {
        let mut input = Vec::with_capacity(self.config.input_dim());
        for (table, &id) in params.embeddings.iter().zip(&x.ids) {
            input.extend_from_slice(table.lookup(id));
        }
        input.extend_from_slice(&x.dense);
        let trunk = params.trunk.forward_trace(&input)?;
        let h = &trunk.output;
        let bucket = match &params.bucket_head {
            Some(net) => {
                let t = net.forward_trace(h)?;
                let pairs = edge_probabilities(&t.output);
                Some((t, pairs))
            }
            None => None,
        };
        let value = match &params.value_head {
            Some(net) => {
                let t = net.forward_trace(h)?;
                let raw = t.output[0];
                Some((t, raw))
            }
            None => None,
        };
        let gate = match &params.gate_head {
            Some(net) => {
                let t = net.forward_trace(h)?;
                let raw = t.output[0];
                Some((t, raw))
            }
            None => None,
        };
        Ok(Pass {
            input,
            trunk,
            bucket,
            value,
            gate,
        })
    }

    fn tree(&self) -> Result<&BucketTree, ModelError> {
        self.tree.as_ref().ok_or(ModelError::MissingTree(self.config.variant))
    }

    fn outputs(&self, pass: &Pass, x: &Encoded) -> Result<Prediction, ModelError> {
        let y_f = match &pass.bucket {
            Some((_, pairs)) => Some(infer_yf(self.tree()?, pairs).y_f),
            None => None,
        };
        let variant = self.config.variant;
        let (pcoc, y_g) = match (&pass.value, variant) {
            (Some((_, raw)), Variant::VrN) => (None, Some(*raw)),
            (Some((_, raw)), _) => {
                let (p, _) = pcoc_from_raw(*raw);
                (Some(p), Some(infer_yg(x.z, p)))
            }
            (None, _) => (None, None),
        };
        let lambda = pass.gate.as_ref().map(|(_, raw)| gate(*raw));
        let y_hat = match (lambda, y_f, y_g) {
            (Some(l), Some(f), Some(g)) => combine(l, f, g),
            (_, Some(f), None) => f,
            (_, None, Some(g)) => g,
            _ => unreachable!("every variant has an expert"),
        };
        Ok(Prediction {
            lambda,
            y_f,
            y_g,
            pcoc,
            y_hat,
            y_final: clamp_prediction(y_hat, x.tracked),
        })
    }

    pub fn predict(&self, x: &Encoded) -> Result<Prediction, ModelError> {
        let pass = self.forward_pass(&self.params, x)?;
        self.outputs(&pass, x)
    }

    pub fn predict_all(&self, xs: &[Encoded]) -> Result<Vec<Prediction>, ModelError> {
        xs.iter().map(|x| self.predict(x)).collect()
    }

    /// Per-sample loss under `params`, optionally accumulating its gradient.
    pub fn sample_loss(
        &self,
        params: &ModelParams,
        x: &Encoded,
        targets: &SoftLabelSet,
        loss: &LossConfig,
        grads: Option<&mut ModelParams>,
    ) -> Result<LossParts, ModelError> {
        let pass = self.forward_pass(params, x)?;
        let pred = self.outputs(&pass, x)?;
        let variant = self.config.variant;
        let y = x.label as f64;
        let mut parts = LossParts::default();

        // d(total)/d(head outputs)
        let mut g_pairs: Vec<EdgePair> = Vec::new();
        let mut g_value = 0.0;
        let mut g_gate = 0.0;

        if let Some((_, pairs)) = &pass.bucket {
            let tree = self.tree()?;
            g_pairs = vec![[0.0; 2]; pairs.len()];
            for e in &targets.entries {
                let slot = tree.internal_slot(e.node).expect("targets lie on internal nodes");
                let [pl, pr] = pairs[slot];
                parts.bucket += side_loss(e.left, pl) + side_loss(e.right, pr);
                g_pairs[slot][0] += side_loss_derivative(e.left, pl);
                g_pairs[slot][1] += side_loss_derivative(e.right, pr);
            }
        }

        match variant {
            Variant::VrN => {
                let raw = pass.value.as_ref().expect("value head").1;
                parts.proxy = (raw - y).abs();
                g_value = pcoc_loss_derivative(raw, y);
            }
            Variant::VrP => {
                let p = pred.pcoc.expect("pcoc head");
                parts.proxy = pcoc_loss(p, x.pcoc);
                let (_, dp) = pcoc_from_raw(pass.value.as_ref().expect("value head").1);
                g_value = pcoc_loss_derivative(p, x.pcoc) * dp;
            }
            Variant::Full | Variant::WoSmoothing => {
                let p = pred.pcoc.expect("pcoc head");
                let (_, dp) = pcoc_from_raw(pass.value.as_ref().expect("value head").1);
                parts.proxy = pcoc_loss(p, x.pcoc);
                g_value = loss.alpha * pcoc_loss_derivative(p, x.pcoc) * dp;

                let (l, f, g) = (pred.lambda.unwrap(), pred.y_f.unwrap(), pred.y_g.unwrap());
                parts.fusion = fusion_loss(l, f, g, y, loss.eps_y);
                let [d_l, d_f, d_g] = fusion_loss_gradient(l, f, g, y, loss.eps_y);
                g_gate = loss.beta * d_l * l * (1.0 - l);
                if loss.joint_routing {
                    let pairs = &pass.bucket.as_ref().expect("bucket head").1;
                    for (acc, d) in g_pairs.iter_mut().zip(yf_gradient(self.tree()?, pairs)) {
                        acc[0] += loss.beta * d_f * d[0];
                        acc[1] += loss.beta * d_f * d[1];
                    }
                    // y_g = z / p
                    g_value += loss.beta * d_g * (-x.z / (p * p)) * dp;
                }
            }
            Variant::WoProxy | Variant::BucketHard => {}
        }
        parts.total = match variant {
            Variant::VrN | Variant::VrP => parts.proxy,
            _ => parts.bucket + loss.alpha * parts.proxy + loss.beta * parts.fusion,
        };

        let Some(grads) = grads else {
            return Ok(parts);
        };
        let mut g_trunk_out = vec![0.0; pass.trunk.output.len()];
        let mut add = |v: Vec<f64>| g_trunk_out.iter_mut().zip(v).for_each(|(a, b)| *a += b);
        if let (Some((trace, pairs)), Some(net)) = (&pass.bucket, &params.bucket_head) {
            let g_logits: Vec<f64> = g_pairs
                .iter()
                .zip(pairs)
                .flat_map(|(g, p)| [g[0] * p[0] * (1.0 - p[0]), g[1] * p[1] * (1.0 - p[1])])
                .collect();
            add(net.backward(trace, &g_logits, grads.bucket_head.as_mut().expect("matching layout")));
        }
        if let (Some((trace, _)), Some(net)) = (&pass.value, &params.value_head) {
            add(net.backward(trace, &[g_value], grads.value_head.as_mut().expect("matching layout")));
        }
        if let (Some((trace, _)), Some(net)) = (&pass.gate, &params.gate_head) {
            add(net.backward(trace, &[g_gate], grads.gate_head.as_mut().expect("matching layout")));
        }
        let g_input = params.trunk.backward(&pass.trunk, &g_trunk_out, &mut grads.trunk);
        let dim = self.config.embedding_dim;
        for (k, (table, &id)) in grads.embeddings.iter_mut().zip(&x.ids).enumerate() {
            table.accumulate(id, &g_input[k * dim..(k + 1) * dim]);
        }
        debug_assert_eq!(pass.input.len(), g_input.len());
        Ok(parts)
    }

    /// Mean loss over a batch and, if requested, its mean gradient.
    pub fn batch_loss(
        &self,
        params: &ModelParams,
        batch: &[(&Encoded, &SoftLabelSet)],
        loss: &LossConfig,
        mut grads: Option<&mut ModelParams>,
    ) -> Result<LossParts, ModelError> {
        let mut total = LossParts::default();
        for (x, t) in batch {
            total += self.sample_loss(params, x, t, loss, grads.as_deref_mut())?;
        }
        let scale = 1.0 / batch.len().max(1) as f64;
        if let Some(g) = grads {
            g.scale(scale);
        }
        Ok(total.scaled(scale))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{grad_check, GradCheckConfig};
    use crate::synth::{generate_campaigns, GeneratorConfig};

    fn data(n: usize) -> Vec<CampaignSample> {
        generate_campaigns(&GeneratorConfig {
            n_samples: n,
            ..Default::default()
        })
        .unwrap()
    }

    fn model(variant: Variant, samples: &[CampaignSample], leaves: usize) -> Model {
        let labels: Vec<u64> = samples.iter().map(|s| s.label).collect();
        let config = ModelConfig {
            variant,
            num_leaves: leaves,
            ..Default::default()
        };
        Model::new(config, &labels, 7).unwrap()
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
    }

    #[test]
    fn prediction_invariants() {
        let samples = data(300);
        let xs = encode_all(&samples).unwrap();
        for v in Variant::ALL {
            let m = model(v, &samples, 16);
            for (x, s) in xs.iter().zip(&samples) {
                let p = m.predict(x).unwrap();
                assert!(p.y_final >= s.tracked_conversions as f64);
                if let (Some(l), Some(f), Some(g)) = (p.lambda, p.y_f, p.y_g) {
                    assert!((0.0..=1.0).contains(&l));
                    assert_eq!(p.y_hat, combine(l, f, g));
                    let tol = 1e-9 * f.max(g).max(1.0);
                    assert!(p.y_hat >= f.min(g) - tol && p.y_hat <= f.max(g) + tol);
                }
            }
        }
    }

    #[test]
    fn variant_layouts() {
        let samples = data(100);
        let full = model(Variant::Full, &samples, 8);
        assert!(full.params.bucket_head.is_some() && full.params.gate_head.is_some());
        let wo = model(Variant::WoProxy, &samples, 8);
        assert!(wo.params.value_head.is_none() && wo.params.gate_head.is_none());
        let vr = model(Variant::VrN, &samples, 8);
        assert!(vr.tree.is_none() && vr.params.bucket_head.is_none());
        let x = encode(&samples[0]).unwrap();
        assert_eq!(wo.predict(&x).unwrap().lambda, None);
    }

    #[test]
    fn hard_variant_uses_one_hot_targets() {
        let samples = data(200);
        let m = model(Variant::WoSmoothing, &samples, 16);
        for s in &samples {
            for e in m.edge_targets(s.label).unwrap().entries {
                assert!(e.left + e.right == 1.0 && (e.left == 0.0 || e.left == 1.0));
            }
        }
    }

    fn check_variant(variant: Variant, joint: bool) {
        let samples = data(200);
        let m = model(variant, &samples, 8);
        let xs = encode_all(&samples).unwrap();
        let targets: Vec<SoftLabelSet> = samples.iter().map(|s| m.edge_targets(s.label).unwrap()).collect();
        let batch: Vec<(&Encoded, &SoftLabelSet)> = xs.iter().zip(&targets).collect();
        let loss = LossConfig {
            joint_routing: joint,
            ..Default::default()
        };
        let mut grads = m.params.zeros_like();
        m.batch_loss(&m.params, &batch, &loss, Some(&mut grads)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let report = grad_check(
            &m.params,
            &grads,
            |p| m.batch_loss(p, &batch, &loss, None).unwrap().total,
            GradCheckConfig {
                probes: 60,
                ..Default::default()
            },
            &mut rng,
        );
        assert!(report.max_relative_error < 1e-4, "{variant:?} joint={joint}: {report:?}");
    }

    #[test]
    fn gradients_match_finite_differences_joint() {
        check_variant(Variant::Full, true);
    }

    #[test]
    fn gradients_match_finite_differences_baselines() {
        check_variant(Variant::BucketHard, false);
        check_variant(Variant::VrP, false);
    }

    #[test]
    fn gate_only_routing_leaves_experts_untouched_by_fusion() {
        let samples = data(50);
        let m = model(Variant::Full, &samples, 8);
        let xs = encode_all(&samples).unwrap();
        let targets: Vec<SoftLabelSet> = samples.iter().map(|s| m.edge_targets(s.label).unwrap()).collect();
        let batch: Vec<(&Encoded, &SoftLabelSet)> = xs.iter().zip(&targets).collect();
        let grad_with = |beta: f64| {
            let mut g = m.params.zeros_like();
            let loss = LossConfig { beta, ..Default::default() };
            m.batch_loss(&m.params, &batch, &loss, Some(&mut g)).unwrap();
            g
        };
        let (a, b) = (grad_with(0.0), grad_with(1.0));
        assert_eq!(a.bucket_head, b.bucket_head);
        assert_eq!(a.value_head, b.value_head);
        assert_ne!(a.gate_head, b.gate_head);
    }

    #[test]
    fn init_is_deterministic() {
        let samples = data(100);
        assert_eq!(model(Variant::Full, &samples, 8), model(Variant::Full, &samples, 8));
    }
}
