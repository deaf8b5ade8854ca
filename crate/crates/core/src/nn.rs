//! Minimal dense network engine: affine layers, SELU, embedding tables,
//! Adam and a central finite-difference gradient checker.
//!
//! Parameters of every trainable object are exposed as an ordered list of
//! flat `f64` blocks through [`ParamBlocks`]. Gradient buffers are values of
//! the same type, so optimizer and checker code only has to walk two block
//! lists in lockstep.

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SELU_ALPHA: f64 = 1.673_263_242_354_377_3;
pub const SELU_SCALE: f64 = 1.050_700_987_355_480_5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("dimension mismatch: expected input of length {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("layer {index} expects {expected} inputs but the previous layer emits {actual}")]
    BrokenChain {
        index: usize,
        expected: usize,
        actual: usize,
    },
    #[error("non-finite gradient at flat coordinate {index}")]
    NonFiniteGradient { index: usize },
    #[error("non-finite parameter at flat coordinate {index} after update")]
    NonFiniteParameter { index: usize },
    #[error("gradient layout does not match parameter layout")]
    LayoutMismatch,
}

pub fn selu(x: f64) -> f64 {
    if x > 0.0 {
        SELU_SCALE * x
    } else {
        SELU_SCALE * SELU_ALPHA * x.exp_m1()
    }
}

pub fn selu_derivative(x: f64) -> f64 {
    if x > 0.0 {
        SELU_SCALE
    } else {
        SELU_SCALE * SELU_ALPHA * x.exp()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Linear,
    Selu,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Linear => x,
            Activation::Selu => selu(x),
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Linear => 1.0,
            Activation::Selu => selu_derivative(x),
        }
    }
}

/// Ordered view over every trainable scalar of an object.
pub trait ParamBlocks {
    fn blocks(&self) -> Vec<&[f64]>;
    fn blocks_mut(&mut self) -> Vec<&mut [f64]>;

    fn param_count(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }

    fn all_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    fn fill(&mut self, value: f64) {
        for block in self.blocks_mut() {
            block.fill(value);
        }
    }

    fn scale(&mut self, factor: f64) {
        for block in self.blocks_mut() {
            block.iter_mut().for_each(|v| *v *= factor);
        }
    }

    fn get_flat(&self, index: usize) -> f64 {
        let mut offset = index;
        for block in self.blocks() {
            if offset < block.len() {
                return block[offset];
            }
            offset -= block.len();
        }
        panic!("flat index {index} out of range");
    }

    fn set_flat(&mut self, index: usize, value: f64) {
        let mut offset = index;
        for block in self.blocks_mut() {
            if offset < block.len() {
                block[offset] = value;
                return;
            }
            offset -= block.len();
        }
        panic!("flat index {index} out of range");
    }
}

/// One affine layer `act(W x + b)`; `weights` is row-major `[out][in]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    pub fn zeros(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Self {
            in_dim,
            out_dim,
            activation,
            weights: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    /// LeCun-normal weights (variance `1 / fan_in`), zero bias.
    pub fn lecun<R: Rng + ?Sized>(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let normal = Normal::new(0.0, (1.0 / in_dim.max(1) as f64).sqrt()).expect("valid std");
        let mut layer = Self::zeros(in_dim, out_dim, activation);
        for w in layer.weights.iter_mut() {
            *w = normal.sample(rng);
        }
        layer
    }

    fn pre_activation(&self, input: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for (row, b) in self.weights.chunks_exact(self.in_dim).zip(&self.bias) {
            let dot: f64 = row.iter().zip(input).map(|(w, x)| w * x).sum();
            out.push(dot + b);
        }
    }
}

/// Cached intermediate values of one forward pass, consumed by
/// [`DenseNet::backward`].
#[derive(Debug, Clone, Default)]
pub struct ForwardTrace {
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    pub output: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseNet {
    layers: Vec<DenseLayer>,
}

impl DenseNet {
    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self, NnError> {
        for (index, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(NnError::BrokenChain {
                    index: index + 1,
                    expected: pair[1].in_dim,
                    actual: pair[0].out_dim,
                });
            }
        }
        for layer in &layers {
            if layer.weights.len() != layer.in_dim * layer.out_dim
                || layer.bias.len() != layer.out_dim
            {
                return Err(NnError::LayoutMismatch);
            }
        }
        Ok(Self { layers })
    }

    /// MLP with `hidden_activation` on every layer but the last, which uses
    /// `output_activation`. `widths` lists the output size of each layer.
    pub fn lecun<R: Rng + ?Sized>(
        input_dim: usize,
        widths: &[usize],
        hidden_activation: Activation,
        output_activation: Activation,
        rng: &mut R,
    ) -> Self {
        let mut layers = Vec::with_capacity(widths.len());
        let mut fan_in = input_dim;
        for (k, &width) in widths.iter().enumerate() {
            let act = if k + 1 == widths.len() {
                output_activation
            } else {
                hidden_activation
            };
            layers.push(DenseLayer::lecun(fan_in, width, act, rng));
            fan_in = width;
        }
        Self { layers }
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.in_dim)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim)
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| DenseLayer::zeros(l.in_dim, l.out_dim, l.activation))
                .collect(),
        }
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>, NnError> {
        Ok(self.forward_trace(input)?.output)
    }

    pub fn forward_trace(&self, input: &[f64]) -> Result<ForwardTrace, NnError> {
        if input.len() != self.input_dim() {
            return Err(NnError::DimensionMismatch {
                expected: self.input_dim(),
                actual: input.len(),
            });
        }
        let mut trace = ForwardTrace {
            inputs: Vec::with_capacity(self.layers.len()),
            pre: Vec::with_capacity(self.layers.len()),
            output: Vec::new(),
        };
        let mut current = input.to_vec();
        for layer in &self.layers {
            let mut pre = Vec::with_capacity(layer.out_dim);
            layer.pre_activation(&current, &mut pre);
            let next: Vec<f64> = pre.iter().map(|&v| layer.activation.apply(v)).collect();
            trace.inputs.push(current);
            trace.pre.push(pre);
            current = next;
        }
        trace.output = current;
        Ok(trace)
    }

    /// Accumulates parameter gradients into `grads` and returns the gradient
    /// with respect to the network input.
    pub fn backward(&self, trace: &ForwardTrace, grad_output: &[f64], grads: &mut DenseNet) -> Vec<f64> {
        let mut upstream = grad_output.to_vec();
        for (k, layer) in self.layers.iter().enumerate().rev() {
            let pre = &trace.pre[k];
            let input = &trace.inputs[k];
            let delta: Vec<f64> = upstream
                .iter()
                .zip(pre)
                .map(|(g, &z)| g * layer.activation.derivative(z))
                .collect();
            let g_layer = &mut grads.layers[k];
            let mut grad_input = vec![0.0; layer.in_dim];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                g_layer.bias[o] += d;
                let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                let g_row = &mut g_layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                for i in 0..layer.in_dim {
                    g_row[i] += d * input[i];
                    grad_input[i] += d * row[i];
                }
            }
            upstream = grad_input;
        }
        upstream
    }
}

impl ParamBlocks for DenseNet {
    fn blocks(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()])
            .collect()
    }

    fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weights.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }
}

/// Lookup table of `vocab_size` rows; row 0 is reserved for unknown ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    pub vocab_size: usize,
    pub dim: usize,
    pub rows: Vec<f64>,
}

impl EmbeddingTable {
    pub fn zeros(vocab_size: usize, dim: usize) -> Self {
        Self {
            vocab_size,
            dim,
            rows: vec![0.0; vocab_size * dim],
        }
    }

    /// Rows drawn from N(0, 0.01).
    pub fn random<R: Rng + ?Sized>(vocab_size: usize, dim: usize, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, 0.1).expect("valid std");
        let mut table = Self::zeros(vocab_size, dim);
        table.rows.iter_mut().for_each(|v| *v = normal.sample(rng));
        table
    }

    pub fn row_index(&self, id: usize) -> usize {
        if id < self.vocab_size {
            id
        } else {
            0
        }
    }

    pub fn lookup(&self, id: usize) -> &[f64] {
        let r = self.row_index(id);
        &self.rows[r * self.dim..(r + 1) * self.dim]
    }

    pub fn accumulate(&mut self, id: usize, grad: &[f64]) {
        let r = self.row_index(id);
        for (g, d) in self.rows[r * self.dim..(r + 1) * self.dim].iter_mut().zip(grad) {
            *g += d;
        }
    }
}

impl ParamBlocks for EmbeddingTable {
    fn blocks(&self) -> Vec<&[f64]> {
        vec![self.rows.as_slice()]
    }

    fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.rows.as_mut_slice()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam moments over the flattened parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    first: Vec<f64>,
    second: Vec<f64>,
}

impl AdamState {
    pub fn new(config: AdamConfig, param_count: usize) -> Self {
        Self {
            config,
            step: 0,
            first: vec![0.0; param_count],
            second: vec![0.0; param_count],
        }
    }

    pub fn moments(&self) -> (&[f64], &[f64]) {
        (&self.first, &self.second)
    }

    pub fn update<P: ParamBlocks>(&mut self, params: &mut P, grads: &P) -> Result<(), NnError> {
        let grad_blocks = grads.blocks();
        let total: usize = grad_blocks.iter().map(|b| b.len()).sum();
        if total != self.first.len() {
            return Err(NnError::LayoutMismatch);
        }
        if let Some(index) = grad_blocks
            .iter()
            .flat_map(|b| b.iter())
            .position(|g| !g.is_finite())
        {
            return Err(NnError::NonFiniteGradient { index });
        }

        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        let mut offset = 0;
        for (p_block, g_block) in params.blocks_mut().into_iter().zip(grad_blocks) {
            if p_block.len() != g_block.len() {
                return Err(NnError::LayoutMismatch);
            }
            let m = &mut self.first[offset..offset + g_block.len()];
            let v = &mut self.second[offset..offset + g_block.len()];
            for i in 0..g_block.len() {
                let g = g_block[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p_block[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                if !p_block[i].is_finite() {
                    return Err(NnError::NonFiniteParameter { index: offset + i });
                }
            }
            offset += g_block.len();
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    pub probes: usize,
    pub fd_epsilon: f64,
    /// Gradient magnitude below which differences are measured absolutely.
    pub scale_floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            probes: 100,
            fd_epsilon: 1e-5,
            scale_floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub worst_coordinate: usize,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
    pub probes: usize,
}

/// Compares `analytic` against central differences of `loss` at randomly
/// probed coordinates of `params`.
pub fn grad_check<P, F, R>(
    params: &P,
    analytic: &P,
    mut loss: F,
    config: GradCheckConfig,
    rng: &mut R,
) -> GradCheckReport
where
    P: ParamBlocks + Clone,
    F: FnMut(&P) -> f64,
    R: Rng + ?Sized,
{
    assert!(
        (1e-7..=1e-3).contains(&config.fd_epsilon),
        "fd epsilon outside [1e-7, 1e-3]"
    );
    let count = params.param_count();
    let probes = config.probes.min(count);
    let mut probe = params.clone();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_coordinate: 0,
        analytic_at_worst: 0.0,
        numeric_at_worst: 0.0,
        probes,
    };
    for index in sample_indices(rng, count, probes) {
        let original = params.get_flat(index);
        probe.set_flat(index, original + config.fd_epsilon);
        let plus = loss(&probe);
        probe.set_flat(index, original - config.fd_epsilon);
        let minus = loss(&probe);
        probe.set_flat(index, original);

        let numeric = (plus - minus) / (2.0 * config.fd_epsilon);
        let exact = analytic.get_flat(index);
        let denom = exact.abs().max(numeric.abs()).max(config.scale_floor);
        let rel = (exact - numeric).abs() / denom;
        if rel >= report.max_relative_error {
            report.max_relative_error = rel;
            report.worst_coordinate = index;
            report.analytic_at_worst = exact;
            report.numeric_at_worst = numeric;
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[derive(Clone)]
    struct Scalar(Vec<f64>);

    impl ParamBlocks for Scalar {
        fn blocks(&self) -> Vec<&[f64]> {
            vec![&self.0]
        }
        fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
            vec![&mut self.0]
        }
    }

    fn single(w: f64, b: f64, act: Activation) -> DenseNet {
        DenseNet::from_layers(vec![DenseLayer {
            in_dim: 1,
            out_dim: 1,
            activation: act,
            weights: vec![w],
            bias: vec![b],
        }])
        .unwrap()
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let net = DenseNet::from_layers(vec![DenseLayer {
            in_dim: 2,
            out_dim: 2,
            activation: Activation::Linear,
            weights: vec![1.0, 0.0, 0.0, 1.0],
            bias: vec![0.0, 0.0],
        }])
        .unwrap();
        assert_eq!(net.forward(&[1.0, 2.0]).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn zero_net_outputs_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = DenseNet::lecun(5, &[7, 3], Activation::Linear, Activation::Linear, &mut rng)
            .zeros_like();
        assert_eq!(net.forward(&[1.0, -2.0, 3.0, 0.5, 9.0]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn affine_hand_evaluation() {
        assert_eq!(single(2.0, 1.0, Activation::Linear).forward(&[3.0]).unwrap(), vec![7.0]);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let err = single(1.0, 0.0, Activation::Linear).forward(&[1.0, 2.0]).unwrap_err();
        assert_eq!(err, NnError::DimensionMismatch { expected: 1, actual: 2 });
    }

    #[test]
    fn broken_chain_rejected() {
        let err = DenseNet::from_layers(vec![
            DenseLayer::zeros(3, 4, Activation::Selu),
            DenseLayer::zeros(5, 1, Activation::Linear),
        ])
        .unwrap_err();
        assert!(matches!(err, NnError::BrokenChain { index: 1, .. }));
    }

    #[test]
    fn selu_reference_values() {
        assert_eq!(selu(0.0), 0.0);
        assert!((selu(1.0) - 1.0507).abs() < 1e-4);
        assert!((selu(-20.0) + 1.7581).abs() < 1e-4);
        assert!((selu(-20.0) + SELU_SCALE * SELU_ALPHA).abs() < 1e-8);
    }

    #[test]
    fn selu_is_monotone_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..1000 {
            let a: f64 = rng.random_range(-10.0..10.0);
            let b: f64 = rng.random_range(-10.0..10.0);
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            if lo < hi {
                assert!(selu(lo) < selu(hi), "selu({lo}) !< selu({hi})");
            }
        }
    }

    #[test]
    fn adam_zero_gradient_is_fixed_point() {
        let mut p = Scalar(vec![0.3, -1.2]);
        let g = Scalar(vec![0.0, 0.0]);
        let mut state = AdamState::new(AdamConfig::default(), 2);
        for _ in 0..5 {
            state.update(&mut p, &g).unwrap();
        }
        assert_eq!(p.0, vec![0.3, -1.2]);
        assert_eq!(state.step, 5);
    }

    #[test]
    fn adam_zero_lr_is_fixed_point() {
        let mut p = Scalar(vec![0.3]);
        let g = Scalar(vec![4.0]);
        let mut state = AdamState::new(AdamConfig { lr: 0.0, ..AdamConfig::default() }, 1);
        state.update(&mut p, &g).unwrap();
        assert_eq!(p.0, vec![0.3]);
    }

    #[test]
    fn adam_first_step_closed_form() {
        // m = 0.1, v = 0.001; bias correction gives m_hat = 1, v_hat = 1,
        // so the step is lr * 1 / (1 + eps).
        let mut p = Scalar(vec![0.0]);
        let g = Scalar(vec![1.0]);
        let mut state = AdamState::new(AdamConfig::default(), 1);
        assert_eq!(state.moments().0, &[0.0]);
        state.update(&mut p, &g).unwrap();
        let expected = -1e-3 / (1.0 + 1e-8);
        assert!((p.0[0] - expected).abs() < 1e-15, "{}", p.0[0]);
    }

    #[test]
    fn adam_rejects_non_finite_gradient() {
        let mut p = Scalar(vec![0.0, 0.0]);
        let g = Scalar(vec![1.0, f64::NAN]);
        let mut state = AdamState::new(AdamConfig::default(), 2);
        assert_eq!(state.update(&mut p, &g), Err(NnError::NonFiniteGradient { index: 1 }));
        assert_eq!(state.step, 0);
    }

    #[test]
    fn grad_check_exact_quadratic() {
        let p = Scalar(vec![3.0]);
        let g = Scalar(vec![3.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let report = grad_check(&p, &g, |q| 0.5 * q.0[0] * q.0[0], GradCheckConfig::default(), &mut rng);
        assert!(report.max_relative_error < 1e-9, "{report:?}");
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = DenseNet::lecun(4, &[6, 5, 2], Activation::Selu, Activation::Linear, &mut rng);
        let x = [0.3, -0.7, 1.1, 0.05];
        let loss = |n: &DenseNet| {
            let y = n.forward(&x).unwrap();
            0.5 * (y[0] - 1.0).powi(2) + y[1].sin()
        };
        let trace = net.forward_trace(&x).unwrap();
        let y = &trace.output;
        let mut grads = net.zeros_like();
        net.backward(&trace, &[y[0] - 1.0, y[1].cos()], &mut grads);
        let report = grad_check(&net, &grads, loss, GradCheckConfig::default(), &mut rng);
        assert!(report.max_relative_error < 1e-6, "{report:?}");
    }

    #[test]
    fn embedding_unknown_ids_use_reserved_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let table = EmbeddingTable::random(5, 8, &mut rng);
        assert_eq!(table.lookup(3).len(), 8);
        assert_eq!(table.lookup(17), table.lookup(0));
    }

    #[test]
    fn forward_is_bitwise_deterministic() {
        let a = DenseNet::lecun(3, &[4, 1], Activation::Selu, Activation::Linear, &mut ChaCha8Rng::seed_from_u64(11));
        let b = DenseNet::lecun(3, &[4, 1], Activation::Selu, Activation::Linear, &mut ChaCha8Rng::seed_from_u64(11));
        let x = [0.1, 0.2, -0.3];
        assert_eq!(
            a.forward(&x).unwrap()[0].to_bits(),
            b.forward(&x).unwrap()[0].to_bits()
        );
    }
}
