//! Fixed-shape dense networks with hand-rolled reverse mode and Adam.
//!
//! Parameters live in one flat buffer laid out layer by layer as
//! `[W_0, b_0, W_1, b_1, ...]`, each `W_l` row-major with shape
//! `(fan_out, fan_in)`. Batched inputs are row-major `(batch, width)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("shape mismatch in {what}: expected {expected}, got {got}")]
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("non-finite gradient entry at parameter {0}")]
    NonFiniteGradient(usize),
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error("invalid Adam config: {0}")]
    InvalidAdam(String),
    #[error("invalid checkpoint: {0}")]
    InvalidCheckpoint(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputActivation {
    Linear,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    /// Input width, hidden widths, output width.
    pub layer_sizes: Vec<usize>,
    pub hidden_activation: Activation,
    pub output_activation: OutputActivation,
}

impl MlpSpec {
    pub fn new(layer_sizes: Vec<usize>, hidden_activation: Activation) -> Self {
        Self {
            layer_sizes,
            hidden_activation,
            output_activation: OutputActivation::Linear,
        }
    }

    /// 25 → 64 → 64 → 8 tanh: four means and four log standard deviations.
    pub fn policy(obs_dim: usize, act_dim: usize) -> Self {
        Self::new(vec![obs_dim, 64, 64, 2 * act_dim], Activation::Tanh)
    }

    /// 25 → 256 → 256 → 1 relu.
    pub fn value(obs_dim: usize) -> Self {
        Self::new(vec![obs_dim, 256, 256, 1], Activation::Relu)
    }

    /// (25 + 4) → 256 → 256 → 1 relu.
    pub fn q_function(obs_dim: usize, act_dim: usize) -> Self {
        Self::new(vec![obs_dim + act_dim, 256, 256, 1], Activation::Relu)
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if self.layer_sizes.len() < 3 {
            return Err(NnError::InvalidSpec(
                "need an input, at least one hidden layer and an output".into(),
            ));
        }
        if self.layer_sizes.contains(&0) {
            return Err(NnError::InvalidSpec("all widths must be >= 1".into()));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn num_params(&self) -> usize {
        self.layer_sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct LayerLayout {
    fan_in: usize,
    fan_out: usize,
    w_offset: usize,
    b_offset: usize,
}

fn layout_for(spec: &MlpSpec) -> Vec<LayerLayout> {
    let mut offset = 0;
    spec.layer_sizes
        .windows(2)
        .map(|w| {
            let l = LayerLayout {
                fan_in: w[0],
                fan_out: w[1],
                w_offset: offset,
                b_offset: offset + w[0] * w[1],
            };
            offset += w[0] * w[1] + w[1];
            l
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(NnError::InvalidAdam("learning_rate must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(NnError::InvalidAdam("betas must lie in [0, 1)".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(NnError::InvalidAdam("epsilon must be > 0".into()));
        }
        Ok(())
    }
}

/// Flat gradient buffer with the same layout as the network parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub Vec<f64>);

impl Gradients {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Post-activation values of every layer for one batched forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    batch: usize,
    /// `acts[0]` is the input, `acts[l + 1]` the output of layer `l`.
    acts: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn output(&self) -> &[f64] {
        self.acts.last().unwrap()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpNet {
    spec: MlpSpec,
    layout: Vec<LayerLayout>,
    params: Vec<f64>,
    adam_m: Vec<f64>,
    adam_v: Vec<f64>,
    step: u64,
}

/// `c = a · b (+ c if accumulate)` for row-major operands given by strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    c: &mut [f64],
    accumulate: bool,
) {
    assert!(m == 0 || k == 0 || a.len() > (m - 1) * rsa + (k - 1) * csa);
    assert!(k == 0 || n == 0 || b.len() > (k - 1) * rsb + (n - 1) * csb);
    assert!(c.len() >= m * n);
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the asserted extents cover every element touched by the kernel,
    // and `c` is borrowed mutably so it cannot alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl MlpNet {
    /// All weights and biases zero.
    pub fn zeros(spec: MlpSpec) -> Result<Self, NnError> {
        spec.validate()?;
        let n = spec.num_params();
        Ok(Self {
            layout: layout_for(&spec),
            spec,
            params: vec![0.0; n],
            adam_m: vec![0.0; n],
            adam_v: vec![0.0; n],
            step: 0,
        })
    }

    /// Weights uniform in ±sqrt(1/fan_in), biases zero.
    pub fn init(spec: MlpSpec, seed: u64) -> Result<Self, NnError> {
        let mut net = Self::zeros(spec)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for l in &net.layout {
            let bound = (1.0 / l.fan_in as f64).sqrt();
            for w in &mut net.params[l.w_offset..l.b_offset] {
                *w = rng.gen_range(-bound..=bound);
            }
        }
        Ok(net)
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn adam_moments(&self) -> (&[f64], &[f64]) {
        (&self.adam_m, &self.adam_v)
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Weight matrix of layer `l` as a row-major `(fan_out, fan_in)` slice.
    pub fn layer_weights(&self, l: usize) -> &[f64] {
        let lay = &self.layout[l];
        &self.params[lay.w_offset..lay.b_offset]
    }

    pub fn layer_weights_mut(&mut self, l: usize) -> &mut [f64] {
        let lay = self.layout[l];
        &mut self.params[lay.w_offset..lay.b_offset]
    }

    pub fn layer_bias(&self, l: usize) -> &[f64] {
        let lay = &self.layout[l];
        &self.params[lay.b_offset..lay.b_offset + lay.fan_out]
    }

    pub fn layer_bias_mut(&mut self, l: usize) -> &mut [f64] {
        let lay = self.layout[l];
        &mut self.params[lay.b_offset..lay.b_offset + lay.fan_out]
    }

    pub fn is_finite(&self) -> bool {
        self.params
            .iter()
            .chain(&self.adam_m)
            .chain(&self.adam_v)
            .all(|v| v.is_finite())
    }

    /// Batched forward pass over `batch` row-major inputs.
    pub fn forward_batch(&self, input: &[f64], batch: usize) -> Result<ForwardCache, NnError> {
        let in_dim = self.spec.input_dim();
        if input.len() != batch * in_dim {
            return Err(NnError::ShapeMismatch {
                what: "forward input",
                expected: batch * in_dim,
                got: input.len(),
            });
        }
        let n_layers = self.layout.len();
        let mut acts = Vec::with_capacity(n_layers + 1);
        acts.push(input.to_vec());
        for (li, l) in self.layout.iter().enumerate() {
            let mut z = vec![0.0; batch * l.fan_out];
            let bias = &self.params[l.b_offset..l.b_offset + l.fan_out];
            for row in z.chunks_exact_mut(l.fan_out) {
                row.copy_from_slice(bias);
            }
            gemm(
                batch,
                l.fan_in,
                l.fan_out,
                &acts[li],
                (l.fan_in, 1),
                &self.params[l.w_offset..l.b_offset],
                (1, l.fan_in),
                &mut z,
                true,
            );
            if li + 1 < n_layers {
                match self.spec.hidden_activation {
                    Activation::Tanh => z.iter_mut().for_each(|v| *v = v.tanh()),
                    Activation::Relu => z.iter_mut().for_each(|v| *v = v.max(0.0)),
                }
            }
            acts.push(z);
        }
        Ok(ForwardCache { batch, acts })
    }

    /// Forward pass for a single input vector.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>, NnError> {
        let mut cache = self.forward_batch(input, 1)?;
        Ok(cache.acts.pop().unwrap())
    }

    fn check_backward(&self, cache: &ForwardCache, output_grad: &[f64]) -> Result<(), NnError> {
        if cache.acts.len() != self.layout.len() + 1 {
            return Err(NnError::ShapeMismatch {
                what: "forward cache depth",
                expected: self.layout.len() + 1,
                got: cache.acts.len(),
            });
        }
        let expected = cache.batch * self.spec.output_dim();
        if output_grad.len() != expected {
            return Err(NnError::ShapeMismatch {
                what: "output gradient",
                expected,
                got: output_grad.len(),
            });
        }
        Ok(())
    }

    /// Multiply `delta` by the hidden activation derivative at `act`.
    fn hidden_derivative(&self, act: &[f64], delta: &mut [f64]) {
        match self.spec.hidden_activation {
            Activation::Tanh => delta.iter_mut().zip(act).for_each(|(d, a)| *d *= 1.0 - a * a),
            Activation::Relu => delta.iter_mut().zip(act).for_each(|(d, a)| {
                if *a <= 0.0 {
                    *d = 0.0;
                }
            }),
        }
    }

    fn backward_impl(&self, cache: &ForwardCache, output_grad: &[f64], mut grads: Option<&mut [f64]>) -> Vec<f64> {
        let batch = cache.batch;
        let mut delta = output_grad.to_vec();
        for li in (0..self.layout.len()).rev() {
            let l = &self.layout[li];
            let input = &cache.acts[li];
            if let Some(g) = grads.as_deref_mut() {
                gemm(
                    l.fan_out,
                    batch,
                    l.fan_in,
                    &delta,
                    (1, l.fan_out),
                    input,
                    (l.fan_in, 1),
                    &mut g[l.w_offset..l.b_offset],
                    false,
                );
                let gb = &mut g[l.b_offset..l.b_offset + l.fan_out];
                gb.iter_mut().for_each(|v| *v = 0.0);
                for row in delta.chunks_exact(l.fan_out) {
                    gb.iter_mut().zip(row).for_each(|(s, d)| *s += d);
                }
            }
            let mut prev = vec![0.0; batch * l.fan_in];
            gemm(
                batch,
                l.fan_out,
                l.fan_in,
                &delta,
                (l.fan_out, 1),
                &self.params[l.w_offset..l.b_offset],
                (l.fan_in, 1),
                &mut prev,
                false,
            );
            if li > 0 {
                self.hidden_derivative(input, &mut prev);
            }
            delta = prev;
        }
        delta
    }

    /// Gradients of `sum(output_grad ⊙ output)` with respect to every
    /// parameter and to the input, summed over the batch.
    pub fn backward(&self, cache: &ForwardCache, output_grad: &[f64]) -> Result<(Gradients, Vec<f64>), NnError> {
        self.check_backward(cache, output_grad)?;
        let mut g = vec![0.0; self.params.len()];
        let input_grad = self.backward_impl(cache, output_grad, Some(&mut g));
        Ok((Gradients(g), input_grad))
    }

    /// Input gradient only; skips the parameter-gradient products.
    pub fn input_gradient(&self, cache: &ForwardCache, output_grad: &[f64]) -> Result<Vec<f64>, NnError> {
        self.check_backward(cache, output_grad)?;
        Ok(self.backward_impl(cache, output_grad, None))
    }

    /// One bias-corrected Adam update. Rejects non-finite gradients before
    /// touching any state.
    pub fn adam_step(&mut self, grads: &Gradients, cfg: &AdamConfig) -> Result<(), NnError> {
        if grads.0.len() != self.params.len() {
            return Err(NnError::ShapeMismatch {
                what: "gradient",
                expected: self.params.len(),
                got: grads.0.len(),
            });
        }
        if let Some(i) = grads.0.iter().position(|g| !g.is_finite()) {
            return Err(NnError::NonFiniteGradient(i));
        }
        cfg.validate()?;
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for (((p, m), v), g) in self
            .params
            .iter_mut()
            .zip(self.adam_m.iter_mut())
            .zip(self.adam_v.iter_mut())
            .zip(&grads.0)
        {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
        Ok(())
    }

    /// `self ← (1 − tau)·self + tau·source`, parameters only.
    pub fn blend_from(&mut self, source: &MlpNet, tau: f64) -> Result<(), NnError> {
        if source.params.len() != self.params.len() {
            return Err(NnError::ShapeMismatch {
                what: "blend source",
                expected: self.params.len(),
                got: source.params.len(),
            });
        }
        let keep = 1.0 - tau;
        for (t, s) in self.params.iter_mut().zip(&source.params) {
            *t = keep * *t + tau * s;
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("network serialization cannot fail")
    }

    pub fn from_json(s: &str) -> Result<Self, NnError> {
        serde_json::from_str(s).map_err(|e| NnError::InvalidCheckpoint(e.to_string()))
    }
}

#[derive(Serialize, Deserialize)]
struct LayerRecord {
    /// `[fan_out, fan_in]`
    weight_shape: [usize; 2],
    weights: Vec<f64>,
    bias: Vec<f64>,
    adam_m_weights: Vec<f64>,
    adam_m_bias: Vec<f64>,
    adam_v_weights: Vec<f64>,
    adam_v_bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct NetRecord {
    format_version: u32,
    spec: MlpSpec,
    adam_step: u64,
    layers: Vec<LayerRecord>,
}

impl Serialize for MlpNet {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let layers = self
            .layout
            .iter()
            .map(|l| {
                let w = l.w_offset..l.b_offset;
                let b = l.b_offset..l.b_offset + l.fan_out;
                LayerRecord {
                    weight_shape: [l.fan_out, l.fan_in],
                    weights: self.params[w.clone()].to_vec(),
                    bias: self.params[b.clone()].to_vec(),
                    adam_m_weights: self.adam_m[w.clone()].to_vec(),
                    adam_m_bias: self.adam_m[b.clone()].to_vec(),
                    adam_v_weights: self.adam_v[w].to_vec(),
                    adam_v_bias: self.adam_v[b].to_vec(),
                }
            })
            .collect();
        NetRecord {
            format_version: CHECKPOINT_VERSION,
            spec: self.spec.clone(),
            adam_step: self.step,
            layers,
        }
        .serialize(serializer)
    }
}

impl TryFrom<NetRecord> for MlpNet {
    type Error = NnError;

    fn try_from(rec: NetRecord) -> Result<Self, NnError> {
        if rec.format_version != CHECKPOINT_VERSION {
            return Err(NnError::InvalidCheckpoint(format!(
                "unsupported format version {}",
                rec.format_version
            )));
        }
        let mut net = MlpNet::zeros(rec.spec)?;
        if rec.layers.len() != net.layout.len() {
            return Err(NnError::InvalidCheckpoint(format!(
                "expected {} layers, found {}",
                net.layout.len(),
                rec.layers.len()
            )));
        }
        for (i, (l, r)) in net.layout.clone().iter().zip(&rec.layers).enumerate() {
            let nw = l.fan_in * l.fan_out;
            let shapes_ok = r.weight_shape == [l.fan_out, l.fan_in]
                && [&r.weights, &r.adam_m_weights, &r.adam_v_weights]
                    .iter()
                    .all(|v| v.len() == nw)
                && [&r.bias, &r.adam_m_bias, &r.adam_v_bias]
                    .iter()
                    .all(|v| v.len() == l.fan_out);
            if !shapes_ok {
                return Err(NnError::InvalidCheckpoint(format!(
                    "layer {i} arrays do not match the spec"
                )));
            }
            let w = l.w_offset..l.b_offset;
            let b = l.b_offset..l.b_offset + l.fan_out;
            net.params[w.clone()].copy_from_slice(&r.weights);
            net.params[b.clone()].copy_from_slice(&r.bias);
            net.adam_m[w.clone()].copy_from_slice(&r.adam_m_weights);
            net.adam_m[b.clone()].copy_from_slice(&r.adam_m_bias);
            net.adam_v[w].copy_from_slice(&r.adam_v_weights);
            net.adam_v[b].copy_from_slice(&r.adam_v_bias);
        }
        net.step = rec.adam_step;
        Ok(net)
    }
}

impl<'de> Deserialize<'de> for MlpNet {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let rec = NetRecord::deserialize(deserializer)?;
        MlpNet::try_from(rec).map_err(serde::de::Error::custom)
    }
}
