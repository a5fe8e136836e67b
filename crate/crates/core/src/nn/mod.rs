//! Minimal dense feed-forward network with manual backpropagation,
//! inverted dropout, an Adam optimizer, and JSON serialization.

mod loss;
mod train;

pub use loss::{gaussian_head, loss_and_grad, softmax, Loss};
pub use train::{finite_difference_check, train, Batch, TrainConfig};

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngState;

pub const MODEL_FORMAT_VERSION: u32 = 1;
pub const LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Softplus,
    Linear,
    LeakyRelu,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Softplus => x.max(0.0) + (-x.abs()).exp().ln_1p(),
            Activation::Linear => x,
            Activation::LeakyRelu => {
                if x >= 0.0 {
                    x
                } else {
                    LEAKY_SLOPE * x
                }
            }
        }
    }

    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Softplus => {
                if x >= 0.0 {
                    1.0 / (1.0 + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (1.0 + e)
                }
            }
            Activation::Linear => 1.0,
            Activation::LeakyRelu => {
                if x >= 0.0 {
                    1.0
                } else {
                    LEAKY_SLOPE
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub input_dim: usize,
    pub output_dim: usize,
    pub activation: Activation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    DeterministicClassifier,
    EvidentialClassifier,
    GaussianRegressor,
    EvidentialRegressor,
    DeterministicRegressor,
}

impl Head {
    /// Output width per the head kind, given K classes or T targets.
    pub fn output_width(self, classes_or_targets: usize) -> usize {
        match self {
            Head::DeterministicClassifier | Head::EvidentialClassifier => classes_or_targets,
            Head::DeterministicRegressor => classes_or_targets,
            Head::GaussianRegressor => 2 * classes_or_targets,
            Head::EvidentialRegressor => 4 * classes_or_targets,
        }
    }

    pub fn is_classifier(self) -> bool {
        matches!(self, Head::DeterministicClassifier | Head::EvidentialClassifier)
    }
}

/// Per-task standardization statistics fit on the training split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetStats {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Network {
    pub layers: Vec<LayerSpec>,
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
    pub head: Head,
    pub dropout_rate: f64,
    /// Present when targets were standardized during training.
    pub target_stats: Option<Vec<TargetStats>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForwardMode {
    /// Deterministic inference, dropout off.
    Eval,
    /// Training pass; dropout masks drawn when dropout_rate > 0.
    Train,
    /// Inference with dropout masks still drawn (MC dropout).
    McDropout,
}

impl ForwardMode {
    fn dropout_active(self) -> bool {
        matches!(self, ForwardMode::Train | ForwardMode::McDropout)
    }
}

/// Intermediate state from a forward pass, consumed by [`Network::backward`].
pub struct ForwardCache {
    /// Input to each layer (post-dropout of the previous activation).
    layer_inputs: Vec<Array2<f64>>,
    /// Pre-activation values per layer.
    pre_activations: Vec<Array2<f64>>,
    /// Dropout masks (already inverted-scaled) per hidden layer, or None.
    masks: Vec<Option<Array2<f64>>>,
}

#[derive(Debug, Clone)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl Network {
    /// Glorot-uniform initialization from a seeded RNG.
    pub fn new(
        layers: Vec<LayerSpec>,
        head: Head,
        dropout_rate: f64,
        rng: &mut RngState,
    ) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("network needs at least one layer".into()));
        }
        for w in layers.windows(2) {
            if w[0].output_dim != w[1].input_dim {
                return Err(Error::Config(format!(
                    "layer dims do not chain: {} -> {}",
                    w[0].output_dim, w[1].input_dim
                )));
            }
        }
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(Error::Config(format!("dropout_rate out of [0,1): {dropout_rate}")));
        }
        let mut weights = Vec::with_capacity(layers.len());
        let mut biases = Vec::with_capacity(layers.len());
        for spec in &layers {
            let limit = (6.0 / (spec.input_dim + spec.output_dim) as f64).sqrt();
            let w = Array2::from_shape_fn((spec.input_dim, spec.output_dim), |_| {
                rng.uniform_range(-limit, limit)
            });
            weights.push(w);
            biases.push(Array1::zeros(spec.output_dim));
        }
        Ok(Network {
            layers,
            weights,
            biases,
            head,
            dropout_rate,
            target_stats: None,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().output_dim
    }

    /// Forward pass. Dropout applies to hidden-layer activations only.
    pub fn forward(
        &self,
        inputs: &Array2<f64>,
        mode: ForwardMode,
        rng: &mut RngState,
    ) -> Result<(Array2<f64>, ForwardCache)> {
        if inputs.ncols() != self.input_dim() {
            return Err(Error::Dimension(format!(
                "input width {} != first layer {}",
                inputs.ncols(),
                self.input_dim()
            )));
        }
        let n_layers = self.layers.len();
        let mut layer_inputs = Vec::with_capacity(n_layers);
        let mut pre_activations = Vec::with_capacity(n_layers);
        let mut masks = Vec::with_capacity(n_layers);
        let mut x = inputs.clone();
        for (li, spec) in self.layers.iter().enumerate() {
            layer_inputs.push(x.clone());
            let z = x.dot(&self.weights[li]) + &self.biases[li];
            let mut a = z.mapv(|v| spec.activation.apply(v));
            pre_activations.push(z);
            let is_hidden = li + 1 < n_layers;
            if is_hidden && mode.dropout_active() && self.dropout_rate > 0.0 {
                let keep = 1.0 - self.dropout_rate;
                let mask = Array2::from_shape_fn(a.dim(), |_| {
                    if rng.uniform() < keep {
                        1.0 / keep
                    } else {
                        0.0
                    }
                });
                a = &a * &mask;
                masks.push(Some(mask));
            } else {
                masks.push(None);
            }
            x = a;
        }
        Ok((
            x,
            ForwardCache {
                layer_inputs,
                pre_activations,
                masks,
            },
        ))
    }

    /// Reverse-mode gradients of all parameters given dL/d(raw outputs).
    pub fn backward(&self, cache: &ForwardCache, upstream: &Array2<f64>) -> Result<Gradients> {
        if cache.layer_inputs.len() != self.layers.len() {
            return Err(Error::Dimension("stale cache: layer count mismatch".into()));
        }
        if upstream.dim() != cache.pre_activations.last().unwrap().dim() {
            return Err(Error::Dimension("upstream gradient shape mismatch".into()));
        }
        let mut grads_w = vec![Array2::zeros((0, 0)); self.layers.len()];
        let mut grads_b = vec![Array1::zeros(0); self.layers.len()];
        let mut delta = upstream.clone();
        for li in (0..self.layers.len()).rev() {
            let spec = &self.layers[li];
            // gradient flows back through the dropout mask first
            if let Some(mask) = &cache.masks[li] {
                delta = &delta * mask;
            }
            let dz = &delta * &cache.pre_activations[li].mapv(|v| spec.activation.derivative(v));
            grads_w[li] = cache.layer_inputs[li].t().dot(&dz);
            grads_b[li] = dz.sum_axis(ndarray::Axis(0));
            if li > 0 {
                delta = dz.dot(&self.weights[li].t());
            }
        }
        Ok(Gradients {
            weights: grads_w,
            biases: grads_b,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Doc<'a> {
            version: u32,
            network: &'a Network,
        }
        Ok(serde_json::to_string_pretty(&Doc {
            version: MODEL_FORMAT_VERSION,
            network: self,
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Doc {
            version: u32,
            network: Network,
        }
        let doc: Doc = serde_json::from_str(text)?;
        if doc.version != MODEL_FORMAT_VERSION {
            return Err(Error::Config(format!(
                "unsupported model format version {}",
                doc.version
            )));
        }
        Ok(doc.network)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Standard Adam optimizer state (beta1=0.9, beta2=0.999, eps=1e-8).
#[derive(Debug, Clone)]
pub struct AdamState {
    m_w: Vec<Array2<f64>>,
    v_w: Vec<Array2<f64>>,
    m_b: Vec<Array1<f64>>,
    v_b: Vec<Array1<f64>>,
    t: u64,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

impl AdamState {
    pub fn new(net: &Network) -> Self {
        AdamState {
            m_w: net.weights.iter().map(|w| Array2::zeros(w.dim())).collect(),
            v_w: net.weights.iter().map(|w| Array2::zeros(w.dim())).collect(),
            m_b: net.biases.iter().map(|b| Array1::zeros(b.len())).collect(),
            v_b: net.biases.iter().map(|b| Array1::zeros(b.len())).collect(),
            t: 0,
        }
    }
}

/// One Adam update applied in place.
pub fn adam_step(net: &mut Network, grads: &Gradients, state: &mut AdamState, lr: f64) {
    state.t += 1;
    let t = state.t as f64;
    let bc1 = 1.0 - ADAM_BETA1.powf(t);
    let bc2 = 1.0 - ADAM_BETA2.powf(t);
    for li in 0..net.weights.len() {
        state.m_w[li] = &state.m_w[li] * ADAM_BETA1 + &(&grads.weights[li] * (1.0 - ADAM_BETA1));
        state.v_w[li] = &state.v_w[li] * ADAM_BETA2
            + &(grads.weights[li].mapv(|g| g * g) * (1.0 - ADAM_BETA2));
        let update = ndarray::Zip::from(&state.m_w[li])
            .and(&state.v_w[li])
            .map_collect(|&m, &v| lr * (m / bc1) / ((v / bc2).sqrt() + ADAM_EPS));
        net.weights[li] = &net.weights[li] - &update;

        state.m_b[li] = &state.m_b[li] * ADAM_BETA1 + &(&grads.biases[li] * (1.0 - ADAM_BETA1));
        state.v_b[li] =
            &state.v_b[li] * ADAM_BETA2 + &(grads.biases[li].mapv(|g| g * g) * (1.0 - ADAM_BETA2));
        let update = ndarray::Zip::from(&state.m_b[li])
            .and(&state.v_b[li])
            .map_collect(|&m, &v| lr * (m / bc1) / ((v / bc2).sqrt() + ADAM_EPS));
        net.biases[li] = &net.biases[li] - &update;
    }
}
