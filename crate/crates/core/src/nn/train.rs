//! Training loop: seeded shuffling, mini-batches, class weighting,
//! upsampling, Adam updates, and a finite-difference gradient check.

use ndarray::{Array2, Axis};

use super::{adam_step, loss_and_grad, AdamState, ForwardMode, Loss, Network};
use crate::error::{Error, Result};
use crate::rng::RngState;

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub dropout_rate: f64,
    pub seed: u64,
    pub l2_penalty: f64,
    pub class_weights: Option<Vec<f64>>,
    pub upsample: bool,
    pub annealing_epochs: usize,
    pub lambda: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            epochs: 100,
            batch_size: 128,
            dropout_rate: 0.0,
            seed: 0,
            l2_penalty: 0.0,
            class_weights: None,
            upsample: false,
            annealing_epochs: 10,
            lambda: 0.0,
        }
    }
}

/// A dataset slice: inputs, targets (one-hot for classification), and
/// per-sample weights.
#[derive(Debug, Clone)]
pub struct Batch {
    pub inputs: Array2<f64>,
    pub targets: Array2<f64>,
    pub sample_weights: Vec<f64>,
}

impl Batch {
    pub fn new(inputs: Array2<f64>, targets: Array2<f64>) -> Result<Self> {
        let n = inputs.nrows();
        let sample_weights = vec![1.0; n];
        Self::with_weights(inputs, targets, sample_weights)
    }

    pub fn with_weights(
        inputs: Array2<f64>,
        targets: Array2<f64>,
        sample_weights: Vec<f64>,
    ) -> Result<Self> {
        if inputs.nrows() != targets.nrows() || inputs.nrows() != sample_weights.len() {
            return Err(Error::Dimension(format!(
                "row counts disagree: inputs {}, targets {}, weights {}",
                inputs.nrows(),
                targets.nrows(),
                sample_weights.len()
            )));
        }
        if sample_weights.iter().any(|&w| w < 0.0 || !w.is_finite()) {
            return Err(Error::InvalidParam("sample weights must be finite and >= 0".into()));
        }
        Ok(Batch { inputs, targets, sample_weights })
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Validate that target rows are one-hot (for classification).
    pub fn check_one_hot(&self) -> Result<()> {
        for (i, row) in self.targets.rows().into_iter().enumerate() {
            let sum: f64 = row.sum();
            if (sum - 1.0).abs() > 1e-9 || row.iter().any(|&v| v < 0.0) {
                return Err(Error::Data(format!("target row {i} is not one-hot (sum {sum})")));
            }
        }
        Ok(())
    }

    /// Class label per sample (argmax of the one-hot row).
    pub fn labels(&self) -> Vec<usize> {
        self.targets
            .rows()
            .into_iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .map(|(j, _)| j)
                    .unwrap_or(0)
            })
            .collect()
    }

    pub fn select(&self, idx: &[usize]) -> Batch {
        let inputs = self.inputs.select(Axis(0), idx);
        let targets = self.targets.select(Axis(0), idx);
        let weights = idx.iter().map(|&i| self.sample_weights[i]).collect();
        Batch {
            inputs,
            targets,
            sample_weights: weights,
        }
    }
}

/// Epoch index list, upsampling minority classes to the majority count by
/// sampling with replacement.
fn epoch_indices(
    data: &Batch,
    classification: bool,
    upsample: bool,
    rng: &mut RngState,
) -> Vec<usize> {
    let n = data.len();
    if !(upsample && classification) {
        let mut idx: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut idx);
        return idx;
    }
    let labels = data.labels();
    let k = data.targets.ncols();
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &c) in labels.iter().enumerate() {
        by_class[c].push(i);
    }
    let majority = by_class.iter().map(|v| v.len()).max().unwrap_or(0);
    let mut idx = Vec::new();
    for members in &by_class {
        if members.is_empty() {
            continue;
        }
        idx.extend_from_slice(members);
        for _ in members.len()..majority {
            idx.push(members[rng.gen_usize_below(members.len())]);
        }
    }
    rng.shuffle(&mut idx);
    idx
}

/// Train `net` on `data`, returning the trained network and the per-epoch
/// mean loss trace. A NaN loss aborts with a diagnostic naming the batch.
pub fn train(
    mut net: Network,
    data: &Batch,
    cfg: &TrainConfig,
    loss: &Loss,
    rng: &mut RngState,
) -> Result<(Network, Vec<f64>)> {
    if !loss.compatible_with(net.head) {
        return Err(Error::Config(format!(
            "loss {loss:?} incompatible with head {:?}",
            net.head
        )));
    }
    if data.is_empty() {
        return Err(Error::Data("empty training set".into()));
    }
    let classification = net.head.is_classifier();
    if classification {
        data.check_one_hot()?;
        if let Some(w) = &cfg.class_weights {
            if w.len() != data.targets.ncols() {
                return Err(Error::Config(format!(
                    "class_weights length {} != K {}",
                    w.len(),
                    data.targets.ncols()
                )));
            }
            if w.iter().any(|&v| v <= 0.0) {
                return Err(Error::Config("class weights must be positive".into()));
            }
        }
    }
    net.dropout_rate = cfg.dropout_rate;

    // per-sample weights folded with class weights
    let mut weights = data.sample_weights.clone();
    if classification {
        if let Some(cw) = &cfg.class_weights {
            for (w, &c) in weights.iter_mut().zip(data.labels().iter()) {
                *w *= cw[c];
            }
        }
    }
    let weighted = Batch {
        inputs: data.inputs.clone(),
        targets: data.targets.clone(),
        sample_weights: weights,
    };

    let mut adam = AdamState::new(&net);
    let mut trace = Vec::with_capacity(cfg.epochs);
    let batch_size = cfg.batch_size.max(1);
    for epoch in 0..cfg.epochs {
        let idx = epoch_indices(&weighted, classification, cfg.upsample, rng);
        let mut epoch_loss = 0.0;
        let mut epoch_count = 0usize;
        for (bi, chunk) in idx.chunks(batch_size).enumerate() {
            let batch = weighted.select(chunk);
            let with_ctx = |e: Error| {
                Error::Numerical(format!("at epoch {epoch}, batch {bi}: {e}"))
            };
            let (raw, cache) = net
                .forward(&batch.inputs, ForwardMode::Train, rng)
                .map_err(with_ctx)?;
            let (value, grad_raw) =
                loss_and_grad(loss, &raw, &batch.targets, &batch.sample_weights, epoch)
                    .map_err(with_ctx)?;
            if !value.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite loss ({value}) at epoch {epoch}, batch {bi}"
                )));
            }
            let mut grads = net.backward(&cache, &grad_raw)?;
            if cfg.l2_penalty > 0.0 {
                for (g, w) in grads.weights.iter_mut().zip(net.weights.iter()) {
                    *g = &*g + &(w * (2.0 * cfg.l2_penalty));
                }
            }
            adam_step(&mut net, &grads, &mut adam, cfg.learning_rate);
            epoch_loss += value * chunk.len() as f64;
            epoch_count += chunk.len();
        }
        trace.push(epoch_loss / epoch_count as f64);
    }
    Ok((net, trace))
}

/// Compare analytic gradients against central finite differences on
/// `n_params` randomly sampled parameter coordinates. Returns the maximum
/// relative error observed. Runs in eval mode (no dropout masks).
pub fn finite_difference_check(
    net: &Network,
    loss: &Loss,
    batch: &Batch,
    n_params: usize,
    step: f64,
    epoch: usize,
    rng: &mut RngState,
) -> Result<f64> {
    if step <= 0.0 {
        return Err(Error::InvalidParam("step must be positive".into()));
    }
    let eval = |net: &Network| -> Result<f64> {
        let (raw, _) = net.forward(&batch.inputs, ForwardMode::Eval, &mut RngState::new(0))?;
        let (value, _) = loss_and_grad(loss, &raw, &batch.targets, &batch.sample_weights, epoch)?;
        Ok(value)
    };
    let (raw, cache) = net.forward(&batch.inputs, ForwardMode::Eval, &mut RngState::new(0))?;
    let (_, grad_raw) = loss_and_grad(loss, &raw, &batch.targets, &batch.sample_weights, epoch)?;
    let analytic = net.backward(&cache, &grad_raw)?;

    let mut max_rel = 0.0f64;
    let mut work = net.clone();
    for _ in 0..n_params {
        let li = rng.gen_usize_below(net.layers.len());
        let (rows, cols) = net.weights[li].dim();
        // bias coordinates included alongside weights
        let total = rows * cols + net.biases[li].len();
        let flat = rng.gen_usize_below(total);
        let (a_grad, plus, minus) = if flat < rows * cols {
            let (r, c) = (flat / cols, flat % cols);
            let orig = work.weights[li][[r, c]];
            work.weights[li][[r, c]] = orig + step;
            let plus = eval(&work)?;
            work.weights[li][[r, c]] = orig - step;
            let minus = eval(&work)?;
            work.weights[li][[r, c]] = orig;
            (analytic.weights[li][[r, c]], plus, minus)
        } else {
            let b = flat - rows * cols;
            let orig = work.biases[li][b];
            work.biases[li][b] = orig + step;
            let plus = eval(&work)?;
            work.biases[li][b] = orig - step;
            let minus = eval(&work)?;
            work.biases[li][b] = orig;
            (analytic.biases[li][b], plus, minus)
        };
        let fd = (plus - minus) / (2.0 * step);
        let denom = a_grad.abs().max(fd.abs()).max(1e-4);
        max_rel = max_rel.max((a_grad - fd).abs() / denom);
    }
    Ok(max_rel)
}
