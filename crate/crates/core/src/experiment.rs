//! Experiment orchestration: declarative configuration, training and
//! evaluation runs, calibration sweeps, diurnal profiles, and report
//! emission with reproducibility manifests.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::ensemble::{mc_dropout_predict, EnsembleSpec, DEFAULT_MC_SAMPLES};
use crate::error::{Error, Result};
use crate::evcls;
use crate::evreg;
use crate::metrics::{
    brier_score, brier_skill_score, confusion_and_f1, discard_test, pit_histogram,
    randomized_pit, reliability, rmse, spread_skill, DiscardCurve, PitHistogram,
    ReliabilityBins, SpreadSkillBins,
};
use crate::nn::{
    softmax, train, Activation, Batch, ForwardMode, Head, LayerSpec, Loss, Network, TargetStats,
    TrainConfig,
};
use crate::rng::RngState;
use crate::synth::{
    gen_categorical, gen_heteroscedastic, grouped_split, load_csv, DatasetSchema, SplitDataset,
    SyntheticTruth,
};
use ndarray::{Array1, Array2};

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const MANIFEST_VERSION: u32 = 1;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSource {
    Csv {
        path: PathBuf,
        schema: DatasetSchema,
    },
    SynthCategorical {
        n: usize,
        k: usize,
        noise_level: f64,
    },
    SynthHeteroscedastic {
        n: usize,
        #[serde(default)]
        n_ood: usize,
    },
}

fn default_activation() -> Activation {
    Activation::Relu
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    #[serde(default = "default_activation")]
    pub activation: Activation,
    pub head: Head,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub ensemble: Option<EnsembleSpec>,
    #[serde(default)]
    pub lambda_grid: Vec<f64>,
    #[serde(default)]
    pub dropout_grid: Vec<f64>,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    /// Number of MC-dropout forward passes for the dropout sweep.
    #[serde(default = "default_n_mc")]
    pub n_mc: usize,
}

fn default_n_mc() -> usize {
    DEFAULT_MC_SAMPLES
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text, &[])
    }

    /// Parse a config document, applying `overrides` as `dotted.path=value`
    /// assignments before deserialization.
    pub fn from_json(text: &str, overrides: &[String]) -> Result<Self> {
        let mut value: serde_json::Value = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("config parse error: {e}")))?;
        for ov in overrides {
            apply_override(&mut value, ov)?;
        }
        let cfg: ExperimentConfig = serde_json::from_value(value)
            .map_err(|e| Error::Config(format!("config error: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Collect every validation failure before reporting.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.model.hidden.is_empty() {
            problems.push("model.hidden must list at least one hidden width".to_string());
        }
        if self.model.hidden.iter().any(|&w| w == 0) {
            problems.push("model.hidden widths must be positive".to_string());
        }
        if self.train.learning_rate <= 0.0 {
            problems.push("train.learning_rate must be positive".to_string());
        }
        if self.train.batch_size == 0 {
            problems.push("train.batch_size must be positive".to_string());
        }
        if !(0.0..1.0).contains(&self.train.dropout_rate) {
            problems.push("train.dropout_rate must lie in [0,1)".to_string());
        }
        if self.train.lambda < 0.0 {
            problems.push("train.lambda must be non-negative".to_string());
        }
        let loss = Loss::for_head(
            self.model.head,
            self.train.annealing_epochs,
            self.train.lambda,
        );
        if !loss.compatible_with(self.model.head) {
            problems.push(format!(
                "loss {loss:?} incompatible with head {:?}",
                self.model.head
            ));
        }
        match &self.dataset {
            DatasetSource::Csv { schema, .. } => {
                if let Err(e) = schema.validate() {
                    problems.push(format!("dataset.schema: {e}"));
                }
                let classifier = self.model.head.is_classifier();
                let categorical =
                    matches!(schema.target_kind, crate::synth::TargetKind::Categorical);
                if classifier != categorical {
                    problems.push("dataset target kind does not match model head".to_string());
                }
            }
            DatasetSource::SynthCategorical { n, k, noise_level } => {
                if *n == 0 {
                    problems.push("dataset.n must be positive".to_string());
                }
                if *k < 2 {
                    problems.push("dataset.k must be >= 2".to_string());
                }
                if *noise_level < 0.0 {
                    problems.push("dataset.noise_level must be >= 0".to_string());
                }
                if !self.model.head.is_classifier() {
                    problems.push("categorical dataset needs a classifier head".to_string());
                }
            }
            DatasetSource::SynthHeteroscedastic { n, .. } => {
                if *n == 0 {
                    problems.push("dataset.n must be positive".to_string());
                }
                if self.model.head.is_classifier() {
                    problems.push("regression dataset needs a regressor head".to_string());
                }
            }
        }
        if let Some(spec) = &self.ensemble {
            if let Err(e) = spec.validate() {
                problems.push(format!("ensemble: {e}"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    /// FNV-1a hash of the canonical (serialized) config, as a hex string.
    pub fn hash(&self) -> Result<String> {
        let canon = serde_json::to_string(self)?;
        let mut h: u64 = 0xcbf29ce484222325;
        for b in canon.as_bytes() {
            h ^= *b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        Ok(format!("{h:016x}"))
    }
}

fn apply_override(value: &mut serde_json::Value, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override '{assignment}' is not path=value")))?;
    let parsed: serde_json::Value = serde_json::from_str(raw)
        .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
    let mut cursor = value;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = cursor.as_object_mut().ok_or_else(|| {
            Error::Config(format!("override path '{path}' does not address an object"))
        })?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), parsed);
            return Ok(());
        }
        cursor = obj
            .entry(part.to_string())
            .or_insert_with(|| serde_json::Value::Object(Default::default()));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Dataset loading
// ---------------------------------------------------------------------------

/// A loaded, split dataset with optional ground truth and OOD band.
pub struct LoadedData {
    pub split: SplitDataset,
    /// Ground-truth probabilities for the test split (synthetic categorical).
    pub test_truth_probs: Option<Array2<f64>>,
    /// Out-of-distribution batch (synthetic heteroscedastic band).
    pub ood: Option<Batch>,
    pub n_classes: Option<usize>,
}

const SYNTH_FRACTIONS: [f64; 3] = [0.6, 0.2, 0.2];

pub fn load_dataset(cfg: &ExperimentConfig) -> Result<LoadedData> {
    match &cfg.dataset {
        DatasetSource::Csv { path, schema } => {
            let split = load_csv(path, schema, cfg.seed)?;
            let n_classes = schema.n_classes;
            Ok(LoadedData { split, test_truth_probs: None, ood: None, n_classes })
        }
        DatasetSource::SynthCategorical { n, k, noise_level } => {
            let mut rng = RngState::new(cfg.seed).child(0x646174); // "dat"
            let d = gen_categorical(*n, *k, *noise_level, &mut rng)?;
            let split = grouped_split(
                d.features.clone(),
                d.targets.clone(),
                &d.groups,
                SYNTH_FRACTIONS,
                cfg.seed,
            )?;
            let SyntheticTruth::Categorical { probs } = &d.truth else { unreachable!() };
            let test_probs = Array2::from_shape_fn(
                (split.test_idx.len(), *k),
                |(i, j)| probs[[split.test_idx[i], j]],
            );
            Ok(LoadedData {
                split,
                test_truth_probs: Some(test_probs),
                ood: None,
                n_classes: Some(*k),
            })
        }
        DatasetSource::SynthHeteroscedastic { n, n_ood } => {
            let mut rng = RngState::new(cfg.seed).child(0x646174);
            let d = gen_heteroscedastic(*n, *n_ood, &mut rng)?;
            let id_idx: Vec<usize> = (0..*n).collect();
            let features = d.features.select(ndarray::Axis(0), &id_idx);
            let targets = d.targets.select(ndarray::Axis(0), &id_idx);
            let groups: Vec<u64> = id_idx.iter().map(|&i| d.groups[i]).collect();
            let split = grouped_split(features, targets, &groups, SYNTH_FRACTIONS, cfg.seed)?;
            let ood = if *n_ood > 0 {
                let ood_idx: Vec<usize> = (*n..*n + *n_ood).collect();
                Some(Batch::new(
                    d.features.select(ndarray::Axis(0), &ood_idx),
                    d.targets.select(ndarray::Axis(0), &ood_idx),
                )?)
            } else {
                None
            };
            Ok(LoadedData { split, test_truth_probs: None, ood, n_classes: None })
        }
    }
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

fn head_width_param(head: Head, data: &LoadedData) -> usize {
    if head.is_classifier() {
        data.n_classes.unwrap_or(data.split.train.targets.ncols())
    } else {
        data.split.train.targets.ncols()
    }
}

pub fn build_layers(cfg: &ModelConfig, input_dim: usize, classes_or_targets: usize) -> Vec<LayerSpec> {
    let mut dims = vec![input_dim];
    dims.extend(&cfg.hidden);
    dims.push(cfg.head.output_width(classes_or_targets));
    let mut layers = Vec::with_capacity(dims.len() - 1);
    for w in dims.windows(2) {
        layers.push(LayerSpec {
            input_dim: w[0],
            output_dim: w[1],
            activation: cfg.activation,
        });
    }
    // the output layer is linear; heads apply their own transforms
    layers.last_mut().unwrap().activation = Activation::Linear;
    layers
}

/// Per-task standardization statistics fitted on the training split.
pub fn fit_target_stats(targets: &Array2<f64>) -> Vec<TargetStats> {
    let (n, t) = targets.dim();
    (0..t)
        .map(|j| {
            let col: Vec<f64> = (0..n).map(|i| targets[[i, j]]).collect();
            let mean = col.iter().sum::<f64>() / n as f64;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let std = var.sqrt().max(1e-12);
            TargetStats { mean, std }
        })
        .collect()
}

fn standardize_targets(targets: &Array2<f64>, stats: &[TargetStats]) -> Array2<f64> {
    let (n, t) = targets.dim();
    Array2::from_shape_fn((n, t), |(i, j)| {
        (targets[[i, j]] - stats[j].mean) / stats[j].std
    })
}

/// Outcome of a training run.
pub struct TrainedModel {
    pub network: Network,
    pub trace: Vec<f64>,
}

/// Train a model per the config. Regression targets are standardized per
/// task on the training split; the statistics travel with the model so
/// predictions are reported in original units.
pub fn run_train(cfg: &ExperimentConfig, data: &LoadedData) -> Result<TrainedModel> {
    let head = cfg.model.head;
    let width_param = head_width_param(head, data);
    let layers = build_layers(&cfg.model, data.split.train.inputs.ncols(), width_param);
    let mut rng = RngState::new(cfg.seed).child(0x696e6974); // "init"
    let mut net = Network::new(layers, head, cfg.train.dropout_rate, &mut rng)?;

    let train_batch = if head.is_classifier() {
        data.split.train.clone()
    } else {
        let stats = fit_target_stats(&data.split.train.targets);
        let std_targets = standardize_targets(&data.split.train.targets, &stats);
        net.target_stats = Some(stats);
        Batch::with_weights(
            data.split.train.inputs.clone(),
            std_targets,
            data.split.train.sample_weights.clone(),
        )?
    };
    let loss = Loss::for_head(head, cfg.train.annealing_epochs, cfg.train.lambda);
    let mut train_rng = RngState::new(cfg.seed).child(0x747261696e); // "train"
    let (network, trace) = train(net, &train_batch, &cfg.train, &loss, &mut train_rng)?;
    Ok(TrainedModel { network, trace })
}

// ---------------------------------------------------------------------------
// Prediction
// ---------------------------------------------------------------------------

/// Head-specific predictions in original target units.
pub enum Predictions {
    Classifier {
        probs: Array2<f64>,
        uncertainty: Option<evcls::ClassUncertainty>,
        dst_u: Option<Array1<f64>>,
        entropy: Array1<f64>,
    },
    Regressor {
        prediction: Array2<f64>,
        uncertainty: Option<evreg::RegressionUncertainty>,
        /// PIT values against the supplied targets (parametric heads only).
        pit: Option<Vec<f64>>,
    },
}

fn destandardize_nig(out: &mut evreg::NIGOutput, stats: &[TargetStats]) {
    let (n, t) = out.gamma.dim();
    for j in 0..t.min(stats.len()) {
        let TargetStats { mean, std } = stats[j];
        for i in 0..n {
            out.gamma[[i, j]] = out.gamma[[i, j]] * std + mean;
            out.beta[[i, j]] *= std * std;
        }
    }
}

/// Run the network in eval mode and interpret its raw outputs per head.
pub fn predict(net: &Network, inputs: &Array2<f64>, targets: Option<&Array2<f64>>) -> Result<Predictions> {
    let mut rng = RngState::new(0);
    let (raw, _) = net.forward(inputs, ForwardMode::Eval, &mut rng)?;
    match net.head {
        Head::EvidentialClassifier => {
            let ev = evcls::evidence_head(&raw)?;
            let unc = evcls::decompose(&ev);
            let masses = evcls::dst_masses(&ev);
            let entropy = evcls::expected_prob_entropy(&ev);
            Ok(Predictions::Classifier {
                probs: ev.expected_probs,
                uncertainty: Some(unc),
                dst_u: Some(masses.u),
                entropy,
            })
        }
        Head::DeterministicClassifier => {
            let probs = softmax(&raw);
            let n = probs.nrows();
            let mut entropy = Array1::zeros(n);
            for i in 0..n {
                let mut h = 0.0;
                for &p in probs.row(i) {
                    if p > 0.0 {
                        h -= p * p.ln();
                    }
                }
                entropy[i] = h;
            }
            Ok(Predictions::Classifier { probs, uncertainty: None, dst_u: None, entropy })
        }
        Head::EvidentialRegressor => {
            let mut out = evreg::nig_head(&raw)?;
            if let Some(stats) = &net.target_stats {
                destandardize_nig(&mut out, stats);
            }
            let unc = evreg::decompose(&out)?;
            let pit = match targets {
                Some(y) => {
                    let cdf = evreg::predictive_cdf(&out, y)?;
                    Some(cdf.iter().cloned().collect())
                }
                None => None,
            };
            Ok(Predictions::Regressor {
                prediction: unc.prediction.clone(),
                uncertainty: Some(unc),
                pit,
            })
        }
        Head::GaussianRegressor => {
            let (mut mu, mut var) = crate::nn::gaussian_head(&raw)?;
            if let Some(stats) = &net.target_stats {
                let (n, t) = mu.dim();
                for j in 0..t.min(stats.len()) {
                    for i in 0..n {
                        mu[[i, j]] = mu[[i, j]] * stats[j].std + stats[j].mean;
                        var[[i, j]] *= stats[j].std * stats[j].std;
                    }
                }
            }
            let pit = targets.map(|y| {
                let mut v = Vec::with_capacity(y.len());
                for i in 0..y.nrows() {
                    for j in 0..y.ncols() {
                        let z = (y[[i, j]] - mu[[i, j]]) / var[[i, j]].sqrt();
                        v.push(crate::special::std_normal_cdf(z));
                    }
                }
                v
            });
            let unc = evreg::RegressionUncertainty {
                prediction: mu.clone(),
                aleatoric: var.clone(),
                epistemic: Array2::zeros(var.dim()),
                total: var,
            };
            Ok(Predictions::Regressor { prediction: mu, uncertainty: Some(unc), pit })
        }
        Head::DeterministicRegressor => {
            let mut pred = raw;
            if let Some(stats) = &net.target_stats {
                let (n, t) = pred.dim();
                for j in 0..t.min(stats.len()) {
                    for i in 0..n {
                        pred[[i, j]] = pred[[i, j]] * stats[j].std + stats[j].mean;
                    }
                }
            }
            Ok(Predictions::Regressor { prediction: pred, uncertainty: None, pit: None })
        }
    }
}

// ---------------------------------------------------------------------------
// Evaluation report
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct ComponentSummary {
    pub mean: f64,
    pub median: f64,
    pub q10: f64,
    pub q90: f64,
    /// Counts in 10 equal-width bins over [min, max] (tail visibility).
    pub histogram: Vec<usize>,
    pub min: f64,
    pub max: f64,
}

pub fn summarize(values: &[f64]) -> Result<ComponentSummary> {
    if values.is_empty() {
        return Err(Error::Data("cannot summarize empty values".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let q = |p: f64| -> f64 {
        let pos = p * (sorted.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        let frac = pos - lo as f64;
        sorted[lo] * (1.0 - frac) + sorted[hi] * frac
    };
    let min = sorted[0];
    let max = *sorted.last().unwrap();
    let span = (max - min).max(1e-300);
    let mut histogram = vec![0usize; 10];
    for &v in values {
        let b = (((v - min) / span * 10.0) as usize).min(9);
        histogram[b] += 1;
    }
    Ok(ComponentSummary {
        mean: values.iter().sum::<f64>() / values.len() as f64,
        median: q(0.5),
        q10: q(0.1),
        q90: q(0.9),
        histogram,
        min,
        max,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct DecompositionSummary {
    pub aleatoric: ComponentSummary,
    pub epistemic: ComponentSummary,
    pub total: ComponentSummary,
}

#[derive(Debug, Clone, Serialize)]
pub struct NamedDiscardCurve {
    pub ordering: String,
    pub curve: DiscardCurve,
}

#[derive(Debug, Clone, Serialize)]
pub struct ClassificationReport {
    pub brier: f64,
    pub bss: f64,
    pub macro_f1: f64,
    pub confusion: Vec<Vec<usize>>,
    pub per_class_reliability: Vec<ReliabilityBins>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub decomposition: Option<DecompositionSummary>,
    pub discard: Vec<NamedDiscardCurve>,
}

#[derive(Debug, Clone, Serialize)]
pub struct OodComparison {
    pub in_distribution_median_epistemic: f64,
    pub ood_median_epistemic: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RegressionReport {
    pub rmse: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pit: Option<PitHistogram>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spread_skill: Option<SpreadSkillBins>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub decomposition: Option<DecompositionSummary>,
    pub discard: Vec<NamedDiscardCurve>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ood: Option<OodComparison>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub config_echo: serde_json::Value,
    pub config_hash: String,
    pub code_version: String,
    pub seed: u64,
    pub n_test: usize,
    pub timing_seconds: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub classification: Option<ClassificationReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub regression: Option<RegressionReport>,
    pub warnings: Vec<String>,
}

pub const DISCARD_FRACTIONS: [f64; 10] = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

fn brier_on_subset(probs: &Array2<f64>, targets: &Array2<f64>, idx: &[usize]) -> Result<f64> {
    brier_score(
        &probs.select(ndarray::Axis(0), idx),
        &targets.select(ndarray::Axis(0), idx),
    )
}

fn discard_curves_classifier(
    probs: &Array2<f64>,
    targets: &Array2<f64>,
    orderings: &[(&str, Vec<f64>)],
) -> Result<Vec<NamedDiscardCurve>> {
    orderings
        .iter()
        .map(|(name, unc)| {
            let curve = discard_test(
                |idx| brier_on_subset(probs, targets, idx),
                unc,
                &DISCARD_FRACTIONS,
                true,
            )?;
            Ok(NamedDiscardCurve { ordering: name.to_string(), curve })
        })
        .collect()
}

fn class_base_rates(targets: &Array2<f64>) -> Vec<f64> {
    let (n, k) = targets.dim();
    (0..k)
        .map(|j| (0..n).map(|i| targets[[i, j]]).sum::<f64>() / n as f64)
        .collect()
}

/// Evaluate a trained model on the test split and build the full report.
pub fn run_evaluate(cfg: &ExperimentConfig, net: &Network, data: &LoadedData) -> Result<EvalReport> {
    let start = Instant::now();
    let mut warnings = Vec::new();
    let test = &data.split.test;
    let preds = predict(net, &test.inputs, Some(&test.targets))?;

    let mut classification = None;
    let mut regression = None;
    match preds {
        Predictions::Classifier { probs, uncertainty, dst_u, entropy } => {
            test.check_one_hot()?;
            let truth_labels = test.labels();
            let k = probs.ncols();
            let climatology = class_base_rates(&test.targets);
            let brier = brier_score(&probs, &test.targets)?;
            let bss = brier_skill_score(&probs, &test.targets, &climatology)?;
            let pred_labels: Vec<usize> = (0..probs.nrows())
                .map(|i| {
                    let row = probs.row(i);
                    let mut best = 0;
                    for j in 1..k {
                        if row[j] > row[best] {
                            best = j;
                        }
                    }
                    best
                })
                .collect();
            let cm = confusion_and_f1(&pred_labels, &truth_labels, k)?;
            let mut per_class_reliability = Vec::with_capacity(k);
            for j in 0..k {
                let p: Vec<f64> = (0..probs.nrows()).map(|i| probs[[i, j]]).collect();
                let o: Vec<f64> = (0..probs.nrows()).map(|i| test.targets[[i, j]]).collect();
                per_class_reliability.push(reliability(&p, &o, 10)?);
            }
            let mut orderings: Vec<(&str, Vec<f64>)> =
                vec![("entropy", entropy.to_vec())];
            let decomposition = match &uncertainty {
                Some(u) => {
                    orderings.push(("aleatoric", u.summed_aleatoric.to_vec()));
                    orderings.push(("epistemic", u.summed_epistemic.to_vec()));
                    orderings.push(("total", u.summed_total.to_vec()));
                    if let Some(du) = &dst_u {
                        orderings.push(("dst_u", du.to_vec()));
                    }
                    Some(DecompositionSummary {
                        aleatoric: summarize(&u.summed_aleatoric.to_vec())?,
                        epistemic: summarize(&u.summed_epistemic.to_vec())?,
                        total: summarize(&u.summed_total.to_vec())?,
                    })
                }
                None => None,
            };
            let discard = discard_curves_classifier(&probs, &test.targets, &orderings)?;
            classification = Some(ClassificationReport {
                brier,
                bss,
                macro_f1: cm.macro_f1,
                confusion: cm.counts,
                per_class_reliability,
                decomposition,
                discard,
            });
        }
        Predictions::Regressor { prediction, uncertainty, pit } => {
            let pred_col: Vec<f64> = prediction.column(0).to_vec();
            let true_col: Vec<f64> = test.targets.column(0).to_vec();
            let overall_rmse = rmse(&pred_col, &true_col)?;
            let errors: Vec<f64> = pred_col
                .iter()
                .zip(&true_col)
                .map(|(p, t)| p - t)
                .collect();
            let pit_hist = match &pit {
                Some(values) => Some(pit_histogram(values, 10)?),
                None => None,
            };
            let (spread_bins, decomposition, discard, ood) = match &uncertainty {
                Some(u) => {
                    let spread: Vec<f64> =
                        u.total.column(0).iter().map(|v| v.sqrt()).collect();
                    let ss = spread_skill(&spread, &errors, 10)?;
                    if ss.degenerate {
                        warnings.push("spread was constant; single spread-skill bin".into());
                    }
                    let decomp = DecompositionSummary {
                        aleatoric: summarize(&u.aleatoric.column(0).to_vec())?,
                        epistemic: summarize(&u.epistemic.column(0).to_vec())?,
                        total: summarize(&u.total.column(0).to_vec())?,
                    };
                    let rmse_on = |idx: &[usize]| -> Result<f64> {
                        let p: Vec<f64> = idx.iter().map(|&i| pred_col[i]).collect();
                        let t: Vec<f64> = idx.iter().map(|&i| true_col[i]).collect();
                        rmse(&p, &t)
                    };
                    let mut curves = Vec::new();
                    for (name, vals) in [
                        ("aleatoric", u.aleatoric.column(0).to_vec()),
                        ("epistemic", u.epistemic.column(0).to_vec()),
                        ("total", u.total.column(0).to_vec()),
                    ] {
                        curves.push(NamedDiscardCurve {
                            ordering: name.to_string(),
                            curve: discard_test(rmse_on, &vals, &DISCARD_FRACTIONS, true)?,
                        });
                    }
                    let ood = match (&data.ood, net.head) {
                        (Some(band), Head::EvidentialRegressor) => {
                            let ood_preds =
                                predict(net, &band.inputs, Some(&band.targets))?;
                            if let Predictions::Regressor {
                                uncertainty: Some(ou), ..
                            } = ood_preds
                            {
                                let id_med =
                                    summarize(&u.epistemic.column(0).to_vec())?.median;
                                let ood_med =
                                    summarize(&ou.epistemic.column(0).to_vec())?.median;
                                Some(OodComparison {
                                    in_distribution_median_epistemic: id_med,
                                    ood_median_epistemic: ood_med,
                                    ratio: ood_med / id_med,
                                })
                            } else {
                                None
                            }
                        }
                        _ => None,
                    };
                    (Some(ss), Some(decomp), curves, ood)
                }
                None => (None, None, Vec::new(), None),
            };
            regression = Some(RegressionReport {
                rmse: overall_rmse,
                pit: pit_hist,
                spread_skill: spread_bins,
                decomposition,
                discard,
                ood,
            });
        }
    }

    let mut report = EvalReport {
        config_echo: serde_json::to_value(cfg)?,
        config_hash: cfg.hash()?,
        code_version: CODE_VERSION.to_string(),
        seed: cfg.seed,
        n_test: test.len(),
        timing_seconds: start.elapsed().as_secs_f64(),
        classification,
        regression,
        warnings,
    };
    // Absent values serialize as skipped fields, so any remaining null in
    // the JSON is a NaN that must not pass silently.
    if report_has_nan(&report)? {
        report.warnings.push("report contains non-finite metric values".into());
    }
    Ok(report)
}

fn report_has_nan(report: &EvalReport) -> Result<bool> {
    fn scan(v: &serde_json::Value) -> bool {
        match v {
            serde_json::Value::Null => true,
            serde_json::Value::Array(a) => a.iter().any(scan),
            serde_json::Value::Object(o) => o.values().any(scan),
            _ => false,
        }
    }
    // config_echo legitimately contains nulls; scan only the metric sections
    let cls = serde_json::to_value(&report.classification)?;
    let reg = serde_json::to_value(&report.regression)?;
    Ok(report.classification.is_some() && scan(&cls)
        || report.regression.is_some() && scan(&reg))
}

// ---------------------------------------------------------------------------
// Sweeps
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct LambdaSweepRow {
    pub lambda: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pitd: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pitd_skill: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct LambdaSweepResult {
    pub rows: Vec<LambdaSweepRow>,
    pub selected_lambda: f64,
}

/// Train one model per lambda (identical seeding otherwise) and select the
/// lambda minimizing validation PITD. Per-lambda failures are recorded and
/// the sweep continues.
pub fn run_sweep_lambda(cfg: &ExperimentConfig, data: &LoadedData) -> Result<LambdaSweepResult> {
    if cfg.model.head != Head::EvidentialRegressor {
        return Err(Error::Config("lambda sweep requires the evidential regression head".into()));
    }
    if cfg.lambda_grid.is_empty() {
        return Err(Error::Config("lambda_grid is empty".into()));
    }
    let mut rows = Vec::with_capacity(cfg.lambda_grid.len());
    let mut best: Option<(f64, f64)> = None;
    for &lambda in &cfg.lambda_grid {
        let mut sub = cfg.clone();
        sub.train.lambda = lambda;
        let outcome = (|| -> Result<(f64, f64)> {
            let model = run_train(&sub, data)?;
            let preds = predict(
                &model.network,
                &data.split.val.inputs,
                Some(&data.split.val.targets),
            )?;
            let Predictions::Regressor { pit: Some(pit), .. } = preds else {
                return Err(Error::Config("head produced no PIT values".into()));
            };
            let h = pit_histogram(&pit, 10)?;
            Ok((h.pitd, h.pitd_skill))
        })();
        match outcome {
            Ok((pitd, skill)) => {
                if best.map(|(_, b)| pitd < b).unwrap_or(true) {
                    best = Some((lambda, pitd));
                }
                rows.push(LambdaSweepRow {
                    lambda,
                    pitd: Some(pitd),
                    pitd_skill: Some(skill),
                    error: None,
                });
            }
            Err(e) => rows.push(LambdaSweepRow {
                lambda,
                pitd: None,
                pitd_skill: None,
                error: Some(e.to_string()),
            }),
        }
    }
    let (selected_lambda, _) = best
        .ok_or_else(|| Error::Numerical("every lambda in the sweep failed".into()))?;
    Ok(LambdaSweepResult { rows, selected_lambda })
}

#[derive(Debug, Clone, Serialize)]
pub struct DropoutSweepRow {
    pub rate: f64,
    pub pitd: f64,
    pub mean_discard_skill: f64,
    pub mean_spread: f64,
}

/// For each inference dropout rate, build an MC-dropout ensemble on the
/// validation split and report PITD of the randomized PIT plus the averaged
/// discard-test Brier skill. Non-positive rates are skipped.
pub fn run_sweep_dropout(
    cfg: &ExperimentConfig,
    net: &Network,
    data: &LoadedData,
) -> Result<Vec<DropoutSweepRow>> {
    if !net.head.is_classifier() {
        return Err(Error::Config("dropout sweep requires a classifier head".into()));
    }
    let rates: Vec<f64> = cfg.dropout_grid.iter().cloned().filter(|&r| r > 0.0).collect();
    if rates.is_empty() {
        return Err(Error::Config("dropout_grid has no positive rates".into()));
    }
    let val = &data.split.val;
    val.check_one_hot()?;
    let labels = val.labels();
    let climatology = class_base_rates(&val.targets);
    let mut rows = Vec::with_capacity(rates.len());
    for &rate in &rates {
        let mut rng = RngState::new(cfg.seed).child(0x6d63 ^ rate.to_bits());
        let raw_members = mc_dropout_predict(net, &val.inputs, cfg.n_mc, Some(rate), &mut rng)?;
        let member_probs: Vec<Array2<f64>> = raw_members
            .iter()
            .map(|raw| match net.head {
                Head::EvidentialClassifier => {
                    evcls::evidence_head(raw).map(|e| e.expected_probs)
                }
                _ => Ok(softmax(raw)),
            })
            .collect::<Result<_>>()?;
        let mean_probs = crate::ensemble::ensemble_mean(&member_probs)?;
        let decomp = crate::ensemble::decompose_categorical_ensemble(&member_probs)?;
        let pit = randomized_pit(&mean_probs, &labels, &mut rng)?;
        let pitd = pit_histogram(&pit, 10)?.pitd;
        let bss_on = |idx: &[usize]| -> Result<f64> {
            brier_skill_score(
                &mean_probs.select(ndarray::Axis(0), idx),
                &val.targets.select(ndarray::Axis(0), idx),
                &climatology,
            )
        };
        let curve = discard_test(
            bss_on,
            &decomp.summed_epistemic.to_vec(),
            &DISCARD_FRACTIONS,
            false,
        )?;
        let mean_discard_skill =
            curve.metric_values.iter().sum::<f64>() / curve.metric_values.len() as f64;
        let mean_spread = decomp
            .summed_epistemic
            .iter()
            .map(|v| v.sqrt())
            .sum::<f64>()
            / decomp.summed_epistemic.len() as f64;
        rows.push(DropoutSweepRow { rate, pitd, mean_discard_skill, mean_spread });
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Diurnal profile
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct DiurnalBin {
    pub bin_start: f64,
    pub bin_end: f64,
    pub median_prediction: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub median_aleatoric: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub median_epistemic: Option<f64>,
    pub count: usize,
}

fn median_of(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Per-bin medians of prediction and decomposed uncertainty over a cycle
/// coordinate (e.g. time of day). Medians mitigate outliers.
pub fn diurnal_profile(
    net: &Network,
    inputs: &Array2<f64>,
    cycle: &[f64],
    bin_width: f64,
    cycle_length: f64,
) -> Result<Vec<DiurnalBin>> {
    if cycle.len() != inputs.nrows() {
        return Err(Error::Dimension("cycle column length mismatch".into()));
    }
    if bin_width <= 0.0 || cycle_length <= 0.0 || bin_width > cycle_length {
        return Err(Error::InvalidParam("bin width must lie in (0, cycle_length]".into()));
    }
    let n_bins = (cycle_length / bin_width).ceil() as usize;
    let preds = predict(net, inputs, None)?;
    let (pred_col, ale, epi): (Vec<f64>, Option<Vec<f64>>, Option<Vec<f64>>) = match preds {
        Predictions::Regressor { prediction, uncertainty, .. } => (
            prediction.column(0).to_vec(),
            uncertainty.as_ref().map(|u| u.aleatoric.column(0).to_vec()),
            uncertainty.as_ref().map(|u| u.epistemic.column(0).to_vec()),
        ),
        Predictions::Classifier { probs, uncertainty, .. } => (
            probs.column(0).to_vec(),
            uncertainty.as_ref().map(|u| u.summed_aleatoric.to_vec()),
            uncertainty.as_ref().map(|u| u.summed_epistemic.to_vec()),
        ),
    };
    let mut bins = Vec::with_capacity(n_bins);
    for b in 0..n_bins {
        let lo = b as f64 * bin_width;
        let hi = (lo + bin_width).min(cycle_length);
        let idx: Vec<usize> = (0..cycle.len())
            .filter(|&i| {
                let c = cycle[i].rem_euclid(cycle_length);
                c >= lo && (c < hi || (b + 1 == n_bins && c <= hi))
            })
            .collect();
        if idx.is_empty() {
            continue;
        }
        let take = |vals: &[f64]| median_of(idx.iter().map(|&i| vals[i]).collect());
        bins.push(DiurnalBin {
            bin_start: lo,
            bin_end: hi,
            median_prediction: take(&pred_col),
            median_aleatoric: ale.as_ref().map(|v| take(v)),
            median_epistemic: epi.as_ref().map(|v| take(v)),
            count: idx.len(),
        });
    }
    Ok(bins)
}

// ---------------------------------------------------------------------------
// Output files
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub version: u32,
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub code_version: String,
    pub outputs: Vec<String>,
}

pub fn write_manifest(
    dir: &Path,
    command: &str,
    cfg: &ExperimentConfig,
    outputs: &[&str],
) -> Result<()> {
    let manifest = RunManifest {
        version: MANIFEST_VERSION,
        command: command.to_string(),
        config_hash: cfg.hash()?,
        seed: cfg.seed,
        code_version: CODE_VERSION.to_string(),
        outputs: outputs.iter().map(|s| s.to_string()).collect(),
    };
    std::fs::create_dir_all(dir)?;
    let text = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(dir.join("manifest.json"), text)?;
    Ok(())
}

pub fn write_trace_csv(path: &Path, trace: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "loss"])?;
    for (i, loss) in trace.iter().enumerate() {
        w.write_record([i.to_string(), format!("{loss}")])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_discard_csv(path: &Path, curves: &[NamedDiscardCurve]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["ordering", "fraction", "retained", "metric"])?;
    for c in curves {
        for i in 0..c.curve.fractions.len() {
            w.write_record([
                c.ordering.clone(),
                format!("{}", c.curve.fractions[i]),
                c.curve.retained_counts[i].to_string(),
                format!("{}", c.curve.metric_values[i]),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cat_config(dir: &Path) -> ExperimentConfig {
        ExperimentConfig {
            dataset: DatasetSource::SynthCategorical { n: 600, k: 3, noise_level: 0.5 },
            model: ModelConfig {
                hidden: vec![16],
                activation: Activation::Relu,
                head: Head::EvidentialClassifier,
            },
            train: TrainConfig {
                epochs: 40,
                batch_size: 64,
                seed: 1,
                ..TrainConfig::default()
            },
            ensemble: None,
            lambda_grid: vec![],
            dropout_grid: vec![],
            output_dir: dir.to_path_buf(),
            seed: 11,
            n_mc: 20,
        }
    }

    fn reg_config(dir: &Path) -> ExperimentConfig {
        ExperimentConfig {
            dataset: DatasetSource::SynthHeteroscedastic { n: 800, n_ood: 100 },
            model: ModelConfig {
                hidden: vec![16, 16],
                activation: Activation::Relu,
                head: Head::EvidentialRegressor,
            },
            train: TrainConfig {
                epochs: 60,
                batch_size: 64,
                lambda: 0.01,
                ..TrainConfig::default()
            },
            ensemble: None,
            lambda_grid: vec![],
            dropout_grid: vec![],
            output_dir: dir.to_path_buf(),
            seed: 13,
            n_mc: 20,
        }
    }

    #[test]
    fn config_parse_override_and_hash() {
        let text = r#"{
            "dataset": {"kind": "synth_categorical", "n": 100, "k": 3, "noise_level": 0.5},
            "model": {"hidden": [8], "head": "evidential_classifier"},
            "output_dir": "/tmp/x"
        }"#;
        let cfg = ExperimentConfig::from_json(text, &[]).unwrap();
        assert_eq!(cfg.seed, 0);
        assert_eq!(cfg.n_mc, 100);
        let h1 = cfg.hash().unwrap();
        assert_eq!(h1, cfg.hash().unwrap());

        let cfg2 =
            ExperimentConfig::from_json(text, &["seed=5".into(), "train.epochs=3".into()])
                .unwrap();
        assert_eq!(cfg2.seed, 5);
        assert_eq!(cfg2.train.epochs, 3);
        assert_ne!(h1, cfg2.hash().unwrap());
    }

    #[test]
    fn config_validation_lists_all_problems() {
        let text = r#"{
            "dataset": {"kind": "synth_categorical", "n": 0, "k": 1, "noise_level": 0.5},
            "model": {"hidden": [], "head": "evidential_regressor"},
            "train": {"learning_rate": -1.0},
            "output_dir": "/tmp/x"
        }"#;
        let err = ExperimentConfig::from_json(text, &[]).unwrap_err().to_string();
        assert!(err.contains("model.hidden"), "{err}");
        assert!(err.contains("learning_rate"), "{err}");
        assert!(err.contains("dataset.n"), "{err}");
        assert!(err.contains("dataset.k"), "{err}");
        assert!(err.contains("classifier head"), "{err}");
    }

    #[test]
    fn train_and_evaluate_classifier() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = cat_config(dir.path());
        let data = load_dataset(&cfg).unwrap();
        let model = run_train(&cfg, &data).unwrap();
        assert!(model.trace.last().unwrap() < model.trace.first().unwrap());
        let report = run_evaluate(&cfg, &model.network, &data).unwrap();
        let cls = report.classification.as_ref().unwrap();
        assert!(cls.bss > 0.0, "bss {}", cls.bss);
        assert!(cls.decomposition.is_some());
        assert_eq!(cls.per_class_reliability.len(), 3);
        let names: Vec<&str> =
            cls.discard.iter().map(|c| c.ordering.as_str()).collect();
        for required in ["aleatoric", "epistemic", "total", "dst_u", "entropy"] {
            assert!(names.contains(&required), "missing ordering {required}");
        }
        // report serializes to JSON
        let json = serde_json::to_string(&report).unwrap();
        assert!(json.contains("config_hash"));
    }

    #[test]
    fn epochs_zero_keeps_initialization() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = cat_config(dir.path());
        cfg.train.epochs = 0;
        let data = load_dataset(&cfg).unwrap();
        let model = run_train(&cfg, &data).unwrap();
        // rebuild the same initialization directly
        let width = 3;
        let layers = build_layers(&cfg.model, 2, width);
        let mut rng = RngState::new(cfg.seed).child(0x696e6974);
        let init = Network::new(layers, cfg.model.head, cfg.train.dropout_rate, &mut rng)
            .unwrap();
        for (a, b) in model.network.weights.iter().zip(&init.weights) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn regression_report_destandardized_and_ood() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = reg_config(dir.path());
        let data = load_dataset(&cfg).unwrap();
        let model = run_train(&cfg, &data).unwrap();
        assert!(model.network.target_stats.is_some());
        let report = run_evaluate(&cfg, &model.network, &data).unwrap();
        let reg = report.regression.as_ref().unwrap();
        // predictions are in original units: cubic targets span far beyond
        // standardized range, so RMSE must be far below the raw target spread
        let spread = data
            .split
            .test
            .targets
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max)
            - data
                .split
                .test
                .targets
                .iter()
                .cloned()
                .fold(f64::INFINITY, f64::min);
        assert!(reg.rmse < 0.5 * spread, "rmse {} vs spread {spread}", reg.rmse);
        assert!(reg.pit.is_some());
        assert!(reg.decomposition.is_some());
        let ood = reg.ood.as_ref().unwrap();
        assert!(ood.ratio > 0.0);
    }

    #[test]
    fn deterministic_report_omits_decomposition() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = cat_config(dir.path());
        cfg.model.head = Head::DeterministicClassifier;
        cfg.train.epochs = 10;
        let data = load_dataset(&cfg).unwrap();
        let model = run_train(&cfg, &data).unwrap();
        let report = run_evaluate(&cfg, &model.network, &data).unwrap();
        let cls = report.classification.as_ref().unwrap();
        assert!(cls.decomposition.is_none());
    }

    #[test]
    fn lambda_sweep_single_grid_point() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = reg_config(dir.path());
        cfg.train.epochs = 15;
        cfg.lambda_grid = vec![0.05];
        let data = load_dataset(&cfg).unwrap();
        let result = run_sweep_lambda(&cfg, &data).unwrap();
        assert_eq!(result.rows.len(), 1);
        assert_eq!(result.selected_lambda, 0.05);
        assert!(result.rows[0].error.is_none());
    }

    #[test]
    fn dropout_sweep_rows_and_reproducibility() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = cat_config(dir.path());
        cfg.train.epochs = 15;
        cfg.dropout_grid = vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5];
        cfg.n_mc = 10;
        let data = load_dataset(&cfg).unwrap();
        let model = run_train(&cfg, &data).unwrap();
        let rows = run_sweep_dropout(&cfg, &model.network, &data).unwrap();
        // rate 0 excluded automatically
        assert_eq!(rows.len(), 5);
        let rows2 = run_sweep_dropout(&cfg, &model.network, &data).unwrap();
        for (a, b) in rows.iter().zip(&rows2) {
            assert_eq!(a.pitd, b.pitd);
            assert_eq!(a.mean_spread, b.mean_spread);
        }
        // spread grows with the inference dropout rate
        for w in rows.windows(2) {
            assert!(w[1].mean_spread > w[0].mean_spread, "{rows:?}");
        }
    }

    #[test]
    fn diurnal_profile_cases() {
        let mut rng = RngState::new(3);
        let net = Network::new(
            vec![LayerSpec {
                input_dim: 1,
                output_dim: 1,
                activation: Activation::Linear,
            }],
            Head::DeterministicRegressor,
            0.0,
            &mut rng,
        )
        .unwrap();
        // make predictions constant: zero weights
        let mut net = net;
        net.weights[0].fill(0.0);
        net.biases[0].fill(2.5);
        let n = 240;
        let inputs = Array2::from_shape_fn((n, 1), |(i, _)| i as f64);
        let cycle: Vec<f64> = (0..n).map(|i| (i as f64 * 0.1) % 24.0).collect();
        let bins = diurnal_profile(&net, &inputs, &cycle, 1.0, 24.0).unwrap();
        // bin width dividing the cycle exactly -> cycle/width bins
        assert_eq!(bins.len(), 24);
        for b in &bins {
            assert_eq!(b.median_prediction, 2.5);
        }
        assert!(diurnal_profile(&net, &inputs, &cycle[..5], 1.0, 24.0).is_err());
        assert!(diurnal_profile(&net, &inputs, &cycle, 0.0, 24.0).is_err());
    }

    #[test]
    fn manifests_and_csv_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = cat_config(dir.path());
        write_manifest(dir.path(), "train", &cfg, &["model.json", "trace.csv"]).unwrap();
        let manifest = std::fs::read_to_string(dir.path().join("manifest.json")).unwrap();
        assert!(manifest.contains("config_hash"));
        write_trace_csv(&dir.path().join("trace.csv"), &[1.0, 0.5, 0.25]).unwrap();
        let trace = std::fs::read_to_string(dir.path().join("trace.csv")).unwrap();
        assert!(trace.starts_with("epoch,loss"));
        assert_eq!(trace.lines().count(), 4);
    }
}
