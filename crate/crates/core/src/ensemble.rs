//! Ensemble construction (k-fold, deep ensemble, MC dropout) and the
//! ensemble-level law-of-total-variance decompositions and entropy.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evcls::ClassUncertainty;
use crate::evreg::RegressionUncertainty;
use crate::nn::{train, Batch, ForwardMode, Head, LayerSpec, Loss, Network, TrainConfig};
use crate::rng::RngState;
use ndarray::{Array1, Array2};

pub const DEFAULT_KFOLD_SIZE: usize = 20;
pub const DEFAULT_DEEP_SIZE: usize = 20;
pub const DEFAULT_MC_SAMPLES: usize = 100;

const SIMPLEX_TOL: f64 = 1e-6;
const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleKind {
    Kfold,
    Deep,
    McDropout,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub kind: EnsembleKind,
    pub size: usize,
    pub base_head: Head,
    /// Dropout rate for MC dropout at inference (ignored for other kinds).
    pub dropout_rate: Option<f64>,
}

impl EnsembleSpec {
    pub fn new(kind: EnsembleKind, base_head: Head) -> Self {
        let size = match kind {
            EnsembleKind::Kfold => DEFAULT_KFOLD_SIZE,
            EnsembleKind::Deep => DEFAULT_DEEP_SIZE,
            EnsembleKind::McDropout => DEFAULT_MC_SAMPLES,
        };
        EnsembleSpec { kind, size, base_head, dropout_rate: None }
    }

    pub fn validate(&self) -> Result<()> {
        if self.size < 2 {
            return Err(Error::InvalidParam(format!(
                "ensemble size must be >= 2, got {}",
                self.size
            )));
        }
        Ok(())
    }
}

/// A trained ensemble of independently usable members.
#[derive(Debug, Clone)]
pub struct EnsembleModel {
    pub spec: EnsembleSpec,
    pub members: Vec<Network>,
    pub member_seeds: Vec<u64>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    version: u32,
    spec: EnsembleSpec,
    member_seeds: Vec<u64>,
    member_files: Vec<String>,
    /// MC-dropout masks apply to hidden-layer activations only.
    mc_dropout_hidden_only: bool,
}

impl EnsembleModel {
    pub fn predict_members(&self, inputs: &Array2<f64>) -> Result<Vec<Array2<f64>>> {
        let mut rng = RngState::new(0);
        self.members
            .iter()
            .map(|m| m.forward(inputs, ForwardMode::Eval, &mut rng).map(|(o, _)| o))
            .collect()
    }

    /// Write member files plus a manifest under `dir`.
    pub fn save(&self, dir: &std::path::Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut member_files = Vec::with_capacity(self.members.len());
        for (i, m) in self.members.iter().enumerate() {
            let name = format!("member_{i:03}.json");
            m.save(&dir.join(&name))?;
            member_files.push(name);
        }
        let manifest = Manifest {
            version: MANIFEST_VERSION,
            spec: self.spec.clone(),
            member_seeds: self.member_seeds.clone(),
            member_files,
            mc_dropout_hidden_only: true,
        };
        let text = serde_json::to_string_pretty(&manifest)?;
        std::fs::write(dir.join("manifest.json"), text)?;
        Ok(())
    }

    pub fn load(dir: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(dir.join("manifest.json"))?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        if manifest.version != MANIFEST_VERSION {
            return Err(Error::Config(format!(
                "unsupported ensemble manifest version {}",
                manifest.version
            )));
        }
        let members = manifest
            .member_files
            .iter()
            .map(|f| Network::load(&dir.join(f)))
            .collect::<Result<Vec<_>>>()?;
        Ok(EnsembleModel {
            spec: manifest.spec,
            members,
            member_seeds: manifest.member_seeds,
        })
    }
}

fn member_seed(base: u64, index: u64) -> u64 {
    // splitmix64 of (base ^ index-dependent constant) so member streams are
    // decorrelated even for adjacent base seeds
    let mut z = base
        .wrapping_add(0x9e3779b97f4a7c15u64.wrapping_mul(index.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Assign distinct group keys to `folds` folds (deterministic shuffle, then
/// round-robin) and train one member per fold on the complement rows.
pub fn build_kfold(
    layers: &[LayerSpec],
    head: Head,
    data: &Batch,
    groups: &[u64],
    folds: usize,
    cfg: &TrainConfig,
    loss: &Loss,
) -> Result<EnsembleModel> {
    if folds < 2 {
        return Err(Error::InvalidParam(format!("folds must be >= 2, got {folds}")));
    }
    if groups.len() != data.len() {
        return Err(Error::Dimension("groups length must match data rows".into()));
    }
    let mut distinct: Vec<u64> = groups.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < folds {
        return Err(Error::Data(format!(
            "k-fold needs at least {} distinct groups, found {}",
            folds,
            distinct.len()
        )));
    }
    let mut shuffle_rng = RngState::new(cfg.seed).child(0x6b666f6c64); // "kfold"
    shuffle_rng.shuffle(&mut distinct);
    let fold_of: std::collections::HashMap<u64, usize> = distinct
        .iter()
        .enumerate()
        .map(|(i, &g)| (g, i % folds))
        .collect();

    let mut members = Vec::with_capacity(folds);
    let mut member_seeds = Vec::with_capacity(folds);
    for fold in 0..folds {
        let keep: Vec<usize> = (0..data.len())
            .filter(|&i| fold_of[&groups[i]] != fold)
            .collect();
        let seed = member_seed(cfg.seed, fold as u64);
        let mut rng = RngState::new(seed);
        let net = Network::new(layers.to_vec(), head, cfg.dropout_rate, &mut rng)?;
        let subset = data.select(&keep);
        let mut member_cfg = cfg.clone();
        member_cfg.seed = seed;
        let (trained, _) = train(net, &subset, &member_cfg, loss, &mut rng)?;
        members.push(trained);
        member_seeds.push(seed);
    }
    let mut spec = EnsembleSpec::new(EnsembleKind::Kfold, head);
    spec.size = folds;
    Ok(EnsembleModel { spec, members, member_seeds })
}

/// Deep ensemble: `size` members on the same data split, differing only by
/// initialization and shuffling seed.
pub fn build_deep(
    layers: &[LayerSpec],
    head: Head,
    data: &Batch,
    size: usize,
    cfg: &TrainConfig,
    loss: &Loss,
) -> Result<(EnsembleModel, Vec<Vec<f64>>)> {
    if size < 2 {
        return Err(Error::InvalidParam(format!("ensemble size must be >= 2, got {size}")));
    }
    let mut members = Vec::with_capacity(size);
    let mut member_seeds = Vec::with_capacity(size);
    let mut traces = Vec::with_capacity(size);
    for e in 0..size {
        let seed = member_seed(cfg.seed, e as u64);
        let mut rng = RngState::new(seed);
        let net = Network::new(layers.to_vec(), head, cfg.dropout_rate, &mut rng)?;
        let mut member_cfg = cfg.clone();
        member_cfg.seed = seed;
        let (trained, trace) = train(net, data, &member_cfg, loss, &mut rng)?;
        members.push(trained);
        member_seeds.push(seed);
        traces.push(trace);
    }
    let mut spec = EnsembleSpec::new(EnsembleKind::Deep, head);
    spec.size = size;
    Ok((EnsembleModel { spec, members, member_seeds }, traces))
}

/// `n_mc` stochastic forward passes with dropout masks active at inference.
/// Pass `rate_override` to vary the inference rate on a fixed trained model
/// (the dropout-rate calibration sweep).
pub fn mc_dropout_predict(
    net: &Network,
    inputs: &Array2<f64>,
    n_mc: usize,
    rate_override: Option<f64>,
    rng: &mut RngState,
) -> Result<Vec<Array2<f64>>> {
    if n_mc < 2 {
        return Err(Error::InvalidParam(format!("n_mc must be >= 2, got {n_mc}")));
    }
    let rate = rate_override.unwrap_or(net.dropout_rate);
    if rate <= 0.0 {
        return Err(Error::InvalidParam(
            "MC dropout needs dropout_rate > 0 (no stochasticity otherwise)".into(),
        ));
    }
    let mut member = net.clone();
    member.dropout_rate = rate;
    let mut outputs = Vec::with_capacity(n_mc);
    for _ in 0..n_mc {
        let (out, _) = member.forward(inputs, ForwardMode::McDropout, rng)?;
        outputs.push(out);
    }
    Ok(outputs)
}

/// Law of total variance over Gaussian members:
/// aleatoric = mean_e sigma2_e, epistemic = population variance of mu_e.
/// `mus` and `vars` are E x n.
pub fn decompose_gaussian_ensemble(
    mus: &Array2<f64>,
    vars: &Array2<f64>,
) -> Result<RegressionUncertainty> {
    if mus.dim() != vars.dim() {
        return Err(Error::Dimension("mus/vars shape mismatch".into()));
    }
    let (e, n) = mus.dim();
    if e < 2 {
        return Err(Error::InvalidParam(format!("need >= 2 members, got {e}")));
    }
    if vars.iter().any(|&v| v < 0.0) {
        return Err(Error::Data("negative member variance".into()));
    }
    let ef = e as f64;
    let mut prediction = Array2::zeros((n, 1));
    let mut aleatoric = Array2::zeros((n, 1));
    let mut epistemic = Array2::zeros((n, 1));
    for i in 0..n {
        let mean_mu = (0..e).map(|m| mus[[m, i]]).sum::<f64>() / ef;
        let mean_var = (0..e).map(|m| vars[[m, i]]).sum::<f64>() / ef;
        let var_mu = (0..e)
            .map(|m| {
                let d = mus[[m, i]] - mean_mu;
                d * d
            })
            .sum::<f64>()
            / ef;
        prediction[[i, 0]] = mean_mu;
        aleatoric[[i, 0]] = mean_var;
        epistemic[[i, 0]] = var_mu;
    }
    let total = &aleatoric + &epistemic;
    Ok(RegressionUncertainty { prediction, aleatoric, epistemic, total })
}

fn check_member_simplex(members: &[Array2<f64>]) -> Result<(usize, usize)> {
    let (n, k) = members[0].dim();
    for (e, m) in members.iter().enumerate() {
        if m.dim() != (n, k) {
            return Err(Error::Dimension(format!("member {e} shape mismatch")));
        }
        for (i, row) in m.rows().into_iter().enumerate() {
            let sum: f64 = row.sum();
            if (sum - 1.0).abs() > SIMPLEX_TOL || row.iter().any(|&p| p < -SIMPLEX_TOL) {
                return Err(Error::Data(format!(
                    "member {e} row {i} is not on the simplex (sum {sum})"
                )));
            }
        }
    }
    Ok((n, k))
}

/// Per-class decomposition over categorical members:
/// aleatoric = (1/E) sum_e p_e(1-p_e), epistemic = (1/E) sum_e (p_e - pbar)^2,
/// total = their sum = pbar(1-pbar).
pub fn decompose_categorical_ensemble(members: &[Array2<f64>]) -> Result<ClassUncertainty> {
    if members.len() < 2 {
        return Err(Error::InvalidParam(format!(
            "need >= 2 members, got {}",
            members.len()
        )));
    }
    let (n, k) = check_member_simplex(members)?;
    let ef = members.len() as f64;
    let mut aleatoric = Array2::zeros((n, k));
    let mut epistemic = Array2::zeros((n, k));
    for i in 0..n {
        for j in 0..k {
            let mean_p = members.iter().map(|m| m[[i, j]]).sum::<f64>() / ef;
            let mut ale = 0.0;
            let mut epi = 0.0;
            for m in members {
                let p = m[[i, j]];
                ale += p * (1.0 - p);
                let d = p - mean_p;
                epi += d * d;
            }
            aleatoric[[i, j]] = ale / ef;
            epistemic[[i, j]] = epi / ef;
        }
    }
    let total = &aleatoric + &epistemic;
    let summed_aleatoric = aleatoric.sum_axis(ndarray::Axis(1));
    let summed_epistemic = epistemic.sum_axis(ndarray::Axis(1));
    let summed_total = total.sum_axis(ndarray::Axis(1));
    Ok(ClassUncertainty {
        aleatoric,
        epistemic,
        total,
        summed_aleatoric,
        summed_epistemic,
        summed_total,
    })
}

/// Mean distribution over members, per sample.
pub fn ensemble_mean(members: &[Array2<f64>]) -> Result<Array2<f64>> {
    if members.is_empty() {
        return Err(Error::Data("no members".into()));
    }
    let (n, k) = members[0].dim();
    let mut mean = Array2::zeros((n, k));
    for m in members {
        if m.dim() != (n, k) {
            return Err(Error::Dimension("member shape mismatch".into()));
        }
        mean += m;
    }
    mean /= members.len() as f64;
    Ok(mean)
}

/// Shannon entropy of the member-mean distribution, per sample.
/// Always in [0, log K].
pub fn ensemble_entropy(members: &[Array2<f64>]) -> Result<Array1<f64>> {
    let (n, _) = check_member_simplex(members)?;
    let mean = ensemble_mean(members)?;
    let mut out = Array1::zeros(n);
    for i in 0..n {
        let mut h = 0.0;
        for &p in mean.row(i) {
            if p > 0.0 {
                h -= p * p.ln();
            }
        }
        out[i] = h.max(0.0);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Activation;
    use ndarray::array;

    fn blob_batch(n_per: usize, seed: u64) -> (Batch, Vec<u64>) {
        // two well-separated Gaussian blobs, group = sample index / 5
        let mut rng = RngState::new(seed);
        let n = 2 * n_per;
        let mut x = Array2::zeros((n, 2));
        let mut y = Array2::zeros((n, 2));
        for i in 0..n {
            let c = i % 2;
            let cx = if c == 0 { -2.0 } else { 2.0 };
            x[[i, 0]] = cx + 0.3 * rng.normal();
            x[[i, 1]] = cx + 0.3 * rng.normal();
            y[[i, c]] = 1.0;
        }
        let groups: Vec<u64> = (0..n as u64).map(|i| i / 5).collect();
        (Batch::new(x, y).unwrap(), groups)
    }

    fn small_layers() -> Vec<LayerSpec> {
        vec![
            LayerSpec { input_dim: 2, output_dim: 8, activation: Activation::Relu },
            LayerSpec { input_dim: 8, output_dim: 2, activation: Activation::Linear },
        ]
    }

    fn quick_cfg() -> TrainConfig {
        TrainConfig { epochs: 30, batch_size: 32, seed: 3, ..TrainConfig::default() }
    }

    #[test]
    fn spec_defaults() {
        assert_eq!(EnsembleSpec::new(EnsembleKind::Kfold, Head::DeterministicClassifier).size, 20);
        assert_eq!(EnsembleSpec::new(EnsembleKind::Deep, Head::DeterministicClassifier).size, 20);
        assert_eq!(
            EnsembleSpec::new(EnsembleKind::McDropout, Head::DeterministicClassifier).size,
            100
        );
        let mut s = EnsembleSpec::new(EnsembleKind::Deep, Head::DeterministicClassifier);
        s.size = 1;
        assert!(s.validate().is_err());
    }

    #[test]
    fn kfold_builds_and_errors() {
        let (data, groups) = blob_batch(20, 1);
        let layers = small_layers();
        let cfg = quick_cfg();
        let loss = Loss::CrossEntropy;
        let m = build_kfold(&layers, Head::DeterministicClassifier, &data, &groups, 2, &cfg, &loss)
            .unwrap();
        assert_eq!(m.members.len(), 2);

        // same seed twice -> identical member sets
        let m2 = build_kfold(&layers, Head::DeterministicClassifier, &data, &groups, 2, &cfg, &loss)
            .unwrap();
        for (a, b) in m.members.iter().zip(&m2.members) {
            for (wa, wb) in a.weights.iter().zip(&b.weights) {
                assert_eq!(wa, wb);
            }
        }

        // fewer distinct groups than folds
        let one_group = vec![0u64; data.len()];
        assert!(build_kfold(
            &layers,
            Head::DeterministicClassifier,
            &data,
            &one_group,
            2,
            &cfg,
            &loss
        )
        .is_err());
        assert!(build_kfold(&layers, Head::DeterministicClassifier, &data, &groups, 1, &cfg, &loss)
            .is_err());
    }

    #[test]
    fn deep_members_differ_and_converge() {
        let (data, _) = blob_batch(30, 2);
        let layers = small_layers();
        let cfg = quick_cfg();
        let cfg = TrainConfig { epochs: 200, ..cfg };
        let (m, traces) =
            build_deep(&layers, Head::DeterministicClassifier, &data, 3, &cfg, &Loss::CrossEntropy)
                .unwrap();
        assert_eq!(m.members.len(), 3);
        assert_ne!(m.members[0].weights[0], m.members[1].weights[0]);
        for trace in &traces {
            assert!(trace.last().unwrap() < &(0.5 * trace.first().unwrap()));
        }
        assert!(build_deep(
            &layers,
            Head::DeterministicClassifier,
            &data,
            1,
            &cfg,
            &Loss::CrossEntropy
        )
        .is_err());
    }

    #[test]
    fn mc_dropout_contract() {
        let mut rng = RngState::new(4);
        let net = Network::new(small_layers(), Head::DeterministicClassifier, 0.0, &mut rng)
            .unwrap();
        let x = Array2::zeros((3, 2));
        // dropout 0 -> error
        assert!(mc_dropout_predict(&net, &x, 10, None, &mut rng).is_err());
        // override enables it
        let outs = mc_dropout_predict(&net, &x, 10, Some(0.3), &mut rng).unwrap();
        assert_eq!(outs.len(), 10);
        // seeded reproducibility
        let a = mc_dropout_predict(&net, &x, 5, Some(0.3), &mut RngState::new(9)).unwrap();
        let b = mc_dropout_predict(&net, &x, 5, Some(0.3), &mut RngState::new(9)).unwrap();
        assert_eq!(a, b);
        // spread -> 0 as rate -> 0
        let mut rng2 = RngState::new(11);
        let mut net2 = Network::new(small_layers(), Head::DeterministicClassifier, 0.0, &mut rng2)
            .unwrap();
        net2.dropout_rate = 1e-4;
        let x2 = Array2::from_elem((4, 2), 0.7);
        let outs = mc_dropout_predict(&net2, &x2, 50, None, &mut rng2).unwrap();
        let mean = ensemble_mean(&outs).unwrap();
        let mut max_dev = 0.0f64;
        for o in &outs {
            for (a, b) in o.iter().zip(mean.iter()) {
                max_dev = max_dev.max((a - b).abs());
            }
        }
        assert!(max_dev < 0.05, "spread {max_dev} at rate 1e-4");
    }

    #[test]
    fn gaussian_decomposition_arithmetic() {
        // mus {-1, +1}, sigma2 = 1, E=2 -> aleatoric 1, epistemic 1, total 2
        let mus = array![[-1.0], [1.0]];
        let vars = array![[1.0], [1.0]];
        let d = decompose_gaussian_ensemble(&mus, &vars).unwrap();
        assert_eq!(d.aleatoric[[0, 0]], 1.0);
        assert_eq!(d.epistemic[[0, 0]], 1.0);
        assert_eq!(d.total[[0, 0]], 2.0);
        assert_eq!(d.prediction[[0, 0]], 0.0);

        // identical members -> epistemic 0
        let mus = array![[2.0], [2.0], [2.0]];
        let vars = array![[0.5], [0.5], [0.5]];
        let d = decompose_gaussian_ensemble(&mus, &vars).unwrap();
        assert_eq!(d.epistemic[[0, 0]], 0.0);

        assert!(decompose_gaussian_ensemble(&array![[1.0]], &array![[1.0]]).is_err());
    }

    #[test]
    fn gaussian_decomposition_matches_hierarchical_mc() {
        // draw a member uniformly, then y ~ N(mu_e, sigma2_e); the direct
        // variance of y must match aleatoric + epistemic
        let mut rng = RngState::new(21);
        let e = 5;
        let mus_v: Vec<f64> = (0..e).map(|_| rng.normal() * 2.0).collect();
        let vars_v: Vec<f64> = (0..e).map(|_| 0.2 + rng.uniform() * 2.0).collect();
        let mus = Array2::from_shape_fn((e, 1), |(m, _)| mus_v[m]);
        let vars = Array2::from_shape_fn((e, 1), |(m, _)| vars_v[m]);
        let d = decompose_gaussian_ensemble(&mus, &vars).unwrap();

        let n = 1_000_000usize;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        let mut sum4 = 0.0;
        for _ in 0..n {
            let m = rng.gen_usize_below(e);
            let y = mus_v[m] + vars_v[m].sqrt() * rng.normal();
            sum += y;
            sumsq += y * y;
            sum4 += y * y * y * y;
        }
        let mean = sum / n as f64;
        let var = sumsq / n as f64 - mean * mean;
        // SE of a sample variance: sqrt((m4 - var^2)/n)
        let m4 = sum4 / n as f64;
        let se = ((m4 - var * var) / n as f64).sqrt();
        let expect = d.total[[0, 0]];
        assert!(
            (var - expect).abs() < 4.0 * se,
            "mc {var} vs lotv {expect}, se {se}"
        );
    }

    #[test]
    fn categorical_decomposition_cases() {
        // identical members -> epistemic 0, aleatoric p(1-p)
        let p = array![[0.3, 0.7]];
        let d = decompose_categorical_ensemble(&[p.clone(), p.clone()]).unwrap();
        assert!(d.epistemic.iter().all(|&x| x == 0.0));
        assert!((d.aleatoric[[0, 0]] - 0.21).abs() < 1e-15);

        // (1,0) and (0,1) -> aleatoric 0, epistemic 0.25 per class
        let a = array![[1.0, 0.0]];
        let b = array![[0.0, 1.0]];
        let d = decompose_categorical_ensemble(&[a, b]).unwrap();
        assert_eq!(d.aleatoric[[0, 0]], 0.0);
        assert_eq!(d.epistemic[[0, 0]], 0.25);
        assert_eq!(d.epistemic[[0, 1]], 0.25);

        assert!(decompose_categorical_ensemble(&[array![[0.3, 0.7]]]).is_err());
        assert!(
            decompose_categorical_ensemble(&[array![[0.3, 0.6]], array![[0.5, 0.5]]]).is_err()
        );
    }

    #[test]
    fn categorical_total_is_pooled_bernoulli_variance() {
        // exhaustive 2-member oracle: pick member with prob 1/2, then draw the
        // class indicator; Var of the indicator = pbar(1-pbar) = total
        let a = array![[0.9, 0.1]];
        let b = array![[0.2, 0.8]];
        let d = decompose_categorical_ensemble(&[a.clone(), b.clone()]).unwrap();
        for j in 0..2 {
            let pbar = 0.5 * (a[[0, j]] + b[[0, j]]);
            let bernoulli_var = pbar * (1.0 - pbar);
            assert!((d.total[[0, j]] - bernoulli_var).abs() < 1e-15);
            assert!(
                (d.aleatoric[[0, j]] + d.epistemic[[0, j]] - d.total[[0, j]]).abs() < 1e-12
            );
        }
    }

    #[test]
    fn decomposition_permutation_invariance() {
        let mut rng = RngState::new(31);
        let members: Vec<Array2<f64>> = (0..4)
            .map(|_| {
                Array2::from_shape_fn((3, 3), |_| rng.uniform() + 0.1).map_axis_mut_helper()
            })
            .collect();
        let d1 = decompose_categorical_ensemble(&members).unwrap();
        let mut rev = members.clone();
        rev.reverse();
        let d2 = decompose_categorical_ensemble(&rev).unwrap();
        for (a, b) in d1.total.iter().zip(d2.total.iter()) {
            assert!((a - b).abs() < 1e-15);
        }
        for (a, b) in d1.epistemic.iter().zip(d2.epistemic.iter()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    // normalize rows to the simplex for test fixtures
    trait RowNormalize {
        fn map_axis_mut_helper(self) -> Array2<f64>;
    }
    impl RowNormalize for Array2<f64> {
        fn map_axis_mut_helper(mut self) -> Array2<f64> {
            for mut row in self.rows_mut() {
                let s = row.sum();
                row.mapv_inplace(|v| v / s);
            }
            self
        }
    }

    #[test]
    fn entropy_bounds_and_fixtures() {
        let uniform = Array2::from_elem((1, 4), 0.25);
        let h = ensemble_entropy(&[uniform.clone(), uniform]).unwrap();
        assert!((h[0] - 4.0f64.ln()).abs() < 1e-15);

        let onehot = array![[1.0, 0.0, 0.0, 0.0]];
        let h = ensemble_entropy(&[onehot.clone(), onehot]).unwrap();
        assert_eq!(h[0], 0.0);

        let half = array![[0.5, 0.5]];
        let h = ensemble_entropy(&[half.clone(), half]).unwrap();
        assert!((h[0] - 2.0f64.ln()).abs() < 1e-15);

        // random fixtures stay within [0, log K]
        let mut rng = RngState::new(41);
        let members: Vec<Array2<f64>> = (0..3)
            .map(|_| {
                Array2::from_shape_fn((10, 5), |_| rng.uniform() + 0.01).map_axis_mut_helper()
            })
            .collect();
        let h = ensemble_entropy(&members).unwrap();
        for &v in &h {
            assert!((0.0..=5.0f64.ln() + 1e-12).contains(&v));
        }
    }

    #[test]
    fn save_load_roundtrip() {
        let (data, _) = blob_batch(10, 6);
        let cfg = TrainConfig { epochs: 3, batch_size: 16, seed: 7, ..TrainConfig::default() };
        let (m, _) = build_deep(
            &small_layers(),
            Head::DeterministicClassifier,
            &data,
            2,
            &cfg,
            &Loss::CrossEntropy,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        m.save(dir.path()).unwrap();
        let loaded = EnsembleModel::load(dir.path()).unwrap();
        assert_eq!(loaded.members.len(), 2);
        assert_eq!(loaded.member_seeds, m.member_seeds);
        for (a, b) in m.members.iter().zip(&loaded.members) {
            for (wa, wb) in a.weights.iter().zip(&b.weights) {
                assert_eq!(wa, wb);
            }
        }
    }
}
