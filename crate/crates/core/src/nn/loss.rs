//! Loss descriptors pairing each head with its training objective, plus the
//! analytic gradient of each loss with respect to the raw network outputs.

use ndarray::Array2;

use super::Head;
use crate::error::{Error, Result};
use crate::{evcls, evreg};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Loss {
    /// Mean squared error (deterministic regressor).
    SquaredError,
    /// Mean absolute error (deterministic regressor).
    AbsoluteError,
    /// Softmax cross-entropy (deterministic classifier).
    CrossEntropy,
    /// Bayes-risk + annealed KL (evidential classifier).
    EvidentialClass { annealing_epochs: usize },
    /// Gaussian negative log likelihood (mu, sigma^2 head).
    GaussianNll,
    /// NIG NLL + lambda * evidence regularizer (evidential regressor).
    EvidentialRegression { lambda: f64 },
}

impl Loss {
    pub fn compatible_with(&self, head: Head) -> bool {
        matches!(
            (self, head),
            (Loss::SquaredError, Head::DeterministicRegressor)
                | (Loss::AbsoluteError, Head::DeterministicRegressor)
                | (Loss::CrossEntropy, Head::DeterministicClassifier)
                | (Loss::EvidentialClass { .. }, Head::EvidentialClassifier)
                | (Loss::GaussianNll, Head::GaussianRegressor)
                | (Loss::EvidentialRegression { .. }, Head::EvidentialRegressor)
        )
    }

    /// Default loss for a head.
    pub fn for_head(head: Head, annealing_epochs: usize, lambda: f64) -> Loss {
        match head {
            Head::DeterministicClassifier => Loss::CrossEntropy,
            Head::EvidentialClassifier => Loss::EvidentialClass { annealing_epochs },
            Head::GaussianRegressor => Loss::GaussianNll,
            Head::EvidentialRegressor => Loss::EvidentialRegression { lambda },
            Head::DeterministicRegressor => Loss::SquaredError,
        }
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Weighted mean loss and gradient with respect to the raw outputs.
/// Weights are normalized by their sum; `epoch` drives KL annealing.
pub fn loss_and_grad(
    loss: &Loss,
    raw: &Array2<f64>,
    targets: &Array2<f64>,
    sample_weights: &[f64],
    epoch: usize,
) -> Result<(f64, Array2<f64>)> {
    let n = raw.nrows();
    if sample_weights.len() != n {
        return Err(Error::Dimension("sample_weights length mismatch".into()));
    }
    let wsum: f64 = sample_weights.iter().sum();
    if wsum <= 0.0 {
        return Err(Error::InvalidParam("sample weights must sum to > 0".into()));
    }
    match loss {
        Loss::SquaredError => {
            if targets.dim() != raw.dim() {
                return Err(Error::Dimension("targets/raw shape mismatch".into()));
            }
            let mut total = 0.0;
            let mut grad = Array2::zeros(raw.dim());
            for i in 0..n {
                let w = sample_weights[i] / wsum;
                for j in 0..raw.ncols() {
                    let d = raw[[i, j]] - targets[[i, j]];
                    total += w * d * d;
                    grad[[i, j]] = 2.0 * w * d;
                }
            }
            Ok((total, grad))
        }
        Loss::AbsoluteError => {
            if targets.dim() != raw.dim() {
                return Err(Error::Dimension("targets/raw shape mismatch".into()));
            }
            let mut total = 0.0;
            let mut grad = Array2::zeros(raw.dim());
            for i in 0..n {
                let w = sample_weights[i] / wsum;
                for j in 0..raw.ncols() {
                    let d = raw[[i, j]] - targets[[i, j]];
                    total += w * d.abs();
                    grad[[i, j]] = w * d.signum();
                }
            }
            Ok((total, grad))
        }
        Loss::CrossEntropy => {
            if targets.dim() != raw.dim() {
                return Err(Error::Dimension("targets/raw shape mismatch".into()));
            }
            let mut total = 0.0;
            let mut grad = Array2::zeros(raw.dim());
            for i in 0..n {
                let w = sample_weights[i] / wsum;
                let row = raw.row(i);
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = row.iter().map(|&v| (v - max).exp()).collect();
                let z: f64 = exps.iter().sum();
                for j in 0..raw.ncols() {
                    let p = exps[j] / z;
                    let y = targets[[i, j]];
                    if y > 0.0 {
                        total -= w * y * p.max(1e-300).ln();
                    }
                    grad[[i, j]] = w * (p - y);
                }
            }
            Ok((total, grad))
        }
        Loss::EvidentialClass { annealing_epochs } => {
            let nu_t = evcls::annealing_coefficient(epoch, *annealing_epochs);
            evcls::loss_grad_raw(raw, targets, nu_t, sample_weights)
        }
        Loss::GaussianNll => {
            if raw.ncols() % 2 != 0 || targets.ncols() * 2 != raw.ncols() {
                return Err(Error::Dimension(
                    "Gaussian head needs 2 outputs per target".into(),
                ));
            }
            let t_count = targets.ncols();
            let eps = evreg::HEAD_EPS;
            let mut total = 0.0;
            let mut grad = Array2::zeros(raw.dim());
            for i in 0..n {
                let w = sample_weights[i] / (wsum * t_count as f64);
                for t in 0..t_count {
                    let mu = raw[[i, 2 * t]];
                    let s_raw = raw[[i, 2 * t + 1]];
                    let var = softplus(s_raw) + eps;
                    let resid = targets[[i, t]] - mu;
                    total += w
                        * (0.5 * (2.0 * std::f64::consts::PI * var).ln()
                            + resid * resid / (2.0 * var));
                    grad[[i, 2 * t]] = w * (mu - targets[[i, t]]) / var;
                    let d_var = 0.5 / var - resid * resid / (2.0 * var * var);
                    grad[[i, 2 * t + 1]] = w * d_var * sigmoid(s_raw);
                }
            }
            Ok((total, grad))
        }
        Loss::EvidentialRegression { lambda } => {
            evreg::loss_grad_raw(raw, targets, *lambda, sample_weights)
        }
    }
}

/// Softmax probabilities for a deterministic classifier's raw outputs.
pub fn softmax(raw: &Array2<f64>) -> Array2<f64> {
    let mut out = raw.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let z: f64 = row.sum();
        row.mapv_inplace(|v| v / z);
    }
    out
}

/// Split a Gaussian head's raw outputs into (mu, sigma^2) n x T matrices.
pub fn gaussian_head(raw: &Array2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
    if raw.ncols() % 2 != 0 {
        return Err(Error::Dimension(
            "Gaussian head needs 2 outputs per target".into(),
        ));
    }
    let t_count = raw.ncols() / 2;
    let n = raw.nrows();
    let mut mu = Array2::zeros((n, t_count));
    let mut var = Array2::zeros((n, t_count));
    for i in 0..n {
        for t in 0..t_count {
            mu[[i, t]] = raw[[i, 2 * t]];
            var[[i, t]] = softplus(raw[[i, 2 * t + 1]]) + evreg::HEAD_EPS;
        }
    }
    Ok((mu, var))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngState;
    use ndarray::array;

    #[test]
    fn compatibility_matrix() {
        assert!(Loss::CrossEntropy.compatible_with(Head::DeterministicClassifier));
        assert!(!Loss::CrossEntropy.compatible_with(Head::EvidentialClassifier));
        assert!(Loss::EvidentialRegression { lambda: 0.1 }.compatible_with(Head::EvidentialRegressor));
        assert!(!Loss::GaussianNll.compatible_with(Head::DeterministicRegressor));
    }

    #[test]
    fn squared_loss_value() {
        let raw = array![[1.0], [2.0]];
        let y = array![[0.0], [0.0]];
        let (l, g) = loss_and_grad(&Loss::SquaredError, &raw, &y, &[1.0, 1.0], 0).unwrap();
        assert!((l - 2.5).abs() < 1e-14);
        assert!((g[[0, 0]] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn cross_entropy_grad_is_softmax_minus_target() {
        let raw = array![[0.3, -0.2, 1.1]];
        let y = array![[0.0, 1.0, 0.0]];
        let (_, g) = loss_and_grad(&Loss::CrossEntropy, &raw, &y, &[1.0], 0).unwrap();
        let p = softmax(&raw);
        for j in 0..3 {
            assert!((g[[0, j]] - (p[[0, j]] - y[[0, j]])).abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_class_weights_equal_unweighted() {
        let mut rng = RngState::new(4);
        let raw = Array2::from_shape_fn((6, 3), |_| rng.uniform_range(-2.0, 2.0));
        let mut y = Array2::zeros((6, 3));
        for i in 0..6 {
            y[[i, i % 3]] = 1.0;
        }
        let (a, ga) = loss_and_grad(&Loss::CrossEntropy, &raw, &y, &[1.0; 6], 0).unwrap();
        let (b, gb) = loss_and_grad(&Loss::CrossEntropy, &raw, &y, &[2.5; 6], 0).unwrap();
        assert!((a - b).abs() < 1e-13);
        for (x, z) in ga.iter().zip(gb.iter()) {
            assert!((x - z).abs() < 1e-13);
        }
    }

    #[test]
    fn gaussian_nll_matches_formula() {
        let raw = array![[1.0, 0.0]];
        let y = array![[2.0]];
        let (l, _) = loss_and_grad(&Loss::GaussianNll, &raw, &y, &[1.0], 0).unwrap();
        let var = (2.0f64).ln() + evreg::HEAD_EPS;
        let expect = 0.5 * (2.0 * std::f64::consts::PI * var).ln() + 1.0 / (2.0 * var);
        assert!((l - expect).abs() < 1e-12);
    }
}
