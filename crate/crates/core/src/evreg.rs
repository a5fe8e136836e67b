//! Normal-Inverse-Gamma evidential regression head: parameter constraints,
//! NLL + evidence-regularizer loss, Student-t predictive CDF, and the
//! closed-form uncertainty decomposition.

use ndarray::Array2;

use crate::dist::{student_t_cdf, NIGParams, StudentTParams};
use crate::error::{Error, Result};
use crate::special::{digamma_unchecked, log_gamma_unchecked};

/// Softplus floor keeping nu, beta > 0 and alpha > 1 strictly.
pub const HEAD_EPS: f64 = 1e-6;

/// NIG parameters for n samples and T targets, stored as n x T matrices.
#[derive(Debug, Clone)]
pub struct NIGOutput {
    pub gamma: Array2<f64>,
    pub nu: Array2<f64>,
    pub alpha: Array2<f64>,
    pub beta: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct RegressionUncertainty {
    pub prediction: Array2<f64>,
    pub aleatoric: Array2<f64>,
    pub epistemic: Array2<f64>,
    pub total: Array2<f64>,
}

impl NIGOutput {
    pub fn n_samples(&self) -> usize {
        self.gamma.nrows()
    }

    pub fn n_targets(&self) -> usize {
        self.gamma.ncols()
    }

    pub fn params(&self, i: usize, t: usize) -> NIGParams {
        NIGParams {
            gamma: self.gamma[[i, t]],
            nu: self.nu[[i, t]],
            alpha: self.alpha[[i, t]],
            beta: self.beta[[i, t]],
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

/// Map raw n x 4T outputs to constrained NIG parameters. Column layout per
/// task t is (gamma, nu, alpha, beta) at 4t..4t+4:
/// gamma = raw; nu = softplus + eps; alpha = 1 + softplus + eps;
/// beta = softplus + eps.
pub fn nig_head(raw: &Array2<f64>) -> Result<NIGOutput> {
    if raw.ncols() % 4 != 0 {
        return Err(Error::Dimension(format!(
            "NIG head needs 4 outputs per target, got width {}",
            raw.ncols()
        )));
    }
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite raw output in NIG head".into()));
    }
    let n = raw.nrows();
    let t = raw.ncols() / 4;
    let mut gamma = Array2::zeros((n, t));
    let mut nu = Array2::zeros((n, t));
    let mut alpha = Array2::zeros((n, t));
    let mut beta = Array2::zeros((n, t));
    for i in 0..n {
        for j in 0..t {
            gamma[[i, j]] = raw[[i, 4 * j]];
            nu[[i, j]] = softplus(raw[[i, 4 * j + 1]]) + HEAD_EPS;
            alpha[[i, j]] = 1.0 + softplus(raw[[i, 4 * j + 2]]) + HEAD_EPS;
            beta[[i, j]] = softplus(raw[[i, 4 * j + 3]]) + HEAD_EPS;
        }
    }
    Ok(NIGOutput { gamma, nu, alpha, beta })
}

/// Per-sample, per-target NIG negative log likelihood with
/// Omega = 2 beta (1 + nu).
pub fn nig_nll(out: &NIGOutput, targets: &Array2<f64>) -> Result<Array2<f64>> {
    if targets.dim() != out.gamma.dim() {
        return Err(Error::Dimension(format!(
            "targets {:?} vs NIG {:?}",
            targets.dim(),
            out.gamma.dim()
        )));
    }
    let (n, t) = out.gamma.dim();
    let mut nll = Array2::zeros((n, t));
    for i in 0..n {
        for j in 0..t {
            let (g, v, a, b) = (
                out.gamma[[i, j]],
                out.nu[[i, j]],
                out.alpha[[i, j]],
                out.beta[[i, j]],
            );
            let y = targets[[i, j]];
            let omega = 2.0 * b * (1.0 + v);
            let resid2 = (y - g) * (y - g);
            nll[[i, j]] = 0.5 * (std::f64::consts::PI / v).ln() - a * omega.ln()
                + (a + 0.5) * (resid2 * v + omega).ln()
                + log_gamma_unchecked(a)
                - log_gamma_unchecked(a + 0.5);
        }
    }
    Ok(nll)
}

/// Evidence regularizer |y - gamma| (2 nu + alpha).
pub fn evidence_regularizer(out: &NIGOutput, targets: &Array2<f64>) -> Result<Array2<f64>> {
    if targets.dim() != out.gamma.dim() {
        return Err(Error::Dimension("targets/NIG shape mismatch".into()));
    }
    let (n, t) = out.gamma.dim();
    let mut reg = Array2::zeros((n, t));
    for i in 0..n {
        for j in 0..t {
            reg[[i, j]] = (targets[[i, j]] - out.gamma[[i, j]]).abs()
                * (2.0 * out.nu[[i, j]] + out.alpha[[i, j]]);
        }
    }
    Ok(reg)
}

/// Mean over samples and targets of nll + lambda * regularizer.
pub fn total_loss(out: &NIGOutput, targets: &Array2<f64>, lambda: f64) -> Result<f64> {
    if lambda < 0.0 {
        return Err(Error::InvalidParam(format!("lambda must be >= 0: {lambda}")));
    }
    let nll = nig_nll(out, targets)?;
    let reg = evidence_regularizer(out, targets)?;
    let count = (out.n_samples() * out.n_targets()) as f64;
    Ok((nll.sum() + lambda * reg.sum()) / count)
}

/// Decomposition: prediction = gamma, aleatoric = beta/(alpha-1),
/// epistemic = beta/(nu (alpha-1)).
pub fn decompose(out: &NIGOutput) -> Result<RegressionUncertainty> {
    let (n, t) = out.gamma.dim();
    let mut aleatoric = Array2::zeros((n, t));
    let mut epistemic = Array2::zeros((n, t));
    for i in 0..n {
        for j in 0..t {
            let a = out.alpha[[i, j]];
            if a <= 1.0 {
                return Err(Error::InvalidParam(format!("alpha <= 1 at ({i},{j}): {a}")));
            }
            let ale = out.beta[[i, j]] / (a - 1.0);
            aleatoric[[i, j]] = ale;
            epistemic[[i, j]] = ale / out.nu[[i, j]];
        }
    }
    let total = &aleatoric + &epistemic;
    Ok(RegressionUncertainty {
        prediction: out.gamma.clone(),
        aleatoric,
        epistemic,
        total,
    })
}

/// Student-t predictive marginal for one (sample, target) cell.
pub fn predictive_t(out: &NIGOutput, i: usize, t: usize) -> StudentTParams {
    out.params(i, t).predictive()
}

/// PIT values: the predictive Student-t CDF evaluated at the observations.
pub fn predictive_cdf(out: &NIGOutput, y: &Array2<f64>) -> Result<Array2<f64>> {
    if y.dim() != out.gamma.dim() {
        return Err(Error::Dimension("targets/NIG shape mismatch".into()));
    }
    let (n, t) = out.gamma.dim();
    let mut pit = Array2::zeros((n, t));
    for i in 0..n {
        for j in 0..t {
            pit[[i, j]] = student_t_cdf(y[[i, j]], &predictive_t(out, i, j));
        }
    }
    Ok(pit)
}

/// Weighted mean loss and gradient with respect to the raw n x 4T outputs.
pub fn loss_grad_raw(
    raw: &Array2<f64>,
    targets: &Array2<f64>,
    lambda: f64,
    sample_weights: &[f64],
) -> Result<(f64, Array2<f64>)> {
    let out = nig_head(raw)?;
    let (n, t) = out.gamma.dim();
    if sample_weights.len() != n {
        return Err(Error::Dimension("sample_weights length mismatch".into()));
    }
    let wsum: f64 = sample_weights.iter().sum();
    let mut loss = 0.0;
    let mut grad = Array2::zeros(raw.dim());
    for i in 0..n {
        let w = sample_weights[i] / (wsum * t as f64);
        for j in 0..t {
            let (g, v, a, b) = (
                out.gamma[[i, j]],
                out.nu[[i, j]],
                out.alpha[[i, j]],
                out.beta[[i, j]],
            );
            let y = targets[[i, j]];
            let omega = 2.0 * b * (1.0 + v);
            let resid = y - g;
            let arg = resid * resid * v + omega;

            let nll = 0.5 * (std::f64::consts::PI / v).ln() - a * omega.ln()
                + (a + 0.5) * arg.ln()
                + log_gamma_unchecked(a)
                - log_gamma_unchecked(a + 0.5);
            let reg = resid.abs() * (2.0 * v + a);
            loss += w * (nll + lambda * reg);

            // NLL partials
            let d_gamma = (a + 0.5) * (-2.0 * resid * v) / arg;
            let d_nu = -0.5 / v - a * 2.0 * b / omega + (a + 0.5) * (resid * resid + 2.0 * b) / arg;
            let d_alpha =
                -omega.ln() + arg.ln() + digamma_unchecked(a) - digamma_unchecked(a + 0.5);
            let d_beta = -a / b + (a + 0.5) * 2.0 * (1.0 + v) / arg;

            // regularizer partials
            let sgn = if resid > 0.0 {
                1.0
            } else if resid < 0.0 {
                -1.0
            } else {
                0.0
            };
            let r_gamma = -sgn * (2.0 * v + a);
            let r_nu = 2.0 * resid.abs();
            let r_alpha = resid.abs();

            grad[[i, 4 * j]] = w * (d_gamma + lambda * r_gamma);
            grad[[i, 4 * j + 1]] =
                w * (d_nu + lambda * r_nu) * sigmoid(raw[[i, 4 * j + 1]]);
            grad[[i, 4 * j + 2]] =
                w * (d_alpha + lambda * r_alpha) * sigmoid(raw[[i, 4 * j + 2]]);
            grad[[i, 4 * j + 3]] = w * d_beta * sigmoid(raw[[i, 4 * j + 3]]);
        }
    }
    Ok((loss, grad))
}
