//! Probability distributions used by the evidential heads and their
//! Monte-Carlo oracles: Dirichlet, Normal-Inverse-Gamma, and the
//! location-scale Student-t predictive.

use crate::error::{Error, Result};
use crate::rng::RngState;
use crate::special::{log_gamma_unchecked, reg_inc_beta, std_normal_cdf};

pub const SIMPLEX_TOL: f64 = 1e-9;

/// Dirichlet concentration parameters (pseudocounts).
#[derive(Debug, Clone, PartialEq)]
pub struct DirichletParams {
    alpha: Vec<f64>,
}

impl DirichletParams {
    pub fn new(alpha: Vec<f64>) -> Result<Self> {
        if alpha.is_empty() {
            return Err(Error::InvalidParam("alpha must be non-empty".into()));
        }
        for (k, &a) in alpha.iter().enumerate() {
            if !a.is_finite() || a <= 0.0 {
                return Err(Error::InvalidParam(format!(
                    "alpha[{k}] must be positive and finite, got {a}"
                )));
            }
        }
        Ok(DirichletParams { alpha })
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn dim(&self) -> usize {
        self.alpha.len()
    }

    /// Dirichlet strength S = sum of concentrations.
    pub fn strength(&self) -> f64 {
        self.alpha.iter().sum()
    }

    /// Posterior mean alpha_k / S.
    pub fn mean(&self) -> Vec<f64> {
        let s = self.strength();
        self.alpha.iter().map(|a| a / s).collect()
    }

    /// Analytic variance of component k: p(1-p)/(S+1) with p = alpha_k/S.
    pub fn component_variance(&self, k: usize) -> f64 {
        let s = self.strength();
        let p = self.alpha[k] / s;
        p * (1.0 - p) / (s + 1.0)
    }
}

/// Normal-Inverse-Gamma parameters (gamma, nu, alpha, beta).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NIGParams {
    pub gamma: f64,
    pub nu: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl NIGParams {
    pub fn new(gamma: f64, nu: f64, alpha: f64, beta: f64) -> Result<Self> {
        if !gamma.is_finite() {
            return Err(Error::InvalidParam(format!("gamma must be finite: {gamma}")));
        }
        if !(nu > 0.0 && nu.is_finite()) {
            return Err(Error::InvalidParam(format!("nu must be > 0: {nu}")));
        }
        if !(alpha > 1.0 && alpha.is_finite()) {
            return Err(Error::InvalidParam(format!("alpha must be > 1: {alpha}")));
        }
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::InvalidParam(format!("beta must be > 0: {beta}")));
        }
        Ok(NIGParams { gamma, nu, alpha, beta })
    }

    /// Marginal predictive: Student-t with location gamma,
    /// scale^2 = beta(1+nu)/(nu*alpha), dof = 2*alpha.
    pub fn predictive(&self) -> StudentTParams {
        let scale2 = self.beta * (1.0 + self.nu) / (self.nu * self.alpha);
        StudentTParams {
            location: self.gamma,
            scale: scale2.sqrt(),
            dof: 2.0 * self.alpha,
        }
    }
}

/// Location-scale Student-t.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StudentTParams {
    pub location: f64,
    pub scale: f64,
    pub dof: f64,
}

impl StudentTParams {
    pub fn new(location: f64, scale: f64, dof: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidParam(format!("scale must be > 0: {scale}")));
        }
        if !(dof > 0.0 && dof.is_finite()) {
            return Err(Error::InvalidParam(format!("dof must be > 0: {dof}")));
        }
        Ok(StudentTParams { location, scale, dof })
    }
}

/// Validate a vector against the unit simplex within `SIMPLEX_TOL`, returning
/// a renormalized copy.
fn check_simplex(p: &[f64]) -> Result<Vec<f64>> {
    let mut sum = 0.0;
    for &v in p {
        if !v.is_finite() || v < -SIMPLEX_TOL || v > 1.0 + SIMPLEX_TOL {
            return Err(Error::Domain(format!("simplex component out of range: {v}")));
        }
        sum += v;
    }
    if (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::Domain(format!("simplex sum deviates from 1: {sum}")));
    }
    Ok(p.iter().map(|&v| (v / sum).max(0.0)).collect())
}

/// Log of the K-dimensional multinomial beta function.
pub fn log_multinomial_beta(alpha: &[f64]) -> f64 {
    let s: f64 = alpha.iter().sum();
    alpha.iter().map(|&a| log_gamma_unchecked(a)).sum::<f64>() - log_gamma_unchecked(s)
}

/// Log density of the Dirichlet distribution at a simplex point.
///
/// At a support boundary (some p_k = 0 with alpha_k != 1) returns -inf.
pub fn dirichlet_log_pdf(p: &[f64], params: &DirichletParams) -> Result<f64> {
    if p.len() != params.dim() {
        return Err(Error::Dimension(format!(
            "p has {} components, alpha has {}",
            p.len(),
            params.dim()
        )));
    }
    let p = check_simplex(p)?;
    let mut acc = -log_multinomial_beta(params.alpha());
    for (&pk, &ak) in p.iter().zip(params.alpha()) {
        if pk <= 0.0 {
            if (ak - 1.0).abs() > 0.0 {
                return Ok(f64::NEG_INFINITY);
            }
            // alpha_k = 1 contributes nothing at the boundary
        } else {
            acc += (ak - 1.0) * pk.ln();
        }
    }
    Ok(acc)
}

/// i.i.d. Dirichlet draws via normalized Gamma variates.
pub fn dirichlet_sample(params: &DirichletParams, n: usize, rng: &mut RngState) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let mut g: Vec<f64> = params.alpha().iter().map(|&a| rng.gamma(a)).collect();
        let s: f64 = g.iter().sum();
        for v in &mut g {
            *v /= s;
        }
        out.push(g);
    }
    out
}

/// CDF of the location-scale Student-t via the regularized incomplete beta.
pub fn student_t_cdf(x: f64, params: &StudentTParams) -> f64 {
    let z = (x - params.location) / params.scale;
    if z == 0.0 {
        return 0.5;
    }
    if z.is_infinite() {
        return if z > 0.0 { 1.0 } else { 0.0 };
    }
    let d = params.dof;
    let t = d / (d + z * z);
    let half = 0.5 * reg_inc_beta(0.5 * d, 0.5, t).expect("valid params");
    if z > 0.0 {
        1.0 - half
    } else {
        half
    }
}

/// Log density of the location-scale Student-t.
pub fn student_t_log_pdf(x: f64, params: &StudentTParams) -> f64 {
    let d = params.dof;
    let z = (x - params.location) / params.scale;
    log_gamma_unchecked(0.5 * (d + 1.0))
        - log_gamma_unchecked(0.5 * d)
        - 0.5 * (d * std::f64::consts::PI).ln()
        - params.scale.ln()
        - 0.5 * (d + 1.0) * (1.0 + z * z / d).ln()
}

/// Quantile of the Student-t by bisection on the CDF.
pub fn student_t_quantile(prob: f64, params: &StudentTParams) -> Result<f64> {
    if !(0.0..=1.0).contains(&prob) {
        return Err(Error::Domain(format!("probability out of [0,1]: {prob}")));
    }
    let mut lo = params.location - params.scale;
    let mut hi = params.location + params.scale;
    while student_t_cdf(lo, params) > prob {
        lo = params.location + 2.0 * (lo - params.location);
    }
    while student_t_cdf(hi, params) < prob {
        hi = params.location + 2.0 * (hi - params.location);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if student_t_cdf(mid, params) < prob {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-13 * (1.0 + hi.abs()) {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Draw (mu, sigma2) pairs from the NIG hierarchy:
/// sigma2 ~ InvGamma(alpha, beta), mu ~ Normal(gamma, sigma2/nu).
pub fn nig_sample(params: &NIGParams, n: usize, rng: &mut RngState) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let sigma2 = params.beta / rng.gamma(params.alpha);
        let mu = params.gamma + rng.normal() * (sigma2 / params.nu).sqrt();
        out.push((mu, sigma2));
    }
    out
}

/// Gaussian CDF with given mean and variance.
pub fn gaussian_cdf(x: f64, mean: f64, variance: f64) -> Result<f64> {
    if !(variance > 0.0 && variance.is_finite()) {
        return Err(Error::Domain(format!("variance must be > 0: {variance}")));
    }
    Ok(std_normal_cdf((x - mean) / variance.sqrt()))
}
