//! Forecast verification suite: Brier score/skill, attributes-diagram
//! reliability bins, RMSE, PIT histogram + PITD skill, discard test with
//! discard-improvement score, spread-skill bins, confusion matrix, macro-F1.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng::RngState;
use ndarray::Array2;

const PROB_TOL: f64 = 1e-6;

fn check_prob_rows(probs: &Array2<f64>) -> Result<()> {
    for (i, row) in probs.rows().into_iter().enumerate() {
        let sum: f64 = row.sum();
        if (sum - 1.0).abs() > PROB_TOL || row.iter().any(|&p| p < -PROB_TOL) {
            return Err(Error::Data(format!(
                "probability row {i} is not on the simplex (sum {sum})"
            )));
        }
    }
    Ok(())
}

/// Multi-class Brier score: (1/(nK)) sum (y - p)^2.
pub fn brier_score(probs: &Array2<f64>, targets: &Array2<f64>) -> Result<f64> {
    if probs.dim() != targets.dim() {
        return Err(Error::Dimension("probs/targets shape mismatch".into()));
    }
    if probs.nrows() == 0 {
        return Err(Error::Data("empty input".into()));
    }
    check_prob_rows(probs)?;
    let (n, k) = probs.dim();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..k {
            let d = targets[[i, j]] - probs[[i, j]];
            acc += d * d;
        }
    }
    Ok(acc / (n * k) as f64)
}

/// BSS = 1 - BS_forecast / BS_climatology with a constant base-rate forecast.
pub fn brier_skill_score(
    probs: &Array2<f64>,
    targets: &Array2<f64>,
    climatology: &[f64],
) -> Result<f64> {
    if climatology.len() != probs.ncols() {
        return Err(Error::Dimension("climatology length mismatch".into()));
    }
    let sum: f64 = climatology.iter().sum();
    if (sum - 1.0).abs() > PROB_TOL {
        return Err(Error::Data(format!("climatology not on simplex (sum {sum})")));
    }
    let bs = brier_score(probs, targets)?;
    let n = probs.nrows();
    let clim = Array2::from_shape_fn((n, climatology.len()), |(_, j)| climatology[j]);
    let bs_clim = brier_score(&clim, targets)?;
    if bs_clim == 0.0 {
        return Err(Error::Numerical("climatology Brier score is zero".into()));
    }
    Ok(1.0 - bs / bs_clim)
}

pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::Dimension("length mismatch".into()));
    }
    if pred.is_empty() {
        return Err(Error::Data("empty input".into()));
    }
    let acc: f64 = pred
        .iter()
        .zip(truth)
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok((acc / pred.len() as f64).sqrt())
}

/// One bin of the attributes diagram.
#[derive(Debug, Clone, Serialize)]
pub struct ReliabilityBin {
    pub lo: f64,
    pub hi: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_prob: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub obs_freq: Option<f64>,
    pub count: usize,
}

/// Attributes-diagram decomposition of the one-vs-rest Brier score.
///
/// The decomposition identity BS = reliability - resolution + uncertainty
/// holds exactly for the *binned* forecast (each probability replaced by its
/// bin mean); `binned_brier` carries that value.
#[derive(Debug, Clone, Serialize)]
pub struct ReliabilityBins {
    pub bins: Vec<ReliabilityBin>,
    pub reliability: f64,
    pub resolution: f64,
    pub uncertainty: f64,
    /// reliability / uncertainty (legend scaling of the attributes diagram);
    /// absent when the base rate is degenerate
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reliability_scaled: Option<f64>,
    /// resolution / uncertainty
    #[serde(skip_serializing_if = "Option::is_none")]
    pub resolution_scaled: Option<f64>,
    pub base_rate: f64,
    pub binned_brier: f64,
}

/// Bin one-vs-rest probabilities against binary outcomes into `n_bins`
/// equal-width bins and decompose the Brier score.
pub fn reliability(probs: &[f64], outcomes: &[f64], n_bins: usize) -> Result<ReliabilityBins> {
    if probs.len() != outcomes.len() {
        return Err(Error::Dimension("probs/outcomes length mismatch".into()));
    }
    if n_bins < 2 {
        return Err(Error::InvalidParam("n_bins must be >= 2".into()));
    }
    if probs.is_empty() {
        return Err(Error::Data("empty input".into()));
    }
    for (&p, &o) in probs.iter().zip(outcomes) {
        if !(-PROB_TOL..=1.0 + PROB_TOL).contains(&p) {
            return Err(Error::Data(format!("probability out of [0,1]: {p}")));
        }
        if o != 0.0 && o != 1.0 {
            return Err(Error::Data(format!("outcome must be binary: {o}")));
        }
    }
    let n = probs.len() as f64;
    let base_rate = outcomes.iter().sum::<f64>() / n;
    let mut sums = vec![(0.0f64, 0.0f64, 0usize); n_bins];
    for (&p, &o) in probs.iter().zip(outcomes) {
        let b = ((p * n_bins as f64) as usize).min(n_bins - 1);
        sums[b].0 += p;
        sums[b].1 += o;
        sums[b].2 += 1;
    }
    let mut bins = Vec::with_capacity(n_bins);
    let mut rel = 0.0;
    let mut res = 0.0;
    for (b, &(psum, osum, count)) in sums.iter().enumerate() {
        let lo = b as f64 / n_bins as f64;
        let hi = (b + 1) as f64 / n_bins as f64;
        if count == 0 {
            bins.push(ReliabilityBin { lo, hi, mean_prob: None, obs_freq: None, count: 0 });
            continue;
        }
        let mean_prob = psum / count as f64;
        let obs_freq = osum / count as f64;
        rel += count as f64 * (mean_prob - obs_freq) * (mean_prob - obs_freq) / n;
        res += count as f64 * (obs_freq - base_rate) * (obs_freq - base_rate) / n;
        bins.push(ReliabilityBin {
            lo,
            hi,
            mean_prob: Some(mean_prob),
            obs_freq: Some(obs_freq),
            count,
        });
    }
    let unc = base_rate * (1.0 - base_rate);
    Ok(ReliabilityBins {
        bins,
        reliability: rel,
        resolution: res,
        uncertainty: unc,
        reliability_scaled: (unc > 0.0).then(|| rel / unc),
        resolution_scaled: (unc > 0.0).then(|| res / unc),
        base_rate,
        binned_brier: rel - res + unc,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct PitHistogram {
    pub counts: Vec<usize>,
    pub pitd: f64,
    pub pitd_skill: f64,
}

/// PITD for the worst case: every sample in one outermost bin.
pub fn pitd_worst(m: usize, _n: usize) -> f64 {
    let m = m as f64;
    let mut acc = (1.0 - 1.0 / m) * (1.0 - 1.0 / m);
    acc += (m - 1.0) * (1.0 / m) * (1.0 / m);
    (acc / m).sqrt()
}

/// Histogram of PIT values with the PITD deviation score
/// sqrt((1/M) sum (N_m/N - 1/M)^2) and its skill score against the
/// all-in-one-outermost-bin worst case.
pub fn pit_histogram(pit_values: &[f64], m: usize) -> Result<PitHistogram> {
    if m < 2 {
        return Err(Error::InvalidParam("M must be >= 2".into()));
    }
    if pit_values.is_empty() {
        return Err(Error::Data("empty PIT values".into()));
    }
    let mut counts = vec![0usize; m];
    for &v in pit_values {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Data(format!("PIT value out of [0,1]: {v}")));
        }
        let b = ((v * m as f64) as usize).min(m - 1);
        counts[b] += 1;
    }
    let n = pit_values.len() as f64;
    let target = 1.0 / m as f64;
    let pitd = (counts
        .iter()
        .map(|&c| {
            let d = c as f64 / n - target;
            d * d
        })
        .sum::<f64>()
        / m as f64)
        .sqrt();
    let worst = pitd_worst(m, pit_values.len());
    Ok(PitHistogram {
        counts,
        pitd,
        pitd_skill: 1.0 - pitd / worst,
    })
}

/// Randomized PIT for a discrete predictive distribution: a uniform draw
/// between the CDF just below the observed class and the CDF at it.
pub fn randomized_pit(
    probs: &Array2<f64>,
    labels: &[usize],
    rng: &mut RngState,
) -> Result<Vec<f64>> {
    if probs.nrows() != labels.len() {
        return Err(Error::Dimension("probs/labels length mismatch".into()));
    }
    check_prob_rows(probs)?;
    let k = probs.ncols();
    labels
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            if y >= k {
                return Err(Error::Data(format!("label {y} out of range")));
            }
            let below: f64 = (0..y).map(|j| probs[[i, j]]).sum();
            let at = below + probs[[i, y]];
            Ok((below + rng.uniform() * (at - below)).clamp(0.0, 1.0))
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct DiscardCurve {
    pub fractions: Vec<f64>,
    pub metric_values: Vec<f64>,
    pub retained_counts: Vec<usize>,
    pub di: f64,
    /// Formula used for DI, recorded so reports are self-describing.
    pub di_definition: &'static str,
}

/// Discard test: evaluate a metric on progressively less-uncertain retained
/// subsets. `eval` receives the retained sample indices. For loss-like
/// metrics pass `lower_is_better = true`; DI is then the mean stepwise
/// decrease (sign flipped for skill-like metrics).
pub fn discard_test<F>(
    eval: F,
    uncertainties: &[f64],
    fractions: &[f64],
    lower_is_better: bool,
) -> Result<DiscardCurve>
where
    F: Fn(&[usize]) -> Result<f64>,
{
    if fractions.is_empty() {
        return Err(Error::InvalidParam("fractions must be non-empty".into()));
    }
    for w in fractions.windows(2) {
        if w[1] <= w[0] {
            return Err(Error::InvalidParam("fractions must be strictly increasing".into()));
        }
    }
    if !(0.0..1.0).contains(&fractions[0]) || *fractions.last().unwrap() >= 1.0 {
        return Err(Error::InvalidParam("fractions must lie in [0,1)".into()));
    }
    let n = uncertainties.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        uncertainties[a]
            .partial_cmp(&uncertainties[b])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut metric_values = Vec::with_capacity(fractions.len());
    let mut retained_counts = Vec::with_capacity(fractions.len());
    let mut prev_count = usize::MAX;
    for &f in fractions {
        let keep = ((1.0 - f) * n as f64).round() as usize;
        if keep == 0 {
            return Err(Error::Data(format!("fraction {f} retains no samples")));
        }
        if keep >= prev_count {
            return Err(Error::Data(format!(
                "retained counts not strictly decreasing at fraction {f}"
            )));
        }
        prev_count = keep;
        metric_values.push(eval(&order[..keep])?);
        retained_counts.push(keep);
    }
    let mut di = 0.0;
    for w in metric_values.windows(2) {
        di += w[0] - w[1];
    }
    di /= (metric_values.len() - 1).max(1) as f64;
    if !lower_is_better {
        di = -di;
    }
    Ok(DiscardCurve {
        fractions: fractions.to_vec(),
        metric_values,
        retained_counts,
        di,
        di_definition: "mean over consecutive discard steps of the metric improvement \
                        (previous minus current for loss-like metrics, negated for skill-like)",
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SpreadSkillBin {
    pub mean_spread: f64,
    pub rmse: f64,
    pub count: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct SpreadSkillBins {
    pub bins: Vec<SpreadSkillBin>,
    /// Set when the spread was constant and only one bin could be formed.
    pub degenerate: bool,
}

/// Equal-count bins by predicted spread, with per-bin RMSE of the errors.
pub fn spread_skill(spread: &[f64], errors: &[f64], n_bins: usize) -> Result<SpreadSkillBins> {
    if spread.len() != errors.len() {
        return Err(Error::Dimension("spread/errors length mismatch".into()));
    }
    if n_bins < 2 {
        return Err(Error::InvalidParam("n_bins must be >= 2".into()));
    }
    if spread.is_empty() {
        return Err(Error::Data("empty input".into()));
    }
    let lo = spread.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = spread.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        let r = rmse(errors, &vec![0.0; errors.len()])?;
        return Ok(SpreadSkillBins {
            bins: vec![SpreadSkillBin { mean_spread: lo, rmse: r, count: spread.len() }],
            degenerate: true,
        });
    }
    let n = spread.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        spread[a]
            .partial_cmp(&spread[b])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut bins = Vec::with_capacity(n_bins);
    for b in 0..n_bins {
        let start = b * n / n_bins;
        let end = ((b + 1) * n / n_bins).max(start + 1).min(n);
        if start >= end {
            continue;
        }
        let idx = &order[start..end];
        let mean_spread = idx.iter().map(|&i| spread[i]).sum::<f64>() / idx.len() as f64;
        let mse = idx.iter().map(|&i| errors[i] * errors[i]).sum::<f64>() / idx.len() as f64;
        bins.push(SpreadSkillBin {
            mean_spread,
            rmse: mse.sqrt(),
            count: idx.len(),
        });
    }
    Ok(SpreadSkillBins { bins, degenerate: false })
}

#[derive(Debug, Clone, Serialize)]
pub struct ConfusionMatrix {
    /// counts[true][pred]
    pub counts: Vec<Vec<usize>>,
    pub macro_f1: f64,
    pub per_class_f1: Vec<f64>,
}

/// Unnormalized confusion counts and macro-F1. A class with no support and
/// no predictions contributes an F1 of 0.
pub fn confusion_and_f1(pred: &[usize], truth: &[usize], k: usize) -> Result<ConfusionMatrix> {
    if pred.len() != truth.len() {
        return Err(Error::Dimension("pred/truth length mismatch".into()));
    }
    let mut counts = vec![vec![0usize; k]; k];
    for (&p, &t) in pred.iter().zip(truth) {
        if p >= k || t >= k {
            return Err(Error::Data(format!("label out of range: pred {p}, true {t}")));
        }
        counts[t][p] += 1;
    }
    let mut per_class_f1 = Vec::with_capacity(k);
    for c in 0..k {
        let tp = counts[c][c];
        let fp: usize = (0..k).filter(|&t| t != c).map(|t| counts[t][c]).sum();
        let fal_n: usize = (0..k).filter(|&p| p != c).map(|p| counts[c][p]).sum();
        let denom = 2 * tp + fp + fal_n;
        per_class_f1.push(if denom == 0 { 0.0 } else { 2.0 * tp as f64 / denom as f64 });
    }
    let macro_f1 = per_class_f1.iter().sum::<f64>() / k as f64;
    Ok(ConfusionMatrix { counts, macro_f1, per_class_f1 })
}
