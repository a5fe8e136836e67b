//! Dirichlet evidential classification head: evidence activation, Bayes-risk
//! loss with an annealed KL regularizer, Dempster-Shafer belief/uncertainty
//! masses, and the closed-form aleatoric/epistemic decomposition.

use ndarray::{Array1, Array2, Axis};

use crate::error::{Error, Result};
use crate::special::{digamma_unchecked, log_gamma_unchecked, trigamma_unchecked};

/// Evidence is clipped here before alpha = e + 1 so the digamma/log-gamma
/// arguments stay in a numerically safe range.
pub const EVIDENCE_CLIP: f64 = 1e8;

#[derive(Debug, Clone)]
pub struct EvidenceOutput {
    pub evidence: Array2<f64>,
    pub alpha: Array2<f64>,
    pub strength: Array1<f64>,
    pub expected_probs: Array2<f64>,
    /// Number of samples whose evidence hit [`EVIDENCE_CLIP`].
    pub clipped: usize,
}

#[derive(Debug, Clone)]
pub struct DstMasses {
    pub belief: Array2<f64>,
    pub u: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct ClassUncertainty {
    pub aleatoric: Array2<f64>,
    pub epistemic: Array2<f64>,
    pub total: Array2<f64>,
    pub summed_aleatoric: Array1<f64>,
    pub summed_epistemic: Array1<f64>,
    pub summed_total: Array1<f64>,
}

/// ReLU evidence activation: e = relu(raw), alpha = e + 1, p_hat = alpha / S.
pub fn evidence_head(raw: &Array2<f64>) -> Result<EvidenceOutput> {
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite raw output in evidence head".into()));
    }
    let mut clipped = 0usize;
    let evidence = raw.mapv(|v| {
        let e = v.max(0.0);
        if e > EVIDENCE_CLIP {
            clipped += 1;
            EVIDENCE_CLIP
        } else {
            e
        }
    });
    let alpha = &evidence + 1.0;
    let strength = alpha.sum_axis(Axis(1));
    let mut expected_probs = alpha.clone();
    for (mut row, &s) in expected_probs.rows_mut().into_iter().zip(strength.iter()) {
        row.mapv_inplace(|a| a / s);
    }
    Ok(EvidenceOutput {
        evidence,
        alpha,
        strength,
        expected_probs,
        clipped,
    })
}

/// Belief masses b_k = e_k / S and uncertainty mass u = K / S.
pub fn dst_masses(ev: &EvidenceOutput) -> DstMasses {
    let k = ev.alpha.ncols() as f64;
    let mut belief = ev.evidence.clone();
    for (mut row, &s) in belief.rows_mut().into_iter().zip(ev.strength.iter()) {
        row.mapv_inplace(|e| e / s);
    }
    let u = ev.strength.mapv(|s| k / s);
    DstMasses { belief, u }
}

/// Per-sample Bayes-risk loss:
/// sum_k (y_k - p_k)^2 + p_k(1 - p_k)/(S + 1).
pub fn risk_loss(ev: &EvidenceOutput, targets: &Array2<f64>) -> Result<Array1<f64>> {
    if targets.dim() != ev.alpha.dim() {
        return Err(Error::Dimension(format!(
            "targets {:?} vs alpha {:?}",
            targets.dim(),
            ev.alpha.dim()
        )));
    }
    let n = ev.alpha.nrows();
    let mut out = Array1::zeros(n);
    for i in 0..n {
        let s = ev.strength[i];
        let mut acc = 0.0;
        for k in 0..ev.alpha.ncols() {
            let p = ev.expected_probs[[i, k]];
            let y = targets[[i, k]];
            acc += (y - p) * (y - p) + p * (1.0 - p) / (s + 1.0);
        }
        out[i] = acc;
    }
    Ok(out)
}

/// Dirichlet parameters with the misleading evidence removed:
/// alpha_tilde = y + (1 - y) .* alpha.
pub fn misleading_alpha(ev: &EvidenceOutput, targets: &Array2<f64>) -> Result<Array2<f64>> {
    if targets.dim() != ev.alpha.dim() {
        return Err(Error::Dimension("targets/alpha shape mismatch".into()));
    }
    Ok(targets + &((1.0 - targets) * &ev.alpha))
}

/// Closed-form KL[D(p | alpha_tilde) || D(p | 1)] per sample.
pub fn kl_to_uniform(alpha_tilde: &Array2<f64>) -> Result<Array1<f64>> {
    if alpha_tilde.iter().any(|&a| a < 1.0 - 1e-12 || !a.is_finite()) {
        return Err(Error::Domain("alpha_tilde must be >= 1 elementwise".into()));
    }
    let k = alpha_tilde.ncols() as f64;
    let n = alpha_tilde.nrows();
    let mut out = Array1::zeros(n);
    for i in 0..n {
        let row = alpha_tilde.row(i);
        let s: f64 = row.sum();
        let psi_s = digamma_unchecked(s);
        let mut kl = log_gamma_unchecked(s) - log_gamma_unchecked(k);
        for &a in row {
            kl -= log_gamma_unchecked(a);
            kl += (a - 1.0) * (digamma_unchecked(a) - psi_s);
        }
        out[i] = kl;
    }
    Ok(out)
}

/// Annealing coefficient nu_t = min(1, epoch / annealing_epochs).
pub fn annealing_coefficient(epoch: usize, annealing_epochs: usize) -> f64 {
    (epoch as f64 / annealing_epochs.max(1) as f64).min(1.0)
}

/// Mean over batch of risk_loss + nu_t * KL(misleading alpha || uniform).
pub fn total_loss(
    ev: &EvidenceOutput,
    targets: &Array2<f64>,
    epoch: usize,
    annealing_epochs: usize,
) -> Result<f64> {
    let nu_t = annealing_coefficient(epoch, annealing_epochs);
    let risk = risk_loss(ev, targets)?;
    let kl = kl_to_uniform(&misleading_alpha(ev, targets)?)?;
    let n = risk.len() as f64;
    Ok((risk.sum() + nu_t * kl.sum()) / n)
}

/// Law-of-total-variance decomposition of the Dirichlet posterior:
/// epistemic_k = Var(p_k) = p(1-p)/(S+1); aleatoric_k = E[p(1-p)];
/// total_k = p(1-p).
pub fn decompose(ev: &EvidenceOutput) -> ClassUncertainty {
    let (n, k) = ev.alpha.dim();
    let mut aleatoric = Array2::zeros((n, k));
    let mut epistemic = Array2::zeros((n, k));
    let mut total = Array2::zeros((n, k));
    for i in 0..n {
        let s = ev.strength[i];
        for j in 0..k {
            let p = ev.expected_probs[[i, j]];
            let tot = p * (1.0 - p);
            let epi = tot / (s + 1.0);
            total[[i, j]] = tot;
            epistemic[[i, j]] = epi;
            aleatoric[[i, j]] = tot - epi;
        }
    }
    let summed_aleatoric = aleatoric.sum_axis(Axis(1));
    let summed_epistemic = epistemic.sum_axis(Axis(1));
    let summed_total = total.sum_axis(Axis(1));
    ClassUncertainty {
        aleatoric,
        epistemic,
        total,
        summed_aleatoric,
        summed_epistemic,
        summed_total,
    }
}

/// Uncertainty of one selected class per sample.
pub fn top1_uncertainty(u: &ClassUncertainty, selected: &[usize]) -> Result<Vec<(f64, f64)>> {
    let (n, k) = u.aleatoric.dim();
    if selected.len() != n {
        return Err(Error::Dimension("selector length mismatch".into()));
    }
    selected
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            if c >= k {
                return Err(Error::Domain(format!("class index {c} out of range")));
            }
            Ok((u.aleatoric[[i, c]], u.epistemic[[i, c]]))
        })
        .collect()
}

/// Argmax of the expected probabilities, ties broken by lowest index.
pub fn predicted_classes(ev: &EvidenceOutput) -> Vec<usize> {
    ev.expected_probs
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            let mut best_v = row[0];
            for (j, &v) in row.iter().enumerate().skip(1) {
                if v > best_v {
                    best = j;
                    best_v = v;
                }
            }
            best
        })
        .collect()
}

/// Shannon entropy of the expected probabilities, per sample.
pub fn expected_prob_entropy(ev: &EvidenceOutput) -> Array1<f64> {
    ev.expected_probs
        .rows()
        .into_iter()
        .map(|row| -row.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>())
        .collect()
}

/// Weighted mean loss and its gradient with respect to the raw network
/// outputs, for the total evidential classification loss at annealing
/// coefficient `nu_t`. Sample weights are normalized by their sum.
pub fn loss_grad_raw(
    raw: &Array2<f64>,
    targets: &Array2<f64>,
    nu_t: f64,
    sample_weights: &[f64],
) -> Result<(f64, Array2<f64>)> {
    let ev = evidence_head(raw)?;
    let (n, k) = ev.alpha.dim();
    if sample_weights.len() != n {
        return Err(Error::Dimension("sample_weights length mismatch".into()));
    }
    let wsum: f64 = sample_weights.iter().sum();
    let risk = risk_loss(&ev, targets)?;
    let alpha_tilde = misleading_alpha(&ev, targets)?;
    let kl = kl_to_uniform(&alpha_tilde)?;

    let mut loss = 0.0;
    let mut grad = Array2::zeros((n, k));
    for i in 0..n {
        let w = sample_weights[i] / wsum;
        loss += w * (risk[i] + nu_t * kl[i]);

        let s = ev.strength[i];
        // d(risk)/d(p_hat_k) and the explicit S-dependence of the variance term
        let mut dldp = vec![0.0; k];
        let mut q = 0.0;
        for j in 0..k {
            let p = ev.expected_probs[[i, j]];
            let y = targets[[i, j]];
            dldp[j] = -2.0 * (y - p) + (1.0 - 2.0 * p) / (s + 1.0);
            q += p * (1.0 - p);
        }
        let dot: f64 = (0..k).map(|j| dldp[j] * ev.expected_probs[[i, j]]).sum();

        let st: f64 = alpha_tilde.row(i).sum();
        let trig_st = trigamma_unchecked(st);

        for j in 0..k {
            // risk term through p_hat = alpha/S
            let mut dl_dalpha = (dldp[j] - dot) / s - q / ((s + 1.0) * (s + 1.0));
            // KL term through alpha_tilde = y + (1-y)*alpha
            let at = alpha_tilde[[i, j]];
            let dkl_dat = (at - 1.0) * trigamma_unchecked(at) - (st - k as f64) * trig_st;
            dl_dalpha += nu_t * dkl_dat * (1.0 - targets[[i, j]]);
            // ReLU and clip gate
            let r = raw[[i, j]];
            let gate = if r > 0.0 && r < EVIDENCE_CLIP { 1.0 } else { 0.0 };
            grad[[i, j]] = w * dl_dalpha * gate;
        }
    }
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::{dirichlet_sample, DirichletParams};
    use crate::rng::RngState;
    use ndarray::array;

    fn ev_from(alpha_minus_one: Array2<f64>) -> EvidenceOutput {
        evidence_head(&alpha_minus_one).unwrap()
    }

    #[test]
    fn evidence_head_cases() {
        let ev = ev_from(Array2::zeros((1, 4)));
        assert_eq!(ev.alpha, array![[1.0, 1.0, 1.0, 1.0]]);
        assert_eq!(ev.expected_probs, array![[0.25, 0.25, 0.25, 0.25]]);
        assert_eq!(ev.strength[0], 4.0);

        let ev = ev_from(array![[1.0, 0.0, 0.0, 0.0]]);
        assert_eq!(ev.alpha, array![[2.0, 1.0, 1.0, 1.0]]);
        assert_eq!(ev.expected_probs, array![[0.4, 0.2, 0.2, 0.2]]);

        let ev = ev_from(array![[-3.0, 2.0, -1.0, 0.0]]);
        assert_eq!(ev.evidence, array![[0.0, 2.0, 0.0, 0.0]]);
        assert_eq!(ev.strength[0], 6.0);

        assert!(evidence_head(&array![[f64::NAN, 0.0]]).is_err());
    }

    #[test]
    fn dst_masses_cases() {
        let ev = ev_from(Array2::zeros((1, 4)));
        let m = dst_masses(&ev);
        assert_eq!(m.u[0], 1.0);
        assert_eq!(m.belief, Array2::<f64>::zeros((1, 4)));

        let ev = ev_from(array![[1.0, 0.0, 0.0, 0.0]]);
        let m = dst_masses(&ev);
        assert!((m.u[0] - 0.8).abs() < 1e-12);
        assert!((m.belief[[0, 0]] - 0.2).abs() < 1e-12);

        // evidence -> infinity pushes u -> 0
        let ev = ev_from(array![[1e7, 0.0, 0.0, 0.0]]);
        let m = dst_masses(&ev);
        assert!(m.u[0] < 1e-6);
    }

    #[test]
    fn dst_identity_property() {
        let mut rng = RngState::new(8);
        for _ in 0..200 {
            let raw = Array2::from_shape_fn((1, 5), |_| rng.uniform_range(-5.0, 20.0));
            let ev = ev_from(raw);
            let m = dst_masses(&ev);
            let total = m.u[0] + m.belief.row(0).sum();
            assert!((total - 1.0).abs() < 1e-9);
            assert!(m.u[0] > 0.0 && m.u[0] <= 1.0);
        }
    }

    #[test]
    fn risk_loss_uniform_binary() {
        let ev = ev_from(Array2::zeros((1, 2)));
        let y = array![[1.0, 0.0]];
        let l = risk_loss(&ev, &y).unwrap();
        assert!((l[0] - (0.5 + 1.0 / 6.0)).abs() < 1e-12);
    }

    #[test]
    fn risk_loss_vanishes_with_matching_evidence() {
        let ev = ev_from(array![[1e7, 0.0, 0.0]]);
        let y = array![[1.0, 0.0, 0.0]];
        let l = risk_loss(&ev, &y).unwrap();
        assert!(l[0] < 1e-5);
    }

    #[test]
    fn risk_loss_matches_quadrature() {
        // Eq integrand: int || y - p ||^2 Dir(p | alpha) dp on K=2
        let mut rng = RngState::new(21);
        for _ in 0..200 {
            let a0 = rng.uniform_range(1.0, 8.0);
            let a1 = rng.uniform_range(1.0, 8.0);
            let y0 = if rng.uniform() < 0.5 { 1.0 } else { 0.0 };
            let ev = ev_from(array![[a0 - 1.0, a1 - 1.0]]);
            let y = array![[y0, 1.0 - y0]];
            let l = risk_loss(&ev, &y).unwrap()[0];

            // tanh-sinh quadrature over the 1-simplex; the double-exponential
            // substitution absorbs the (1-p)^(alpha-1) endpoint singularity
            let logb = crate::dist::log_multinomial_beta(&[a0, a1]);
            let h = 0.01;
            let mut acc = 0.0;
            let mut t = -5.0f64;
            while t <= 5.0 {
                let u = std::f64::consts::FRAC_PI_2 * t.sinh();
                let p = 1.0 / (1.0 + (-2.0 * u).exp());
                let q = 1.0 / (1.0 + (2.0 * u).exp());
                let dpdt = std::f64::consts::PI * p * q * t.cosh();
                let dens = (-logb + (a0 - 1.0) * p.ln() + (a1 - 1.0) * q.ln()).exp();
                let sq = (y[[0, 0]] - p).powi(2) + (y[[0, 1]] - q).powi(2);
                acc += sq * dens * dpdt * h;
                t += h;
            }
            let quad = acc;
            assert!((l - quad).abs() < 1e-6, "alpha=({a0},{a1}) l={l} quad={quad}");
        }
    }

    #[test]
    fn loss_attenuation_in_wrong_class_evidence() {
        // decreasing a wrong-class alpha decreases the risk loss
        let y = array![[1.0, 0.0, 0.0]];
        let mut prev = f64::INFINITY;
        for a_wrong in [6.0, 5.0, 4.0, 3.0, 2.0, 1.5, 1.1] {
            let ev = ev_from(array![[4.0, a_wrong - 1.0, 0.0]]);
            let l = risk_loss(&ev, &y).unwrap()[0];
            assert!(l < prev, "a_wrong={a_wrong}");
            prev = l;
        }
    }

    #[test]
    fn misleading_alpha_cases() {
        let ev = ev_from(array![[4.0, 1.0, 0.0, 0.0]]);
        let at = misleading_alpha(&ev, &array![[1.0, 0.0, 0.0, 0.0]]).unwrap();
        assert_eq!(at, array![[1.0, 2.0, 1.0, 1.0]]);

        let ev = ev_from(Array2::zeros((1, 3)));
        let at = misleading_alpha(&ev, &array![[0.0, 1.0, 0.0]]).unwrap();
        assert_eq!(at, array![[1.0, 1.0, 1.0]]);

        let ev = ev_from(array![[2.0, 6.0, 0.0, 1.0]]);
        let at = misleading_alpha(&ev, &array![[0.0, 1.0, 0.0, 0.0]]).unwrap();
        assert_eq!(at, array![[3.0, 1.0, 1.0, 2.0]]);
    }

    #[test]
    fn kl_zero_iff_uniform() {
        let kl = kl_to_uniform(&Array2::ones((1, 4))).unwrap();
        assert!(kl[0].abs() < 1e-12);

        let mut rng = RngState::new(4);
        for _ in 0..1000 {
            let at = Array2::from_shape_fn((1, 3), |_| 1.0 + rng.uniform_range(0.0, 9.0));
            let kl = kl_to_uniform(&at).unwrap();
            let uniform = at.iter().all(|&a| (a - 1.0).abs() < 1e-12);
            if uniform {
                assert!(kl[0].abs() < 1e-10);
            } else {
                assert!(kl[0] > 0.0, "alpha_tilde {at:?} gave KL {}", kl[0]);
            }
        }
    }

    #[test]
    fn kl_matches_monte_carlo() {
        // E_{p ~ D(at)}[log D(p|at) - log D(p|1)]
        let at = vec![3.0, 1.0];
        let closed = kl_to_uniform(&Array2::from_shape_vec((1, 2), at.clone()).unwrap()).unwrap()[0];
        let d = DirichletParams::new(at).unwrap();
        let uniform = DirichletParams::new(vec![1.0, 1.0]).unwrap();
        let mut rng = RngState::new(17);
        let n = 1_000_000;
        let draws = dirichlet_sample(&d, n, &mut rng);
        let vals: Vec<f64> = draws
            .iter()
            .map(|p| {
                crate::dist::dirichlet_log_pdf(p, &d).unwrap()
                    - crate::dist::dirichlet_log_pdf(p, &uniform).unwrap()
            })
            .collect();
        let mean = vals.iter().sum::<f64>() / n as f64;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n as f64 - 1.0);
        let se = (var / n as f64).sqrt();
        assert!((closed - mean).abs() < 4.0 * se, "closed {closed} mc {mean} se {se}");
    }

    #[test]
    fn total_loss_annealing() {
        let ev = ev_from(array![[2.0, 1.0, 0.0]]);
        let y = array![[1.0, 0.0, 0.0]];
        let risk = risk_loss(&ev, &y).unwrap()[0];
        let kl = kl_to_uniform(&misleading_alpha(&ev, &y).unwrap()).unwrap()[0];

        assert!((total_loss(&ev, &y, 0, 10).unwrap() - risk).abs() < 1e-14);
        assert!((total_loss(&ev, &y, 10, 10).unwrap() - (risk + kl)).abs() < 1e-14);
        assert!((total_loss(&ev, &y, 25, 10).unwrap() - (risk + kl)).abs() < 1e-14);
        assert!((total_loss(&ev, &y, 5, 10).unwrap() - (risk + 0.5 * kl)).abs() < 1e-14);
    }

    #[test]
    fn decompose_uniform_alpha() {
        let ev = ev_from(Array2::zeros((1, 4)));
        let u = decompose(&ev);
        for j in 0..4 {
            assert!((u.epistemic[[0, j]] - 0.0375).abs() < 1e-12);
            assert!((u.total[[0, j]] - 0.1875).abs() < 1e-12);
            assert!((u.aleatoric[[0, j]] - 0.15).abs() < 1e-12);
        }
    }

    #[test]
    fn decompose_large_evidence_limit() {
        let ev = ev_from(array![[999.0, 0.0, 0.0, 0.0]]);
        let u = decompose(&ev);
        let p = ev.expected_probs[[0, 0]];
        assert!(u.epistemic[[0, 0]] < 1e-3);
        assert!((u.total[[0, 0]] - p * (1.0 - p)).abs() < 1e-12);
    }

    #[test]
    fn decompose_closure_property() {
        let mut rng = RngState::new(12);
        for _ in 0..500 {
            let raw = Array2::from_shape_fn((1, 4), |_| rng.uniform_range(-2.0, 15.0));
            let ev = ev_from(raw);
            let u = decompose(&ev);
            for j in 0..4 {
                let resid = u.aleatoric[[0, j]] + u.epistemic[[0, j]] - u.total[[0, j]];
                assert!(resid.abs() < 1e-12);
                assert!(u.aleatoric[[0, j]] >= 0.0 && u.epistemic[[0, j]] >= 0.0);
            }
        }
    }

    #[test]
    fn epistemic_matches_dirichlet_variance_mc() {
        let mut rng = RngState::new(31);
        for &k in &[2usize, 3, 4] {
            let raw = Array2::from_shape_fn((1, k), |_| rng.uniform_range(0.0, 6.0));
            let ev = ev_from(raw);
            let u = decompose(&ev);
            let params =
                DirichletParams::new(ev.alpha.row(0).to_vec()).unwrap();
            let n = 1_000_000;
            let draws = dirichlet_sample(&params, n, &mut rng);
            for j in 0..k {
                let xs: Vec<f64> = draws.iter().map(|p| p[j]).collect();
                let m = xs.iter().sum::<f64>() / n as f64;
                let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n as f64 - 1.0);
                let se = var * (2.0 / n as f64).sqrt() * 2.0;
                assert!(
                    (u.epistemic[[0, j]] - var).abs() < 4.0 * se,
                    "k={k} j={j} analytic {} mc {var}",
                    u.epistemic[[0, j]]
                );
            }
        }
    }

    #[test]
    fn top1_and_argmax() {
        let ev = ev_from(array![[1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0, 0.0]]);
        let u = decompose(&ev);
        let picked = top1_uncertainty(&u, &[0, 2]).unwrap();
        assert_eq!(picked[0], (u.aleatoric[[0, 0]], u.epistemic[[0, 0]]));
        // uniform row: identical for any selector
        assert_eq!(picked[1], (u.aleatoric[[1, 1]], u.epistemic[[1, 1]]));
        assert!(top1_uncertainty(&u, &[0, 9]).is_err());
        assert!(top1_uncertainty(&u, &[0]).is_err());

        assert_eq!(predicted_classes(&ev), vec![0, 0]);
        let empty = ev_from(Array2::zeros((0, 4)));
        assert!(top1_uncertainty(&decompose(&empty), &[]).unwrap().is_empty());
    }

    #[test]
    fn entropy_range() {
        let ev = ev_from(Array2::zeros((1, 4)));
        let h = expected_prob_entropy(&ev);
        assert!((h[0] - 4.0f64.ln()).abs() < 1e-12);
    }
}
