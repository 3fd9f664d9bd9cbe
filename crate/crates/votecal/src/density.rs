//! Logit transform and Gaussian kernel density estimation in logit space,
//! with numerically stable log-density evaluation.
//!
//! Scores live in (0,1); a KDE fitted directly on that interval spills
//! density mass outside it. Fitting in logit space avoids that. The density
//! is estimated on the logit axis as-is (no change-of-variable Jacobian):
//! the log-density *ratio* of two models evaluated at the same point is
//! unaffected because the Jacobian factor cancels.

use serde::{Deserialize, Serialize};

use crate::data::SCORE_EPS;
use crate::error::{Error, Result};

const LN_SQRT_2PI: f64 = 0.9189385332046727;

/// Densities are floored at 1e-300 before taking the log, so results stay
/// finite in the far tails.
pub const LOG_DENSITY_FLOOR: f64 = -690.7755278982137;

/// `ln(p / (1 - p))`. Errors when p is outside (0,1); callers holding
/// clamped scores can use it unchecked via the clamp guarantee.
pub fn logit(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("logit({p}) undefined outside (0,1)")));
    }
    Ok((p / (1.0 - p)).ln())
}

/// Logit after clamping into `[SCORE_EPS, 1 - SCORE_EPS]`; total and finite.
pub(crate) fn logit_clamped(p: f64) -> f64 {
    let p = p.clamp(SCORE_EPS, 1.0 - SCORE_EPS);
    (p / (1.0 - p)).ln()
}

/// Inverse of [`logit`]: `1 / (1 + e^{-x})`.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Silverman's rule of thumb: `0.9 · min(σ̂, IQR/1.34) · n^{-1/5}`, with a
/// fallback to 1.0 when the rule degenerates (single sample, all samples
/// identical).
pub fn silverman_bandwidth(samples: &[f64]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidInput(
            "silverman_bandwidth needs at least one sample".into(),
        ));
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let ss: f64 = samples.iter().map(|x| (x - mean) * (x - mean)).sum();
    let std_dev = (ss / (n - 1.0)).sqrt();

    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite samples"));
    let iqr = quantile(&sorted, 0.75) - quantile(&sorted, 0.25);

    let spread = std_dev.min(iqr / 1.34);
    let h = 0.9 * spread * n.powf(-0.2);
    if h.is_finite() && h > 0.0 {
        Ok(h)
    } else {
        Ok(1.0)
    }
}

/// Linear-interpolation quantile of a sorted slice (the usual "type 7"
/// definition).
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let frac = pos - lo as f64;
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    }
}

/// Gaussian KDE over logit-transformed scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KdeModel {
    /// Logit-transformed score samples.
    pub centers: Vec<f64>,
    pub bandwidth: f64,
}

/// Fit a KDE on scores in (0,1). Centers are the logits of the clamped
/// scores; the bandwidth defaults to Silverman's rule over the centers.
pub fn fit_kde(scores: &[f64], bandwidth: Option<f64>) -> Result<KdeModel> {
    if scores.is_empty() {
        return Err(Error::InvalidInput("fit_kde needs at least one score".into()));
    }
    let mut centers = Vec::with_capacity(scores.len());
    for &s in scores {
        crate::data::clamp_score(s)?;
        centers.push(logit_clamped(s));
    }
    let bandwidth = match bandwidth {
        Some(h) => {
            if !(h.is_finite() && h > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "bandwidth must be a positive real, got {h}"
                )));
            }
            h
        }
        None => silverman_bandwidth(&centers)?,
    };
    Ok(KdeModel { centers, bandwidth })
}

impl KdeModel {
    /// Log of the estimated density at score `p`, evaluated on the logit
    /// axis via log-sum-exp and floored at [`LOG_DENSITY_FLOOR`]. Exact
    /// O(n) summation over all centers.
    pub fn log_density(&self, p: f64) -> f64 {
        let z = logit_clamped(p);
        self.log_density_at_logit(z)
    }

    pub(crate) fn log_density_at_logit(&self, z: f64) -> f64 {
        let h = self.bandwidth;
        let mut max_term = f64::NEG_INFINITY;
        let mut terms = Vec::with_capacity(self.centers.len());
        for &c in &self.centers {
            let u = (z - c) / h;
            let t = -0.5 * u * u;
            if t > max_term {
                max_term = t;
            }
            terms.push(t);
        }
        let sum: f64 = terms.iter().map(|t| (t - max_term).exp()).sum();
        let log_norm = LN_SQRT_2PI + (self.centers.len() as f64 * h).ln();
        let ld = max_term + sum.ln() - log_norm;
        ld.max(LOG_DENSITY_FLOOR)
    }
}

/// `log f̂_correct(p) - log f̂_incorrect(p)`, the verifier-score signal term.
pub fn log_density_ratio(correct: &KdeModel, incorrect: &KdeModel, p: f64) -> f64 {
    correct.log_density(p) - incorrect.log_density(p)
}
