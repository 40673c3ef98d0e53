use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::log_sum_exp;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Resampling {
    Multinomial,
    Residual,
    Stratified,
    #[default]
    Systematic,
}

impl Resampling {
    pub fn as_str(&self) -> &'static str {
        match self {
            Resampling::Multinomial => "multinomial",
            Resampling::Residual => "residual",
            Resampling::Stratified => "stratified",
            Resampling::Systematic => "systematic",
        }
    }
}

impl FromStr for Resampling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "multinomial" => Ok(Self::Multinomial),
            "residual" => Ok(Self::Residual),
            "stratified" => Ok(Self::Stratified),
            "systematic" => Ok(Self::Systematic),
            other => Err(Error::Config(format!("unknown resampling scheme `{other}`"))),
        }
    }
}

/// Normalized linear weights from log weights.
pub fn normalize_log_weights(log_w: &[f64]) -> Result<Vec<f64>> {
    let z = log_sum_exp(log_w);
    if !z.is_finite() {
        return Err(Error::AllWeightsZero);
    }
    Ok(log_w.iter().map(|&l| (l - z).exp()).collect())
}

/// `(Σw)² / Σw²` computed in log space.
pub fn effective_sample_size(log_w: &[f64]) -> f64 {
    let s1 = log_sum_exp(log_w);
    if !s1.is_finite() {
        return 0.0;
    }
    let doubled: Vec<f64> = log_w.iter().map(|&l| 2.0 * (l - s1)).collect();
    let ess = (-log_sum_exp(&doubled)).exp();
    ess.clamp(1.0, log_w.len() as f64)
}

/// Ancestor index for each sorted point `u ∈ [0, 1)` by inverse CDF.
fn invert_sorted(weights: &[f64], points: impl IntoIterator<Item = f64>, out: &mut Vec<usize>) {
    let last = weights.iter().rposition(|&w| w > 0.0).unwrap_or(0);
    let mut i = 0;
    let mut cum = weights[0];
    for u in points {
        while u >= cum && i < last {
            i += 1;
            cum += weights[i];
        }
        out.push(i);
    }
}

fn multinomial_draws<R: Rng + ?Sized>(weights: &[f64], n: usize, rng: &mut R, out: &mut Vec<usize>) {
    if n == 0 {
        return;
    }
    let total: f64 = weights.iter().sum();
    let mut u: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * total).collect();
    u.sort_by(f64::total_cmp);
    invert_sorted(weights, u, out);
}

/// Ancestor indices (ascending) of `m` offspring under normalized `weights`.
pub fn resample_indices<R: Rng + ?Sized>(
    weights: &[f64],
    m: usize,
    scheme: Resampling,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if weights.is_empty() || !weights.iter().any(|&w| w > 0.0) {
        return Err(Error::AllWeightsZero);
    }
    let mut out = Vec::with_capacity(m);
    let mf = m as f64;
    match scheme {
        Resampling::Multinomial => multinomial_draws(weights, m, rng, &mut out),
        Resampling::Stratified => {
            let points: Vec<f64> = (0..m).map(|k| (k as f64 + rng.random::<f64>()) / mf).collect();
            invert_sorted(weights, points, &mut out);
        }
        Resampling::Systematic => {
            let u0: f64 = rng.random();
            invert_sorted(weights, (0..m).map(|k| (k as f64 + u0) / mf), &mut out);
        }
        Resampling::Residual => {
            let mut residual = Vec::with_capacity(weights.len());
            for (i, &w) in weights.iter().enumerate() {
                let copies = (mf * w).floor();
                out.extend(std::iter::repeat_n(i, copies as usize));
                residual.push(mf * w - copies);
            }
            out.truncate(m);
            let rest = m - out.len();
            if rest > 0 {
                if residual.iter().any(|&r| r > 0.0) {
                    multinomial_draws(&residual, rest, rng, &mut out);
                } else {
                    multinomial_draws(weights, rest, rng, &mut out);
                }
            }
            out.sort_unstable();
        }
    }
    Ok(out)
}

/// Offspring count per parent.
pub fn offspring_counts(ancestors: &[usize], n: usize) -> Vec<usize> {
    let mut counts = vec![0; n];
    for &a in ancestors {
        counts[a] += 1;
    }
    counts
}
