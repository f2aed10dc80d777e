//! Weighted averages, correlated combination, the Poisson-weight bias and
//! hidden-offset blinding.

use nalgebra::{DMatrix, DVector};
use rand::RngExt;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::rng::{self, family};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub value: f64,
    pub sigma: f64,
}

impl Measurement {
    pub fn new(value: f64, sigma: f64) -> Result<Self> {
        if !value.is_finite() || !(sigma > 0.0 && sigma.is_finite()) {
            return Err(domain(format!(
                "measurement {value} +- {sigma}: need finite value and sigma > 0"
            )));
        }
        Ok(Measurement { value, sigma })
    }
}

/// Values with their full error matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSet {
    pub values: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
    pub labels: Vec<String>,
}

impl MeasurementSet {
    pub fn new(values: Vec<f64>, covariance: Vec<Vec<f64>>, labels: Vec<String>) -> Result<Self> {
        let n = values.len();
        if covariance.len() != n || covariance.iter().any(|r| r.len() != n) || labels.len() != n {
            return Err(domain(format!(
                "{n} values need a {n} x {n} covariance and {n} labels"
            )));
        }
        for i in 0..n {
            if !(covariance[i][i] > 0.0) {
                return Err(domain(format!(
                    "variance of {} must be positive",
                    labels[i]
                )));
            }
            for j in 0..i {
                let (a, b) = (covariance[i][j], covariance[j][i]);
                if (a - b).abs() > 1e-12 * (1.0 + a.abs()) {
                    return Err(domain(format!("covariance not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(MeasurementSet {
            values,
            covariance,
            labels,
        })
    }

    /// Build the error matrix from uncertainties and a correlation matrix.
    pub fn from_correlation(ms: &[Measurement], correlation: &[Vec<f64>]) -> Result<Self> {
        let n = ms.len();
        if correlation.len() != n || correlation.iter().any(|r| r.len() != n) {
            return Err(domain(format!("correlation must be {n} x {n}")));
        }
        let cov = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| {
                        if i == j {
                            ms[i].sigma.powi(2)
                        } else {
                            correlation[i][j] * ms[i].sigma * ms[j].sigma
                        }
                    })
                    .collect()
            })
            .collect();
        let labels = (0..n).map(|i| format!("m{i}")).collect();
        MeasurementSet::new(ms.iter().map(|m| m.value).collect(), cov, labels)
    }

    pub fn uncorrelated(ms: &[Measurement]) -> Result<Self> {
        let n = ms.len();
        let id: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| (i == j) as u8 as f64).collect())
            .collect();
        MeasurementSet::from_correlation(ms, &id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombinedResult {
    pub a_best: f64,
    pub sigma_best: f64,
    /// Weighted sum of squares at `a_best`.
    pub s: f64,
    /// `max(1, sqrt(S / (N - 1)))`.
    pub scale_factor: f64,
    pub scaled_sigma: f64,
    /// `a_best` falls outside the span of the inputs.
    pub outside_range: bool,
}

fn finish(values: &[f64], a_best: f64, sigma_best: f64, s: f64) -> CombinedResult {
    let ratio = s / (values.len() - 1) as f64;
    let scale_factor = if ratio > 1.0 { ratio.sqrt() } else { 1.0 };
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    CombinedResult {
        a_best,
        sigma_best,
        s,
        scale_factor,
        scaled_sigma: sigma_best * scale_factor,
        outside_range: a_best < lo || a_best > hi,
    }
}

/// Inverse-variance weighted mean of uncorrelated measurements.
pub fn weighted_average(ms: &[Measurement]) -> Result<CombinedResult> {
    if ms.len() < 2 {
        return Err(Error::Insufficient(format!(
            "weighted average needs at least 2 measurements, got {}",
            ms.len()
        )));
    }
    if let Some(m) = ms.iter().find(|m| !(m.sigma > 0.0) || !m.value.is_finite()) {
        return Err(domain(format!(
            "measurement {} +- {}: need sigma > 0",
            m.value, m.sigma
        )));
    }
    let wsum: f64 = ms.iter().map(|m| m.sigma.powi(-2)).sum();
    let a = ms.iter().map(|m| m.value * m.sigma.powi(-2)).sum::<f64>() / wsum;
    let s = sum_of_squares(ms, a);
    let values: Vec<f64> = ms.iter().map(|m| m.value).collect();
    Ok(finish(&values, a, wsum.sqrt().recip(), s))
}

/// `S(a) = Σ (a_i - a)² / σ_i²`.
pub fn sum_of_squares(ms: &[Measurement], a: f64) -> f64 {
    ms.iter().map(|m| ((m.value - a) / m.sigma).powi(2)).sum()
}

/// Generalized least-squares mean under a full error matrix.
pub fn correlated_average(set: &MeasurementSet) -> Result<CombinedResult> {
    let n = set.values.len();
    if n < 2 {
        return Err(Error::Insufficient(format!(
            "combination needs at least 2 measurements, got {n}"
        )));
    }
    let cov = DMatrix::from_fn(n, n, |i, j| set.covariance[i][j]);
    let singular = || {
        Error::SingularCovariance(
            "the measurements are fully correlated; combining them is meaningless, select one of the analyses instead".into(),
        )
    };
    let chol = cov.cholesky().ok_or_else(singular)?;
    let h = chol.inverse();
    let row_sums: Vec<f64> = (0..n).map(|i| h.row(i).sum()).collect();
    let total: f64 = row_sums.iter().sum();
    let diag_min = (0..n)
        .map(|i| set.covariance[i][i])
        .fold(f64::INFINITY, f64::min);
    if !(total > 0.0) || !total.is_finite() || total * diag_min > 1e12 {
        return Err(singular());
    }
    let a = row_sums
        .iter()
        .zip(&set.values)
        .map(|(w, v)| w * v)
        .sum::<f64>()
        / total;
    let r = DVector::from_iterator(n, set.values.iter().map(|v| v - a));
    let s = (r.transpose() * &h * &r)[(0, 0)];
    Ok(finish(&set.values, a, total.sqrt().recip(), s))
}

/// How each Poisson measurement's uncertainty is estimated in the bias demo.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Weighting {
    /// `σ² = max(n, 1)` from the observed count.
    Observed,
    /// `σ² = a`, the combined value itself, with `a` minimizing `Σ (n_i - a)² / a`.
    ExpectedAtEstimate,
    /// Weights recomputed from the current estimate, held fixed while the
    /// mean is refitted, until the estimate stops moving. A fixed-point
    /// construction in the spirit of Lyons, Martin and Saxon, not their
    /// published prescription.
    Iterated,
}

impl Weighting {
    pub fn name(&self) -> &'static str {
        match self {
            Weighting::Observed => "observed",
            Weighting::ExpectedAtEstimate => "expected-at-estimate",
            Weighting::Iterated => "iterated",
        }
    }
}

pub const ITERATION_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasEstimate {
    pub true_mean: f64,
    pub weighting: Weighting,
    pub n_repeats: usize,
    /// Mean combined value minus the true mean.
    pub bias: f64,
    pub stderr: f64,
}

/// Combine two Poisson counts under a weighting rule.
pub fn combine_counts(counts: &[u64], weighting: Weighting) -> f64 {
    let x: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    match weighting {
        Weighting::Observed => {
            let w: Vec<f64> = x.iter().map(|v| 1.0 / v.max(1.0)).collect();
            w.iter().zip(&x).map(|(w, v)| w * v).sum::<f64>() / w.iter().sum::<f64>()
        }
        Weighting::ExpectedAtEstimate => {
            (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
        }
        Weighting::Iterated => {
            let mut a = mean.max(1.0);
            for _ in 0..200 {
                let w = 1.0 / a.max(1.0);
                let next = x.iter().map(|v| w * v).sum::<f64>() / (w * x.len() as f64);
                let done = (next - a).abs() <= ITERATION_TOL * a.abs().max(1.0);
                a = next;
                if done {
                    break;
                }
            }
            a
        }
    }
}

/// Simulate pairs of Poisson measurements of the same mean and report the
/// bias of their combination.
pub fn poisson_weight_bias(
    true_mean: f64,
    n_repeats: usize,
    weighting: Weighting,
    seed: u64,
) -> Result<BiasEstimate> {
    if !(true_mean >= 5.0) || !true_mean.is_finite() {
        return Err(domain(format!("true mean {true_mean} must be at least 5")));
    }
    if n_repeats < 2 {
        return Err(Error::Insufficient("need at least two repeats".into()));
    }
    let values: Vec<f64> = (0..n_repeats as u64)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::stream(seed, family::WEIGHT_BIAS, i);
            let pair = [
                rng::poisson(&mut r, true_mean),
                rng::poisson(&mut r, true_mean),
            ];
            combine_counts(&pair, weighting)
        })
        .collect();
    let n = n_repeats as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(BiasEstimate {
        true_mean,
        weighting,
        n_repeats,
        bias: mean - true_mean,
        stderr: (var / n).sqrt(),
    })
}

/// A blinded value. `carry` holds the rounding error of the addition so
/// that unblinding restores the raw value bit for bit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Blinded {
    pub value: f64,
    pub carry: f64,
}

pub const DEFAULT_BLIND_RANGE: (f64, f64) = (-1.0, 1.0);

/// The hidden offset for `key`, uniform on `range`.
pub fn blinding_offset(key: &[u8], range: (f64, f64)) -> Result<f64> {
    let (lo, hi) = range;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(domain(format!(
            "blinding range [{lo}, {hi}] must be finite and non-empty"
        )));
    }
    let u: f64 = rng::stream_from_bytes(key, family::BLINDING).random();
    Ok(lo + (hi - lo) * u)
}

pub fn blind(value: f64, key: &[u8], range: (f64, f64)) -> Result<Blinded> {
    let offset = blinding_offset(key, range)?;
    let blinded = value + offset;
    // exact: value and blinded - offset are within a factor of two, or the
    // latter is exact and the difference is the rounding error of the sum
    let carry = value - (blinded - offset);
    Ok(Blinded {
        value: blinded,
        carry,
    })
}

pub fn unblind(blinded: Blinded, key: &[u8], range: (f64, f64)) -> Result<f64> {
    Ok((blinded.value - blinding_offset(key, range)?) + blinded.carry)
}
