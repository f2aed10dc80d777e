//! Toy experiments, coverage scans and the unisim/multisim comparison.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bayes;
use crate::error::{domain, Error, Result};
use crate::frequentist::{
    classical_upper_limit, fc_interval, flip_flop_interval, FLIP_FLOP_SWITCH,
};
use crate::interval::{IntervalMethod, IntervalResult};
use crate::model::{CountingModel, Nuisance, Observation, SubsidiaryCounts};
use crate::profile;
use crate::rng::{self, family};

/// Smallest toy count accepted by [`coverage_scan`].
pub const MIN_TOYS: usize = 10_000;

/// One toy: subsidiary counts at the model's true nuisance values, then the
/// main count at `eff * s_true + b`.
pub fn generate_toy(model: &CountingModel, s_true: f64, rng: &mut impl Rng) -> Observation {
    let mut draw = |nu: &Nuisance| nu.nominal_count().map(|k| rng::poisson(rng, k as f64));
    let background = draw(model.background());
    let efficiency = draw(model.efficiency());
    let n = rng::poisson(rng, model.expected(s_true, model.nominal()));
    Observation {
        n,
        counts: SubsidiaryCounts {
            background,
            efficiency,
        },
    }
}

/// The experiment a coverage scan simulates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum ExperimentModel {
    Counting(CountingModel),
    /// `x ~ N(s, 1)` with `s >= 0`.
    UnitGaussian,
}

/// Interval procedure under test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "method")]
pub enum CoverageMethod {
    Fc,
    Classical,
    Bayes,
    Profile { delta: f64 },
    FlipFlop { switch_sigma: f64 },
}

impl CoverageMethod {
    pub fn flip_flop() -> Self {
        CoverageMethod::FlipFlop {
            switch_sigma: FLIP_FLOP_SWITCH,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            CoverageMethod::Fc => "fc",
            CoverageMethod::Classical => "classical",
            CoverageMethod::Bayes => "bayes",
            CoverageMethod::Profile { .. } => "profile",
            CoverageMethod::FlipFlop { .. } => "flip-flop",
        }
    }
}

/// Interval for a counting observation. Frequentist belts need an exact
/// background; an exact efficiency other than one rescales the signal axis.
pub fn counting_interval(
    method: CoverageMethod,
    model: &CountingModel,
    obs: &Observation,
    cl: f64,
) -> Result<IntervalResult> {
    let scaled = |r: IntervalResult, method: IntervalMethod| -> IntervalResult {
        let eff = model.eff_mean();
        match (r.lower(), r.upper()) {
            (Some(lo), Some(hi)) => IntervalResult::new(lo / eff, hi / eff, cl, method),
            _ => r,
        }
    };
    let need_exact = |name: &str| -> Result<()> {
        if model.is_exact() {
            Ok(())
        } else {
            Err(Error::Mismatch(format!(
                "{name} intervals need exact nuisance parameters"
            )))
        }
    };
    match method {
        CoverageMethod::Fc => {
            need_exact("fc")?;
            Ok(scaled(
                fc_interval(obs.n, model.b_mean(), cl)?,
                IntervalMethod::FeldmanCousins,
            ))
        }
        CoverageMethod::Classical => {
            need_exact("classical")?;
            Ok(scaled(
                classical_upper_limit(obs.n, model.b_mean(), cl)?,
                IntervalMethod::Classical,
            ))
        }
        CoverageMethod::Bayes => bayes::upper_limit(model, obs, cl),
        CoverageMethod::Profile { delta } => profile::profile_interval(model, obs, delta, cl),
        CoverageMethod::FlipFlop { .. } => Err(Error::Mismatch(
            "flip-flop needs the unit-Gaussian model".into(),
        )),
    }
}

/// Empirical coverage on a grid of true signal values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageCurve {
    pub s_true: Vec<f64>,
    pub coverage: Vec<f64>,
    pub stderr: Vec<f64>,
    /// Number of covering toys at each point.
    pub covered: Vec<u64>,
    /// Fraction of toys whose interval was empty.
    pub empty_fraction: Vec<f64>,
    pub n_toys: usize,
    pub method: String,
    pub seed: u64,
}

impl CoverageCurve {
    /// Lowest value of `coverage + k * stderr` over the grid.
    pub fn min_with_slack(&self, k: f64) -> f64 {
        self.coverage
            .iter()
            .zip(&self.stderr)
            .map(|(c, e)| c + k * e)
            .fold(f64::INFINITY, f64::min)
    }

    /// Largest jump between adjacent grid points.
    pub fn max_jump(&self) -> f64 {
        self.coverage
            .windows(2)
            .map(|w| (w[1] - w[0]).abs())
            .fold(0.0, f64::max)
    }
}

/// Fraction of toys whose interval contains `s_true`, at each grid point.
///
/// Toy `i` at grid point `j` draws from its own stream, so counts depend only
/// on `(seed, n_toys, model, method)`. Intervals are computed once per
/// distinct observation and reused across the scan. Divergent Bayesian
/// posteriors count as non-covering.
pub fn coverage_scan(
    method: CoverageMethod,
    model: &ExperimentModel,
    s_grid: &[f64],
    cl: f64,
    n_toys: usize,
    seed: u64,
) -> Result<CoverageCurve> {
    if n_toys < MIN_TOYS {
        return Err(domain(format!(
            "n_toys must be at least {MIN_TOYS}, got {n_toys}"
        )));
    }
    if !(cl > 0.0 && cl < 1.0) {
        return Err(domain(format!(
            "confidence level must lie in (0, 1), got {cl}"
        )));
    }
    if let Some(s) = s_grid.iter().find(|s| !(**s >= 0.0 && s.is_finite())) {
        return Err(domain(format!(
            "true signal values must be finite and >= 0, got {s}"
        )));
    }
    let stream = |j: usize, i: usize| {
        rng::stream(seed, rng::subfamily(family::COVERAGE, j as u64), i as u64)
    };
    let mut covered = Vec::with_capacity(s_grid.len());
    let mut empty = Vec::with_capacity(s_grid.len());
    match (model, method) {
        (ExperimentModel::UnitGaussian, CoverageMethod::FlipFlop { switch_sigma }) => {
            for (j, &s) in s_grid.iter().enumerate() {
                let tally = (0..n_toys)
                    .into_par_iter()
                    .map(|i| {
                        let z: f64 = StandardNormal.sample(&mut stream(j, i));
                        let x = s + z;
                        let r = flip_flop_interval(x, cl, switch_sigma)?;
                        Ok((r.contains(s) as u64, r.is_empty() as u64))
                    })
                    .try_reduce(|| (0, 0), |a, b| Ok((a.0 + b.0, a.1 + b.1)))?;
                covered.push(tally.0);
                empty.push(tally.1);
            }
        }
        (ExperimentModel::UnitGaussian, m) => {
            return Err(Error::Mismatch(format!(
                "{} intervals need a counting model",
                m.name()
            )));
        }
        (ExperimentModel::Counting(_), CoverageMethod::FlipFlop { .. }) => {
            return Err(Error::Mismatch(
                "flip-flop needs the unit-Gaussian model".into(),
            ));
        }
        (ExperimentModel::Counting(cm), m) => {
            let mut cache: HashMap<Observation, Option<IntervalResult>> = HashMap::new();
            for (j, &s) in s_grid.iter().enumerate() {
                let toys: Vec<Observation> = (0..n_toys)
                    .into_par_iter()
                    .map(|i| generate_toy(cm, s, &mut stream(j, i)))
                    .collect();
                let mut fresh: Vec<Observation> = toys
                    .iter()
                    .filter(|o| !cache.contains_key(o))
                    .copied()
                    .collect();
                fresh.sort_by_key(|o| (o.n, o.counts.background, o.counts.efficiency));
                fresh.dedup();
                let computed: Vec<Option<IntervalResult>> = fresh
                    .par_iter()
                    .map(|o| match counting_interval(m, cm, o, cl) {
                        Ok(r) => Ok(Some(r)),
                        Err(Error::DivergentPosterior(_)) => Ok(None),
                        Err(e) => Err(e),
                    })
                    .collect::<Result<_>>()?;
                cache.extend(fresh.into_iter().zip(computed));
                let (mut c, mut e) = (0, 0);
                for o in &toys {
                    match &cache[o] {
                        Some(r) => {
                            c += r.contains(s) as u64;
                            e += r.is_empty() as u64;
                        }
                        None => e += 1,
                    }
                }
                covered.push(c);
                empty.push(e);
            }
        }
    }
    let n = n_toys as f64;
    let coverage: Vec<f64> = covered.iter().map(|&c| c as f64 / n).collect();
    Ok(CoverageCurve {
        s_true: s_grid.to_vec(),
        stderr: coverage
            .iter()
            .map(|c| (c * (1.0 - c) / n).sqrt())
            .collect(),
        coverage,
        covered,
        empty_fraction: empty.iter().map(|&e| e as f64 / n).collect(),
        n_toys,
        method: method.name().to_string(),
        seed,
    })
}

/// Default coverage grid: 0 to 20 in steps of 0.1.
pub fn default_s_grid() -> Vec<f64> {
    (0..=200).map(|k| k as f64 * 0.1).collect()
}

/// Unisim and multisim estimates of a systematic uncertainty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystematicsReport {
    /// `|T(ν0 + σ_i e_i) - T(ν0 - σ_i e_i)| / 2` for each nuisance.
    pub unisim_shifts: Vec<f64>,
    pub quadrature: f64,
    /// Sample standard deviation of `T` over joint draws.
    pub multisim: f64,
    /// Standard error of `multisim`.
    pub multisim_error: f64,
    pub covariance: Vec<Vec<f64>>,
}

/// Compare one-at-a-time shifts with joint sampling of the nuisances.
pub fn systematics_compare<F>(
    response: F,
    nominal: &[f64],
    covariance: &[Vec<f64>],
    n_multisim: usize,
    seed: u64,
) -> Result<SystematicsReport>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let d = nominal.len();
    if d == 0 || covariance.len() != d || covariance.iter().any(|row| row.len() != d) {
        return Err(domain(format!(
            "covariance must be {d} x {d} and non-empty"
        )));
    }
    if n_multisim < 2 {
        return Err(Error::Insufficient(
            "multisim needs at least two draws".into(),
        ));
    }
    let cov = DMatrix::from_fn(d, d, |i, j| covariance[i][j]);
    if (0..d).any(|i| {
        (0..d).any(|j| (cov[(i, j)] - cov[(j, i)]).abs() > 1e-12 * (1.0 + cov[(i, j)].abs()))
    }) {
        return Err(Error::NotPositiveSemiDefinite(
            "covariance is not symmetric".into(),
        ));
    }
    let eig = SymmetricEigen::new(cov.clone());
    let scale = eig.eigenvalues.amax().max(1e-300);
    if let Some(l) = eig.eigenvalues.iter().find(|&&l| l < -1e-10 * scale) {
        return Err(Error::NotPositiveSemiDefinite(format!("eigenvalue {l}")));
    }
    let root =
        &eig.eigenvectors * DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
    let unisim_shifts: Vec<f64> = (0..d)
        .map(|i| {
            let sigma = cov[(i, i)].sqrt();
            let mut up = nominal.to_vec();
            let mut down = nominal.to_vec();
            up[i] += sigma;
            down[i] -= sigma;
            0.5 * (response(&up) - response(&down)).abs()
        })
        .collect();
    let quadrature = unisim_shifts.iter().map(|s| s * s).sum::<f64>().sqrt();
    let values: Vec<f64> = (0..n_multisim as u64)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::stream(seed, family::SYSTEMATICS, i);
            let z = DVector::from_fn(d, |_, _| StandardNormal.sample(&mut r));
            let x = &root * z;
            let point: Vec<f64> = nominal.iter().zip(x.iter()).map(|(a, b)| a + b).collect();
            response(&point)
        })
        .collect();
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    let multisim = var.sqrt();
    Ok(SystematicsReport {
        unisim_shifts,
        quadrature,
        multisim,
        multisim_error: multisim / (2.0 * (n - 1.0)).sqrt(),
        covariance: covariance.to_vec(),
    })
}
