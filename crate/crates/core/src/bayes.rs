//! Bayesian upper limits: flat prior on `s >= 0`, nuisance parameters
//! integrated out against priors derived from their subsidiary measurements.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::interval::{IntervalMethod, IntervalResult};
use crate::model::{CountingModel, Nuisance, Observation, SubsidiaryForm};
use crate::poisson;
use crate::quad;

const GEOMETRIC_POINTS: usize = 150;
const LINEAR_INTERVALS: usize = 4000;
const SUPPORT_SIGMAS: f64 = 8.0;
const TAIL_FRACTION: f64 = 1e-4;

/// Posterior for `s` tabulated on an ascending grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PosteriorDensity {
    pub s_grid: Vec<f64>,
    pub density: Vec<f64>,
    pub normalized: bool,
    pub divergent: bool,
    /// Why the posterior was flagged divergent, naming the prior combination.
    pub reason: Option<String>,
}

impl PosteriorDensity {
    /// Trapezoid integral of the tabulated density.
    pub fn integral(&self) -> f64 {
        self.s_grid
            .windows(2)
            .zip(self.density.windows(2))
            .map(|(s, f)| 0.5 * (s[1] - s[0]) * (f[0] + f[1]))
            .sum()
    }

    /// Smallest `s` with posterior mass `p` below it. The density is taken as
    /// linear inside each grid cell, so the cumulative is solved as a quadratic.
    pub fn quantile(&self, p: f64) -> Result<f64> {
        if self.divergent {
            return Err(Error::DivergentPosterior(
                self.reason.clone().unwrap_or_default(),
            ));
        }
        if !(p > 0.0 && p < 1.0) {
            return Err(domain(format!(
                "quantile level must lie in (0, 1), got {p}"
            )));
        }
        let total = self.integral();
        let target = p * total;
        let mut cum = 0.0;
        for (s, f) in self.s_grid.windows(2).zip(self.density.windows(2)) {
            let h = s[1] - s[0];
            let cell = 0.5 * h * (f[0] + f[1]);
            if cum + cell >= target {
                let need = target - cum;
                let slope = (f[1] - f[0]) / h;
                // f0 t + slope t^2 / 2 = need
                let t = if slope.abs() * h < 1e-12 * f[0].max(1e-300) {
                    need / f[0]
                } else {
                    let disc = (f[0] * f[0] + 2.0 * slope * need).max(0.0);
                    2.0 * need / (f[0] + disc.sqrt())
                };
                return Ok(s[0] + t.clamp(0.0, h));
            }
            cum += cell;
        }
        Ok(*self.s_grid.last().expect("grid is non-empty"))
    }
}

/// Discretized prior for one nuisance: `(value, weight)` pairs with weights
/// summing to one. Exact nuisances give a single node.
pub(crate) fn prior_nodes(
    nu: &Nuisance,
    count: Option<u64>,
    panels: usize,
) -> Result<Vec<(f64, f64)>> {
    let (lo, hi, ln_density): (f64, f64, Box<dyn Fn(f64) -> f64 + Sync>) = match nu.form {
        SubsidiaryForm::Exact => return Ok(vec![(nu.mean, 1.0)]),
        SubsidiaryForm::GammaFromCount => {
            let tau = nu.exposure().expect("gamma-from-count has an exposure");
            let shape = count
                .or(nu.nominal_count())
                .expect("gamma-from-count has a count") as f64;
            if shape <= 0.0 {
                return Err(Error::DivergentPosterior(
                    "gamma prior from a zero subsidiary count is improper".into(),
                ));
            }
            let mean = shape / tau;
            let sd = shape.sqrt() / tau;
            (
                (mean - SUPPORT_SIGMAS * sd).max(0.0),
                mean + SUPPORT_SIGMAS * sd,
                Box::new(move |x: f64| {
                    if x <= 0.0 {
                        f64::NEG_INFINITY
                    } else {
                        (shape - 1.0) * x.ln() - tau * x
                    }
                }),
            )
        }
        SubsidiaryForm::TruncatedGaussian => {
            let (mean, sd) = (nu.mean, nu.sigma());
            (
                (mean - SUPPORT_SIGMAS * sd).max(0.0),
                mean + SUPPORT_SIGMAS * sd,
                Box::new(move |x: f64| -0.5 * ((x - mean) / sd).powi(2)),
            )
        }
    };
    let nodes = quad::composite_nodes(lo, hi, panels);
    let peak = nodes
        .iter()
        .map(|&(x, _)| ln_density(x))
        .fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<(f64, f64)> = nodes
        .iter()
        .map(|&(x, w)| (x, w * (ln_density(x) - peak).exp()))
        .collect();
    let total: f64 = out.iter().map(|p| p.1).sum();
    for p in &mut out {
        p.1 /= total;
    }
    out.retain(|p| p.1 > 0.0);
    Ok(out)
}

/// Power-law exponent of the efficiency prior at zero: density ~ eff^(a-1).
/// The marginal likelihood then falls like `s^-a`, which a flat prior on `s`
/// can only normalize when `a > 1`.
fn analytic_divergence(model: &CountingModel, obs: &Observation) -> Option<String> {
    let eff = model.efficiency();
    match eff.form {
        SubsidiaryForm::Exact => None,
        SubsidiaryForm::TruncatedGaussian => Some(
            "truncated-gaussian efficiency prior with a flat prior on s: the prior density at eff = 0 is non-zero, \
             so the posterior tail falls only like 1/s"
                .into(),
        ),
        SubsidiaryForm::GammaFromCount => {
            let shape = obs.counts.efficiency.or(eff.nominal_count()).unwrap_or(0);
            (shape <= 1).then(|| {
                format!(
                    "gamma-from-count efficiency prior with subsidiary count {shape} and a flat prior on s: \
                     the posterior tail falls like s^-{shape}"
                )
            })
        }
    }
}

struct Marginal {
    n: u64,
    nodes: Vec<(f64, f64, f64)>,
}

impl Marginal {
    fn new(model: &CountingModel, obs: &Observation) -> Result<Self> {
        let both = !model.background().is_exact() && !model.efficiency().is_exact();
        let panels = if both { 2 } else { 4 };
        let b_nodes = prior_nodes(model.background(), obs.counts.background, panels)?;
        let e_nodes = prior_nodes(model.efficiency(), obs.counts.efficiency, panels)?;
        let mut nodes = Vec::with_capacity(b_nodes.len() * e_nodes.len());
        for &(b, wb) in &b_nodes {
            for &(e, we) in &e_nodes {
                nodes.push((b, e, wb * we));
            }
        }
        Ok(Marginal { n: obs.n, nodes })
    }

    /// `∫∫ Poisson(n; eff s + b) π(eff) π(b)` in log space.
    fn ln_at(&self, s: f64) -> f64 {
        let terms = self
            .nodes
            .iter()
            .map(|&(b, e, w)| w.ln() + poisson::ln_pmf(self.n, e * s + b));
        let terms: Vec<f64> = terms.collect();
        crate::special::log_sum_exp(&terms)
    }
}

/// Default upper end of the signal grid.
pub fn default_s_max(n: u64, eff_rel_sigma: f64) -> f64 {
    let n = n as f64;
    (n + 10.0 * n.sqrt() + 10.0 * (1.0 + eff_rel_sigma)).max(50.0)
}

fn hybrid_grid(s_max: f64) -> Vec<f64> {
    let knee = 1.0_f64.min(0.1 * s_max);
    let start = 1e-4 * knee;
    let mut grid = vec![0.0];
    let ratio = (knee / start).powf(1.0 / (GEOMETRIC_POINTS - 1) as f64);
    let mut s = start;
    for _ in 0..GEOMETRIC_POINTS - 1 {
        grid.push(s);
        s *= ratio;
    }
    let h = (s_max - knee) / LINEAR_INTERVALS as f64;
    grid.extend((0..=LINEAR_INTERVALS).map(|k| knee + k as f64 * h));
    grid
}

/// Marginal posterior for `s` under a flat prior on `s >= 0`.
///
/// A divergent posterior is returned flagged rather than as an error so that
/// callers can inspect it; [`upper_limit`] refuses to take quantiles of it.
pub fn posterior(model: &CountingModel, obs: &Observation) -> Result<PosteriorDensity> {
    let s_max = default_s_max(obs.n, model.efficiency().rel_sigma);
    let s_grid = hybrid_grid(s_max);
    let divergent = |s_grid: Vec<f64>, reason: String| PosteriorDensity {
        density: vec![0.0; s_grid.len()],
        s_grid,
        normalized: false,
        divergent: true,
        reason: Some(reason),
    };
    if let Some(reason) = analytic_divergence(model, obs) {
        return Ok(divergent(s_grid, reason));
    }
    let marginal = match Marginal::new(model, obs) {
        Ok(m) => m,
        Err(Error::DivergentPosterior(reason)) => return Ok(divergent(s_grid, reason)),
        Err(e) => return Err(e),
    };
    let ln_f: Vec<f64> = s_grid.par_iter().map(|&s| marginal.ln_at(s)).collect();
    let peak = ln_f.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !peak.is_finite() {
        return Err(domain("likelihood vanishes on the whole signal grid"));
    }
    // numeric tail check out to four times the grid
    let f = |s: f64| (marginal.ln_at(s) - peak).exp();
    let far = 4.0 * s_max;
    let total = quad::integrate(&f, 0.0, far, 1e-8, 12);
    let last_tenth = quad::integrate(&f, 0.9 * far, far, 1e-8, 12);
    if last_tenth > TAIL_FRACTION * total {
        return Ok(divergent(
            s_grid,
            format!(
                "posterior mass above s = {} is {:.3e} of the total",
                0.9 * far,
                last_tenth / total
            ),
        ));
    }
    let mut post = PosteriorDensity {
        density: ln_f.iter().map(|l| (l - peak).exp()).collect(),
        s_grid,
        normalized: false,
        divergent: false,
        reason: None,
    };
    let norm = post.integral();
    for d in &mut post.density {
        *d /= norm;
    }
    post.normalized = true;
    Ok(post)
}

/// Bayesian upper limit `s_up` with posterior mass `cl` in `[0, s_up]`.
pub fn upper_limit(model: &CountingModel, obs: &Observation, cl: f64) -> Result<IntervalResult> {
    if !(cl > 0.0 && cl < 1.0) {
        return Err(domain(format!(
            "confidence level must lie in (0, 1), got {cl}"
        )));
    }
    let post = posterior(model, obs)?;
    let s_up = post.quantile(cl)?;
    Ok(IntervalResult::new(0.0, s_up, cl, IntervalMethod::Bayes))
}
