//! Discovery p-values, their combination, CLs, and sensitivity estimates.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

use crate::bayes::prior_nodes;
use crate::coverage::generate_toy;
use crate::error::{domain, Error, Result};
use crate::interval::IntervalResult;
use crate::model::{CountingModel, Observation, SubsidiaryForm};
use crate::poisson;
use crate::rng::{self, family};
use crate::special::{binomial_sf, p_to_sigma};

/// Which tail a p-value refers to. Only the upper tail is used here.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sided {
    OneSidedUpper,
}

/// A p-value with its one-sided Gaussian equivalent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PValueReport {
    pub p: f64,
    pub sided: Sided,
    /// `z` with `P(Z >= z) = p`, floored at zero for `p > 1/2`.
    pub sigma_equiv: f64,
    pub method: String,
}

impl PValueReport {
    pub fn new(p: f64, method: impl Into<String>) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(domain(format!("p-value must lie in [0, 1], got {p}")));
        }
        let sigma_equiv = if p == 0.0 {
            f64::INFINITY
        } else {
            p_to_sigma(p)?.max(0.0)
        };
        Ok(PValueReport {
            p,
            sided: Sided::OneSidedUpper,
            sigma_equiv,
            method: method.into(),
        })
    }
}

/// `P(n >= n_obs | b)` for a precisely known background.
pub fn pvalue_counting(n_obs: u64, b: f64) -> Result<PValueReport> {
    if !(b >= 0.0 && b.is_finite()) {
        return Err(domain(format!(
            "background must be finite and >= 0, got {b}"
        )));
    }
    PValueReport::new(poisson::sf(n_obs, b), "counting")
}

/// Default `γ` added by the confidence-interval-adjusted p-value.
pub const DEFAULT_GAMMA: f64 = 1e-8;

/// How the background uncertainty enters a discovery p-value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "strategy")]
pub enum NuisanceStrategy {
    /// Tail at the subsidiary estimate of `b`.
    PlugIn,
    /// Tail averaged over the background prior.
    PriorPredictive,
    /// Tail averaged over the background posterior given the main count.
    PosteriorPredictive,
    /// Largest tail over `b` in `[lo, hi]`.
    Supremum { lo: f64, hi: f64 },
    /// Largest tail over a `1 - gamma` interval for `b`, plus `gamma`. The
    /// interval defaults to the central `1 - gamma` prior interval.
    CiAdjusted {
        gamma: f64,
        interval: Option<(f64, f64)>,
    },
    /// Binomial tail of `n` among `n + m` total counts, `m` the subsidiary count.
    Conditioning,
}

impl NuisanceStrategy {
    pub fn name(&self) -> &'static str {
        match self {
            NuisanceStrategy::PlugIn => "plug-in",
            NuisanceStrategy::PriorPredictive => "prior-predictive",
            NuisanceStrategy::PosteriorPredictive => "posterior-predictive",
            NuisanceStrategy::Supremum { .. } => "supremum",
            NuisanceStrategy::CiAdjusted { .. } => "ci-adjusted",
            NuisanceStrategy::Conditioning => "conditioning",
        }
    }
}

fn tail_max_over(n: u64, lo: f64, hi: f64) -> f64 {
    let steps = 1000;
    (0..=steps)
        .map(|k| poisson::sf(n, lo + (hi - lo) * k as f64 / steps as f64))
        .fold(0.0, f64::max)
}

/// Central interval holding `1 - gamma` of the background prior.
fn prior_interval(model: &CountingModel, obs: &Observation, gamma: f64) -> Result<(f64, f64)> {
    let nodes = prior_nodes(model.background(), obs.counts.background, 8)?;
    let (mut lo, mut hi) = (nodes[0].0, nodes[nodes.len() - 1].0);
    let mut cum = 0.0;
    for &(x, w) in &nodes {
        if cum < 0.5 * gamma {
            lo = x;
        }
        cum += w;
        if cum <= 1.0 - 0.5 * gamma {
            hi = x;
        }
    }
    Ok((lo, hi))
}

/// Discovery p-value for the main count with an uncertain background.
pub fn pvalue_nuisance(
    obs: &Observation,
    model: &CountingModel,
    strategy: NuisanceStrategy,
) -> Result<PValueReport> {
    let n = obs.n;
    let bg = model.background();
    let p = match strategy {
        NuisanceStrategy::PlugIn => poisson::sf(n, model.estimates(obs).b),
        NuisanceStrategy::PriorPredictive => prior_nodes(bg, obs.counts.background, 8)?
            .iter()
            .map(|&(b, w)| w * poisson::sf(n, b))
            .sum(),
        NuisanceStrategy::PosteriorPredictive => {
            let nodes = prior_nodes(bg, obs.counts.background, 8)?;
            let post: Vec<f64> = nodes
                .iter()
                .map(|&(b, w)| w * poisson::ln_pmf(n, b).exp())
                .collect();
            let norm: f64 = post.iter().sum();
            if norm <= 0.0 {
                return Err(domain("background posterior vanishes for this count"));
            }
            nodes
                .iter()
                .zip(&post)
                .map(|(&(b, _), &w)| w * poisson::sf(n, b))
                .sum::<f64>()
                / norm
        }
        NuisanceStrategy::Supremum { lo, hi } => {
            if !(lo >= 0.0 && lo <= hi) {
                return Err(domain(format!(
                    "supremum range [{lo}, {hi}] is not an interval in b >= 0"
                )));
            }
            if !hi.is_finite() {
                return Err(domain("supremum p-value needs a bounded background range"));
            }
            tail_max_over(n, lo, hi)
        }
        NuisanceStrategy::CiAdjusted { gamma, interval } => {
            if !(gamma > 0.0 && gamma < 1.0) {
                return Err(domain(format!("gamma must lie in (0, 1), got {gamma}")));
            }
            let (lo, hi) = match interval {
                Some((lo, hi)) if lo >= 0.0 && lo <= hi && hi.is_finite() => (lo, hi),
                Some((lo, hi)) => {
                    return Err(domain(format!(
                        "background interval [{lo}, {hi}] is not bounded in b >= 0"
                    )))
                }
                None if bg.is_exact() => (bg.mean, bg.mean),
                None => prior_interval(model, obs, gamma)?,
            };
            (tail_max_over(n, lo, hi) + gamma).min(1.0)
        }
        NuisanceStrategy::Conditioning => {
            if bg.form != SubsidiaryForm::GammaFromCount {
                return Err(domain(format!(
                    "conditioning needs a gamma-from-count background, model declares {}",
                    bg.form
                )));
            }
            let m = obs.counts.background.ok_or_else(|| {
                Error::InvalidObservation(
                    "conditioning needs the background subsidiary count".into(),
                )
            })?;
            let tau = model
                .tau()
                .expect("gamma-from-count background has an exposure");
            binomial_sf(n, n + m, 1.0 / (1.0 + tau))?
        }
    };
    PValueReport::new(p.clamp(0.0, 1.0), strategy.name())
}

/// Rule for combining independent p-values. There is deliberately no default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CombineRule {
    /// Probability that the smallest of `k` uniforms is at most `p_min`.
    Min,
    /// Probability that the product of `k` uniforms is at most `Π p_i`.
    Product,
}

pub fn combine_pvalues(ps: &[f64], rule: CombineRule) -> Result<PValueReport> {
    if ps.is_empty() {
        return Err(Error::Insufficient("no p-values to combine".into()));
    }
    if let Some(bad) = ps.iter().find(|p| !(**p > 0.0 && **p <= 1.0)) {
        return Err(domain(format!("p-values must lie in (0, 1], got {bad}")));
    }
    let k = ps.len();
    let p = match rule {
        CombineRule::Min => {
            let p_min = ps.iter().copied().fold(1.0, f64::min);
            // 1 - (1 - p)^k without cancellation
            -((k as f64) * (-p_min).ln_1p()).exp_m1()
        }
        CombineRule::Product => {
            let ln_x: f64 = ps.iter().map(|p| p.ln()).sum();
            let y = -ln_x;
            let mut term = 1.0;
            let mut sum = 1.0;
            for j in 1..k {
                term *= y / j as f64;
                sum += term;
            }
            (ln_x.exp() * sum).min(1.0)
        }
    };
    let tag = match rule {
        CombineRule::Min => "combine-min",
        CombineRule::Product => "combine-product",
    };
    PValueReport::new(p, tag)
}

/// `CLs = (1 - p1) / (1 - p0)`.
pub fn cls(p0: f64, p1: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p0) || !(0.0..=1.0).contains(&p1) {
        return Err(domain(format!(
            "p0 and p1 must lie in [0, 1], got {p0}, {p1}"
        )));
    }
    if p0 >= 1.0 {
        return Err(Error::NoNullSensitivity);
    }
    Ok((1.0 - p1) / (1.0 - p0))
}

/// Conventional exclusion threshold on CLs.
pub const CLS_EXCLUSION: f64 = 0.05;

/// CLs for a counting experiment with the count as test statistic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClsReport {
    pub cls: f64,
    /// `P(n <= n_obs | s + b)`.
    pub one_minus_p1: f64,
    /// `P(n <= n_obs | b)`.
    pub one_minus_p0: f64,
    pub excluded: bool,
}

pub fn cls_counting(n: u64, b: f64, s: f64) -> Result<ClsReport> {
    if !(b >= 0.0 && b.is_finite() && s >= 0.0 && s.is_finite()) {
        return Err(domain(format!(
            "need finite b >= 0 and s >= 0, got b = {b}, s = {s}"
        )));
    }
    let one_minus_p1 = poisson::cdf(n, s + b);
    let one_minus_p0 = poisson::cdf(n, b);
    if one_minus_p0 <= 0.0 {
        return Err(Error::NoNullSensitivity);
    }
    let value = one_minus_p1 / one_minus_p0;
    Ok(ClsReport {
        cls: value,
        one_minus_p1,
        one_minus_p0,
        excluded: value <= CLS_EXCLUSION,
    })
}

/// Smallest `s` with `CLs(n, b, s) <= 1 - cl`.
pub fn cls_upper_limit(n: u64, b: f64, cl: f64) -> Result<IntervalResult> {
    if !(cl > 0.0 && cl < 1.0) {
        return Err(domain(format!(
            "confidence level must lie in (0, 1), got {cl}"
        )));
    }
    let target = 1.0 - cl;
    let f = |s: f64| cls_counting(n, b, s).map(|r| r.cls);
    let mut hi = 1.0 + n as f64;
    while f(hi)? > target {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    while hi - lo > 1e-12 * (1.0 + hi) {
        let mid = 0.5 * (lo + hi);
        if f(mid)? > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(IntervalResult::new(
        0.0,
        hi,
        cl,
        crate::interval::IntervalMethod::Cls,
    ))
}

/// Null and alternative distributions of a test statistic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum StatDist {
    Poisson {
        mu: f64,
    },
    /// Sorted samples of a statistic, each weighted equally.
    Empirical(Vec<f64>),
}

impl StatDist {
    pub fn empirical(mut samples: Vec<f64>) -> Result<Self> {
        if samples.is_empty() || samples.iter().any(|x| x.is_nan()) {
            return Err(Error::Insufficient(
                "empirical distribution needs non-NaN samples".into(),
            ));
        }
        samples.sort_by(f64::total_cmp);
        Ok(StatDist::Empirical(samples))
    }

    /// `P(T >= t)`.
    pub fn sf(&self, t: f64) -> f64 {
        match self {
            StatDist::Poisson { mu } => poisson::sf(t.max(0.0).ceil() as u64, *mu),
            StatDist::Empirical(xs) => {
                (xs.len() - xs.partition_point(|&x| x < t)) as f64 / xs.len() as f64
            }
        }
    }

    /// `P(T <= t)`.
    pub fn cdf(&self, t: f64) -> f64 {
        match self {
            StatDist::Poisson { mu } => {
                if t < 0.0 {
                    0.0
                } else {
                    poisson::cdf(t.floor() as u64, *mu)
                }
            }
            StatDist::Empirical(xs) => xs.partition_point(|&x| x <= t) as f64 / xs.len() as f64,
        }
    }
}

/// A test statistic's distribution under the null and under a signal hypothesis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypoStatDist {
    pub h0: StatDist,
    pub h1: StatDist,
    pub label: String,
}

impl HypoStatDist {
    /// Count statistic for background `b` and signal `s` at efficiency `eff`.
    pub fn counting(b: f64, s: f64, eff: f64) -> Self {
        HypoStatDist {
            h0: StatDist::Poisson { mu: b },
            h1: StatDist::Poisson { mu: b + eff * s },
            label: format!("n | b = {b}, s = {s}"),
        }
    }

    /// `p0 = P(T >= t | H0)`.
    pub fn p0(&self, t: f64) -> f64 {
        self.h0.sf(t)
    }

    /// `CLs` with `1 - p1 = P(T <= t | H1)` and `1 - p0 = P(T <= t | H0)`.
    pub fn cls(&self, t: f64) -> Result<f64> {
        let den = self.h0.cdf(t);
        if den <= 0.0 {
            return Err(Error::NoNullSensitivity);
        }
        Ok(self.h1.cdf(t) / den)
    }
}

/// Punzi sensitivity and the quantities it was built from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensitivityResult {
    pub t_crit: u64,
    /// Requested significance level.
    pub alpha_target: f64,
    /// Actual null tail `P(n >= t_crit | b)`, at most `alpha_target`.
    pub alpha: f64,
    pub cl: f64,
    pub s_min: f64,
    /// `1 - beta` at `s_min`.
    pub power: f64,
}

/// Smallest signal that reaches the critical count with probability `cl`.
pub fn punzi_sensitivity(model: &CountingModel, alpha: f64, cl: f64) -> Result<SensitivityResult> {
    if !(alpha > 0.0 && alpha <= 0.1) {
        return Err(domain(format!("alpha must lie in (0, 0.1], got {alpha}")));
    }
    if !(cl > 0.5 && cl < 1.0) {
        return Err(domain(format!("cl must lie in (0.5, 1), got {cl}")));
    }
    let b = model.b_mean();
    let eff = model.eff_mean();
    let mut t_crit = 0;
    while poisson::sf(t_crit, b) > alpha {
        t_crit += 1;
    }
    let power = |s: f64| poisson::sf(t_crit, b + eff * s);
    let mut hi = 1.0 + t_crit as f64 / eff;
    while power(hi) < cl {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    while hi - lo > 1e-12 * (1.0 + hi) {
        let mid = 0.5 * (lo + hi);
        if power(mid) >= cl {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let result = SensitivityResult {
        t_crit,
        alpha_target: alpha,
        alpha: poisson::sf(t_crit, b),
        cl,
        s_min: hi,
        power: power(hi),
    };
    debug_assert!(result.alpha <= alpha && result.power >= cl);
    Ok(result)
}

/// Median upper limit over background-only toys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MedianSensitivity {
    pub median: f64,
    /// Upper limit of each toy in toy order; empty intervals count as zero.
    pub limits: Vec<f64>,
}

/// Median of `limit` over `n_toys` background-only toys (odd, so the median
/// is a sample value). Each distinct toy observation is evaluated once.
pub fn median_sensitivity<F>(
    model: &CountingModel,
    n_toys: usize,
    seed: u64,
    limit: F,
) -> Result<MedianSensitivity>
where
    F: Fn(&Observation) -> Result<IntervalResult> + Sync,
{
    if n_toys.is_multiple_of(2) {
        return Err(domain(format!(
            "n_toys must be odd for an exact sample median, got {n_toys}"
        )));
    }
    let toys: Vec<Observation> = (0..n_toys as u64)
        .into_par_iter()
        .map(|i| generate_toy(model, 0.0, &mut rng::stream(seed, family::SENSITIVITY, i)))
        .collect();
    let mut distinct: Vec<Observation> = toys.clone();
    distinct.sort_by_key(|o| (o.n, o.counts.background, o.counts.efficiency));
    distinct.dedup();
    let values: Vec<f64> = distinct
        .par_iter()
        .map(|o| limit(o).map(|r| r.upper().unwrap_or(0.0)))
        .collect::<Result<_>>()?;
    let table: HashMap<Observation, f64> = distinct.into_iter().zip(values).collect();
    let limits: Vec<f64> = toys.iter().map(|o| table[o]).collect();
    let mut sorted = limits.clone();
    sorted.sort_by(f64::total_cmp);
    Ok(MedianSensitivity {
        median: sorted[n_toys / 2],
        limits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn report_round_trip() {
        for p in [0.3, 1e-3, 2.8665157187919391e-7, 1e-15] {
            let r = PValueReport::new(p, "t").unwrap();
            assert_relative_eq!(
                crate::special::sigma_to_p(r.sigma_equiv),
                p,
                max_relative = 1e-12
            );
        }
        assert_eq!(PValueReport::new(0.9, "t").unwrap().sigma_equiv, 0.0);
    }

    #[test]
    fn counting_examples() {
        assert_eq!(pvalue_counting(0, 3.0).unwrap().p, 1.0);
        assert_relative_eq!(
            pvalue_counting(10, 3.0).unwrap().p,
            1.1025e-3,
            max_relative = 1e-4
        );
        let p16 = pvalue_counting(16, 3.0).unwrap();
        assert!(p16.sigma_equiv > 5.0);
    }

    #[test]
    fn cls_basics() {
        assert_eq!(cls(0.3, 0.3).unwrap(), 1.0);
        assert_eq!(cls(1.0, 0.3), Err(Error::NoNullSensitivity));
        assert_relative_eq!(
            cls_counting(0, 3.0, 3.0).unwrap().cls,
            (-3f64).exp(),
            epsilon = 1e-12
        );
        assert!(cls_counting(0, 3.0, 3.0).unwrap().excluded);
    }

    #[test]
    fn punzi_critical_count() {
        let m = CountingModel::exact(3.0, 1.0).unwrap();
        let r = punzi_sensitivity(&m, crate::special::sigma_to_p(5.0), 0.95).unwrap();
        assert_eq!(r.t_crit, 16);
        assert!(r.alpha <= r.alpha_target && r.power >= 0.95);
    }

    #[test]
    fn combine_requires_input() {
        assert!(combine_pvalues(&[], CombineRule::Min).is_err());
        assert!(combine_pvalues(&[0.0, 0.5], CombineRule::Min).is_err());
    }
}
