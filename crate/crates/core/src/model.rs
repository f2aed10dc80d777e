//! The counting experiment: `n ~ Poisson(eff * s + b)`, with background and
//! efficiency optionally constrained by subsidiary measurements.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::poisson;
use crate::special::ln_factorial;

/// How a nuisance parameter's estimate was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SubsidiaryForm {
    /// Known precisely.
    Exact,
    /// Estimated from a subsidiary count `m ~ Poisson(nu * tau)`; the
    /// nominal count `k = 1 / rel_sigma^2` fixes `tau = k / mean`.
    GammaFromCount,
    /// Gaussian of width `rel_sigma * mean`, truncated to the physical region.
    TruncatedGaussian,
}

impl std::fmt::Display for SubsidiaryForm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SubsidiaryForm::Exact => "exact",
            SubsidiaryForm::GammaFromCount => "gamma-from-count",
            SubsidiaryForm::TruncatedGaussian => "truncated-gaussian",
        })
    }
}

/// One nuisance parameter: central value, relative uncertainty and the
/// form of the measurement that produced them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Nuisance {
    pub mean: f64,
    pub rel_sigma: f64,
    pub form: SubsidiaryForm,
}

impl Nuisance {
    pub fn exact(mean: f64) -> Self {
        Nuisance {
            mean,
            rel_sigma: 0.0,
            form: SubsidiaryForm::Exact,
        }
    }

    pub fn is_exact(&self) -> bool {
        self.form == SubsidiaryForm::Exact
    }

    /// Absolute uncertainty.
    pub fn sigma(&self) -> f64 {
        self.rel_sigma * self.mean
    }

    /// Nominal subsidiary count `k` for gamma-from-count nuisances.
    pub fn nominal_count(&self) -> Option<u64> {
        match self.form {
            SubsidiaryForm::GammaFromCount => {
                Some((1.0 / (self.rel_sigma * self.rel_sigma)).round() as u64)
            }
            _ => None,
        }
    }

    /// Exposure `tau` relating the subsidiary count mean to the nuisance value.
    pub fn exposure(&self) -> Option<f64> {
        self.nominal_count().map(|k| k as f64 / self.mean)
    }

    fn validate(&self, name: &str) -> Result<()> {
        if !(self.rel_sigma >= 0.0 && self.rel_sigma.is_finite()) {
            return Err(Error::InvalidModel(format!(
                "{name}_rel_sigma must be finite and >= 0, got {}",
                self.rel_sigma
            )));
        }
        match self.form {
            SubsidiaryForm::Exact if self.rel_sigma != 0.0 => Err(Error::InvalidModel(format!(
                "{name} is declared exact but {name}_rel_sigma = {}",
                self.rel_sigma
            ))),
            SubsidiaryForm::GammaFromCount | SubsidiaryForm::TruncatedGaussian
                if self.rel_sigma == 0.0 =>
            {
                Err(Error::InvalidModel(format!(
                    "{name} is declared {} but {name}_rel_sigma = 0",
                    self.form
                )))
            }
            SubsidiaryForm::GammaFromCount => {
                if self.mean <= 0.0 {
                    return Err(Error::InvalidModel(format!(
                        "{name} gamma-from-count needs a positive mean, got {}",
                        self.mean
                    )));
                }
                let k = (1.0 / (self.rel_sigma * self.rel_sigma)).round();
                if k < 1.0 || (k * self.rel_sigma * self.rel_sigma - 1.0).abs() > 1e-6 {
                    return Err(Error::InvalidModel(format!(
                        "{name}_rel_sigma = {} is not 1/sqrt(k) for an integer k >= 1",
                        self.rel_sigma
                    )));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// The experiment definition. The signal `s` is an argument of the
/// operations, not part of the model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CountingModel {
    background: Nuisance,
    efficiency: Nuisance,
    /// Subsidiary-to-main background exposure ratio used by the conditioning
    /// p-value. Defaults to the background nuisance's own exposure.
    tau: Option<f64>,
}

impl CountingModel {
    pub fn new(background: Nuisance, efficiency: Nuisance) -> Result<Self> {
        if !(background.mean >= 0.0 && background.mean.is_finite()) {
            return Err(Error::InvalidModel(format!(
                "b_mean must be finite and >= 0, got {}",
                background.mean
            )));
        }
        if !(efficiency.mean > 0.0 && efficiency.mean.is_finite()) {
            return Err(Error::InvalidModel(format!(
                "eff_mean must be finite and > 0, got {}",
                efficiency.mean
            )));
        }
        background.validate("b")?;
        efficiency.validate("eff")?;
        Ok(CountingModel {
            background,
            efficiency,
            tau: None,
        })
    }

    /// Background and efficiency both known precisely.
    pub fn exact(b: f64, eff: f64) -> Result<Self> {
        Self::new(Nuisance::exact(b), Nuisance::exact(eff))
    }

    /// Known background, efficiency from a subsidiary count with relative accuracy `rel`.
    pub fn with_counted_efficiency(b: f64, rel: f64) -> Result<Self> {
        Self::new(
            Nuisance::exact(b),
            Nuisance {
                mean: 1.0,
                rel_sigma: rel,
                form: SubsidiaryForm::GammaFromCount,
            },
        )
    }

    pub fn with_tau(mut self, tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::InvalidModel(format!(
                "tau must be finite and > 0, got {tau}"
            )));
        }
        self.tau = Some(tau);
        Ok(self)
    }

    pub fn background(&self) -> &Nuisance {
        &self.background
    }

    pub fn efficiency(&self) -> &Nuisance {
        &self.efficiency
    }

    pub fn b_mean(&self) -> f64 {
        self.background.mean
    }

    pub fn eff_mean(&self) -> f64 {
        self.efficiency.mean
    }

    pub fn tau(&self) -> Option<f64> {
        self.tau.or_else(|| self.background.exposure())
    }

    /// True when neither nuisance carries an uncertainty.
    pub fn is_exact(&self) -> bool {
        self.background.is_exact() && self.efficiency.is_exact()
    }

    /// Nuisance values at their nominal estimates.
    pub fn nominal(&self) -> NuisanceValues {
        NuisanceValues {
            b: self.background.mean,
            eff: self.efficiency.mean,
        }
    }

    /// Nuisance estimates implied by an observation's subsidiary counts.
    pub fn estimates(&self, obs: &Observation) -> NuisanceValues {
        let est = |nu: &Nuisance, count: Option<u64>| match (nu.exposure(), count) {
            (Some(tau), Some(m)) => m as f64 / tau,
            _ => nu.mean,
        };
        NuisanceValues {
            b: est(&self.background, obs.counts.background),
            eff: est(&self.efficiency, obs.counts.efficiency),
        }
    }

    /// Expected main count for signal `s` at the given nuisance values.
    pub fn expected(&self, s: f64, nu: NuisanceValues) -> f64 {
        nu.eff * s + nu.b
    }
}

/// Values of the two nuisance parameters at which the likelihood is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NuisanceValues {
    pub b: f64,
    pub eff: f64,
}

/// Counts from the subsidiary measurements backing gamma-from-count nuisances.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SubsidiaryCounts {
    pub background: Option<u64>,
    pub efficiency: Option<u64>,
}

/// Observed data: the main count plus any subsidiary counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Observation {
    pub n: u64,
    pub counts: SubsidiaryCounts,
}

impl Observation {
    /// Checks that subsidiary counts are present exactly for the model's
    /// gamma-from-count nuisances.
    pub fn new(model: &CountingModel, n: u64, counts: SubsidiaryCounts) -> Result<Self> {
        let check = |name: &str, nu: &Nuisance, c: Option<u64>| -> Result<()> {
            match (nu.form == SubsidiaryForm::GammaFromCount, c.is_some()) {
                (true, false) => Err(Error::InvalidObservation(format!(
                    "{name} is gamma-from-count but no subsidiary count was given"
                ))),
                (false, true) => Err(Error::InvalidObservation(format!(
                    "{name} subsidiary count given but the model declares {}",
                    nu.form
                ))),
                _ => Ok(()),
            }
        };
        check("background", &model.background, counts.background)?;
        check("efficiency", &model.efficiency, counts.efficiency)?;
        Ok(Observation { n, counts })
    }

    /// Main count `n` with every subsidiary count at its nominal value `k`.
    pub fn nominal(model: &CountingModel, n: u64) -> Self {
        Observation {
            n,
            counts: SubsidiaryCounts {
                background: model.background.nominal_count(),
                efficiency: model.efficiency.nominal_count(),
            },
        }
    }
}

/// Log-likelihood of the main count and subsidiary measurements.
///
/// Returns `-inf` (not an error) when the main mean is exactly zero and
/// `n > 0`. Constant terms of the Gaussian subsidiary density are dropped.
pub fn log_likelihood(
    model: &CountingModel,
    obs: &Observation,
    s: f64,
    nu: NuisanceValues,
) -> Result<f64> {
    if !(s >= 0.0 && s.is_finite()) {
        return Err(Error::Domain(format!(
            "signal must be finite and >= 0, got {s}"
        )));
    }
    if !(nu.eff > 0.0 && nu.eff.is_finite()) {
        return Err(Error::Domain(format!(
            "efficiency must be finite and > 0, got {}",
            nu.eff
        )));
    }
    if !(nu.b >= 0.0 && nu.b.is_finite()) {
        return Err(Error::Domain(format!(
            "background must be finite and >= 0, got {}",
            nu.b
        )));
    }
    Ok(main_term(obs.n, model.expected(s, nu))
        + subsidiary_term(&model.background, obs.counts.background, nu.b)
        + subsidiary_term(&model.efficiency, obs.counts.efficiency, nu.eff))
}

pub(crate) fn main_term(n: u64, mu: f64) -> f64 {
    poisson::ln_pmf(n, mu)
}

/// Log-likelihood contribution of one subsidiary measurement at nuisance value `value`.
pub(crate) fn subsidiary_term(nu: &Nuisance, count: Option<u64>, value: f64) -> f64 {
    match nu.form {
        SubsidiaryForm::Exact => 0.0,
        SubsidiaryForm::GammaFromCount => {
            let tau = nu.exposure().expect("gamma-from-count has an exposure");
            let m = count.unwrap_or_else(|| nu.nominal_count().unwrap_or(0));
            let mean = value * tau;
            if mean == 0.0 {
                return if m == 0 { 0.0 } else { f64::NEG_INFINITY };
            }
            m as f64 * mean.ln() - mean - ln_factorial(m)
        }
        SubsidiaryForm::TruncatedGaussian => {
            let z = (value - nu.mean) / nu.sigma();
            -0.5 * z * z
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn invariants_enforced() {
        assert!(CountingModel::exact(-1.0, 1.0).is_err());
        assert!(CountingModel::exact(1.0, 0.0).is_err());
        let bad_exact = Nuisance {
            mean: 1.0,
            rel_sigma: 0.1,
            form: SubsidiaryForm::Exact,
        };
        assert!(CountingModel::new(Nuisance::exact(3.0), bad_exact).is_err());
        let zero_gauss = Nuisance {
            mean: 1.0,
            rel_sigma: 0.0,
            form: SubsidiaryForm::TruncatedGaussian,
        };
        assert!(CountingModel::new(Nuisance::exact(3.0), zero_gauss).is_err());
        // 0.15 is not 1/sqrt(k)
        assert!(CountingModel::with_counted_efficiency(3.0, 0.15).is_err());
        assert!(CountingModel::with_counted_efficiency(3.0, 0.1).is_ok());
        assert!(CountingModel::with_counted_efficiency(3.0, 0.2).is_ok());
    }

    #[test]
    fn nominal_counts_and_exposure() {
        let m = CountingModel::with_counted_efficiency(3.0, 0.1).unwrap();
        assert_eq!(m.efficiency().nominal_count(), Some(100));
        assert_relative_eq!(m.efficiency().exposure().unwrap(), 100.0);
        let obs = Observation::nominal(&m, 4);
        assert_eq!(obs.counts.efficiency, Some(100));
        assert_eq!(m.estimates(&obs).eff, 1.0);
    }

    #[test]
    fn observation_must_match_model() {
        let m = CountingModel::with_counted_efficiency(3.0, 0.1).unwrap();
        assert!(Observation::new(&m, 3, SubsidiaryCounts::default()).is_err());
        let exact = CountingModel::exact(3.0, 1.0).unwrap();
        let counts = SubsidiaryCounts {
            background: Some(3),
            efficiency: None,
        };
        assert!(Observation::new(&exact, 3, counts).is_err());
    }

    #[test]
    fn likelihood_examples() {
        let nu = |b| NuisanceValues { b, eff: 1.0 };
        let m0 = CountingModel::exact(0.0, 1.0).unwrap();
        let obs0 = Observation::nominal(&m0, 0);
        assert_eq!(log_likelihood(&m0, &obs0, 0.0, nu(0.0)).unwrap(), 0.0);

        let m3 = CountingModel::exact(3.0, 1.0).unwrap();
        assert_relative_eq!(
            log_likelihood(&m3, &obs0, 0.0, nu(3.0)).unwrap(),
            -3.0,
            max_relative = 1e-15
        );

        let obs10 = Observation::nominal(&m3, 10);
        let ll = log_likelihood(&m3, &obs10, 7.0, nu(3.0)).unwrap();
        assert_relative_eq!(ll, 0.125_110_035_721_133_3f64.ln(), max_relative = 1e-12);
    }

    #[test]
    fn impossible_data_is_neg_infinity() {
        let m0 = CountingModel::exact(0.0, 1.0).unwrap();
        let obs = Observation::nominal(&m0, 2);
        let ll = log_likelihood(&m0, &obs, 0.0, NuisanceValues { b: 0.0, eff: 1.0 }).unwrap();
        assert_eq!(ll, f64::NEG_INFINITY);
        assert!(log_likelihood(&m0, &obs, -1.0, m0.nominal()).is_err());
        assert!(log_likelihood(&m0, &obs, 1.0, NuisanceValues { b: 0.0, eff: 0.0 }).is_err());
    }
}
