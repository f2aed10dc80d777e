//! Profile likelihood in the signal and the `Δ ln L` interval rule.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::interval::{IntervalMethod, IntervalResult};
use crate::model::{
    log_likelihood, CountingModel, Nuisance, NuisanceValues, Observation, SubsidiaryForm,
};

/// `Δ ln L` giving a 68.27% interval in the asymptotic regime.
pub const DELTA_68: f64 = 0.5;
/// `Δ ln L` giving a 90% interval in the asymptotic regime.
pub const DELTA_90: f64 = 1.352_771_727_047_702_2;

const GRAD_TOL: f64 = 1e-8;
const MAX_NEWTON: usize = 200;
const EFF_FLOOR: f64 = 1e-12;
const ENDPOINT_TOL: f64 = 1e-11;

/// Profiled log-likelihood tabulated on a signal grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProfileCurve {
    pub s_grid: Vec<f64>,
    pub ln_l_prof: Vec<f64>,
    /// Conditional nuisance estimates at each grid point.
    pub nuisance_hat: Vec<NuisanceValues>,
    pub s_hat: f64,
    pub ln_l_max: f64,
    model: CountingModel,
    obs: Observation,
}

impl ProfileCurve {
    pub fn model(&self) -> &CountingModel {
        &self.model
    }

    pub fn observation(&self) -> &Observation {
        &self.obs
    }

    /// Profiled log-likelihood at an arbitrary signal value.
    pub fn at(&self, s: f64) -> Result<f64> {
        profiled(&self.model, &self.obs, s).map(|(l, _)| l)
    }
}

/// First and second derivatives of the log-likelihood in one nuisance's
/// subsidiary term.
fn subsidiary_derivs(nu: &Nuisance, count: Option<u64>, value: f64) -> (f64, f64) {
    match nu.form {
        SubsidiaryForm::Exact => (0.0, 0.0),
        SubsidiaryForm::GammaFromCount => {
            let tau = nu.exposure().expect("gamma-from-count has an exposure");
            let m = count.or(nu.nominal_count()).unwrap_or(0) as f64;
            (m / value - tau, -m / (value * value))
        }
        SubsidiaryForm::TruncatedGaussian => {
            let var = nu.sigma() * nu.sigma();
            (-(value - nu.mean) / var, -1.0 / var)
        }
    }
}

struct Inner<'a> {
    model: &'a CountingModel,
    obs: &'a Observation,
    s: f64,
    free_b: bool,
    free_eff: bool,
}

impl Inner<'_> {
    fn value(&self, u: f64, b: f64) -> f64 {
        let nu = NuisanceValues { b, eff: u.exp() };
        log_likelihood(self.model, self.obs, self.s, nu).unwrap_or(f64::NEG_INFINITY)
    }

    /// Gradient and Hessian in `(ln eff, b)`.
    fn derivs(&self, u: f64, b: f64) -> ([f64; 2], [[f64; 2]; 2]) {
        let eff = u.exp();
        let (n, s) = (self.obs.n as f64, self.s);
        let mu = eff * s + b;
        let (r, r2) = if mu > 0.0 {
            (n / mu, n / (mu * mu))
        } else {
            (f64::INFINITY, f64::INFINITY)
        };
        let (de, dde) = subsidiary_derivs(self.model.efficiency(), self.obs.counts.efficiency, eff);
        let (db, ddb) = subsidiary_derivs(self.model.background(), self.obs.counts.background, b);
        let g_eff = s * (r - 1.0) + de;
        let h_eff = -s * s * r2 + dde;
        let g_b = (r - 1.0) + db;
        let h_b = -r2 + ddb;
        let h_eb = -s * r2;
        let g = [eff * g_eff, g_b];
        let h = [
            [eff * eff * h_eff + eff * g_eff, eff * h_eb],
            [eff * h_eb, h_b],
        ];
        (g, h)
    }

    /// Projected gradient norm: components pushing into an active bound are dropped.
    fn pgrad(&self, g: [f64; 2], u: f64, b: f64, u_min: f64) -> f64 {
        let gu = if !self.free_eff || (u <= u_min && g[0] < 0.0) {
            0.0
        } else {
            g[0]
        };
        let gb = if !self.free_b || (b <= 0.0 && g[1] < 0.0) {
            0.0
        } else {
            g[1]
        };
        gu.abs().max(gb.abs())
    }

    fn maximize(&self, start: NuisanceValues) -> Option<(f64, NuisanceValues)> {
        let u_min = (EFF_FLOOR * self.model.eff_mean()).ln();
        let (mut u, mut b) = (
            start.eff.max(EFF_FLOOR * self.model.eff_mean()).ln(),
            start.b.max(0.0),
        );
        let mut f = self.value(u, b);
        if !f.is_finite() {
            return None;
        }
        for _ in 0..MAX_NEWTON {
            let (g, h) = self.derivs(u, b);
            if self.pgrad(g, u, b, u_min) < GRAD_TOL * (1.0 + f.abs()).min(1e3) {
                return Some((f, NuisanceValues { b, eff: u.exp() }));
            }
            let mut g = g;
            if !self.free_eff {
                g[0] = 0.0;
            }
            if !self.free_b {
                g[1] = 0.0;
            }
            // Newton step on the free block, gradient step when the Hessian is not negative definite
            let step = match (self.free_eff, self.free_b) {
                (true, true) => {
                    let det = h[0][0] * h[1][1] - h[0][1] * h[1][0];
                    if h[0][0] < 0.0 && det > 0.0 {
                        [
                            -(h[1][1] * g[0] - h[0][1] * g[1]) / det,
                            -(-h[1][0] * g[0] + h[0][0] * g[1]) / det,
                        ]
                    } else {
                        [g[0] / (h[0][0].abs() + 1.0), g[1] / (h[1][1].abs() + 1.0)]
                    }
                }
                (true, false) => [
                    if h[0][0] < 0.0 {
                        -g[0] / h[0][0]
                    } else {
                        g[0] / (h[0][0].abs() + 1.0)
                    },
                    0.0,
                ],
                (false, true) => [
                    0.0,
                    if h[1][1] < 0.0 {
                        -g[1] / h[1][1]
                    } else {
                        g[1] / (h[1][1].abs() + 1.0)
                    },
                ],
                (false, false) => return Some((f, NuisanceValues { b, eff: u.exp() })),
            };
            let mut t = 1.0;
            let mut moved = false;
            for _ in 0..60 {
                let nu_ = (u + t * step[0]).max(u_min);
                let nb = (b + t * step[1]).max(0.0);
                let nf = self.value(nu_, nb);
                if nf >= f {
                    moved = nf > f || (nu_ != u || nb != b);
                    u = nu_;
                    b = nb;
                    f = nf;
                    break;
                }
                t *= 0.5;
            }
            if !moved {
                return Some((f, NuisanceValues { b, eff: u.exp() }));
            }
        }
        None
    }
}

/// Profiled log-likelihood at `s` together with the conditional nuisance estimates.
pub fn profiled(model: &CountingModel, obs: &Observation, s: f64) -> Result<(f64, NuisanceValues)> {
    if !(s >= 0.0 && s.is_finite()) {
        return Err(domain(format!("signal must be finite and >= 0, got {s}")));
    }
    let inner = Inner {
        model,
        obs,
        s,
        free_b: !model.background().is_exact(),
        free_eff: !model.efficiency().is_exact(),
    };
    if !inner.free_b && !inner.free_eff {
        let nu = model.nominal();
        return Ok((log_likelihood(model, obs, s, nu)?, nu));
    }
    let est = model.estimates(obs);
    let starts = [
        est,
        model.nominal(),
        NuisanceValues {
            b: 0.5 * est.b + 0.5,
            eff: est.eff,
        },
        NuisanceValues {
            b: est.b,
            eff: 0.5 * est.eff,
        },
    ];
    let mut failures = 0;
    for start in starts {
        match inner.maximize(start) {
            Some(best) => return Ok(best),
            None => failures += 1,
        }
    }
    Err(Error::NoConvergence {
        s,
        reason: format!("inner maximization failed from {failures} starting points"),
    })
}

/// Maximize a unimodal function on `[lo, hi]` by golden-section search.
fn golden_max(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = hi - r * (hi - lo);
    let mut x2 = lo + r * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while hi - lo > tol * (1.0 + lo.abs()) {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + r * (hi - lo);
            f2 = f(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - r * (hi - lo);
            f1 = f(x1);
        }
    }
    0.5 * (lo + hi)
}

/// Profile the likelihood over the nuisance parameters on `s_grid`.
pub fn profile(model: &CountingModel, obs: &Observation, s_grid: &[f64]) -> Result<ProfileCurve> {
    if s_grid.is_empty() || s_grid.windows(2).any(|w| w[1] <= w[0]) || s_grid[0] < 0.0 {
        return Err(domain(
            "profile grid must be non-empty, non-negative and strictly ascending",
        ));
    }
    let points: Vec<(f64, NuisanceValues)> = s_grid
        .par_iter()
        .map(|&s| profiled(model, obs, s))
        .collect::<Result<_>>()?;
    let (k, _) = points
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, p)| {
            if p.0 > acc.1 {
                (i, p.0)
            } else {
                acc
            }
        });
    let lo = if k == 0 { s_grid[0] } else { s_grid[k - 1] };
    let hi = if k + 1 == s_grid.len() {
        s_grid[k]
    } else {
        s_grid[k + 1]
    };
    let at = |s: f64| {
        profiled(model, obs, s)
            .map(|p| p.0)
            .unwrap_or(f64::NEG_INFINITY)
    };
    let mut s_hat = golden_max(at, lo, hi, 1e-12);
    let mut ln_l_max = at(s_hat);
    if points[k].0 > ln_l_max {
        s_hat = s_grid[k];
        ln_l_max = points[k].0;
    }
    if s_grid[0] == 0.0 && lo == 0.0 && at(0.0) >= ln_l_max {
        s_hat = 0.0;
        ln_l_max = at(0.0);
    }
    Ok(ProfileCurve {
        s_grid: s_grid.to_vec(),
        ln_l_prof: points.iter().map(|p| p.0).collect(),
        nuisance_hat: points.iter().map(|p| p.1).collect(),
        s_hat,
        ln_l_max,
        model: *model,
        obs: *obs,
    })
}

/// Signal grid spanning the likely region for an observation.
pub fn default_grid(model: &CountingModel, obs: &Observation) -> Vec<f64> {
    let n = obs.n as f64;
    let top =
        (n + 10.0 * n.sqrt() + 10.0) / model.eff_mean().min(model.estimates(obs).eff).max(1e-3);
    let points = 400;
    (0..=points)
        .map(|k| top * k as f64 / points as f64)
        .collect()
}

/// `{s : ln L_prof(s) >= ln L_max - delta}`, endpoints by bisection. A point
/// exactly at the threshold is inside. `cl_equiv` is carried as a label.
pub fn delta_ln_l_interval(
    curve: &ProfileCurve,
    delta: f64,
    cl_equiv: f64,
) -> Result<IntervalResult> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(domain(format!("delta must be > 0, got {delta}")));
    }
    let threshold = curve.ln_l_max - delta;
    let inside = |s: f64| -> Result<bool> { Ok(curve.at(s)? >= threshold) };
    let bisect = |mut a_in: f64, mut b_out: f64| -> Result<f64> {
        while (b_out - a_in).abs() > ENDPOINT_TOL * (1.0 + a_in.abs()) {
            let mid = 0.5 * (a_in + b_out);
            if inside(mid)? {
                a_in = mid;
            } else {
                b_out = mid;
            }
        }
        Ok(a_in)
    };
    let s_hat = curve.s_hat;
    // upper crossing: first grid point past s_hat that falls below threshold, else extend twice
    let mut out = curve
        .s_grid
        .iter()
        .zip(&curve.ln_l_prof)
        .find(|(&s, &l)| s > s_hat && l < threshold)
        .map(|p| *p.0);
    let mut reach = curve
        .s_grid
        .last()
        .copied()
        .unwrap_or(0.0)
        .max(s_hat)
        .max(1.0);
    for _ in 0..2 {
        if out.is_some() {
            break;
        }
        reach *= 2.0;
        if !inside(reach)? {
            out = Some(reach);
        }
    }
    let Some(out) = out else {
        return Err(Error::CrossingNotFound(format!(
            "ln L stays above ln L_max - {delta} up to s = {reach}"
        )));
    };
    let last_in = curve
        .s_grid
        .iter()
        .zip(&curve.ln_l_prof)
        .filter(|(&s, &l)| s >= s_hat && s < out && l >= threshold)
        .map(|p| *p.0)
        .fold(s_hat, f64::max);
    let upper = bisect(last_in, out)?;
    let lower = if inside(0.0)? {
        0.0
    } else {
        let first_in = curve
            .s_grid
            .iter()
            .zip(&curve.ln_l_prof)
            .filter(|(&s, &l)| s <= s_hat && l >= threshold)
            .map(|p| *p.0)
            .fold(s_hat, f64::min);
        let last_out = curve
            .s_grid
            .iter()
            .zip(&curve.ln_l_prof)
            .filter(|(&s, &l)| s < first_in && l < threshold)
            .map(|p| *p.0)
            .fold(0.0, f64::max);
        bisect(first_in, last_out)?
    };
    Ok(IntervalResult::new(
        lower,
        upper.max(lower),
        cl_equiv,
        IntervalMethod::Profile,
    ))
}

/// Profile the default grid and apply the `Δ ln L` rule in one call.
pub fn profile_interval(
    model: &CountingModel,
    obs: &Observation,
    delta: f64,
    cl_equiv: f64,
) -> Result<IntervalResult> {
    let curve = profile(model, obs, &default_grid(model, obs))?;
    delta_ln_l_interval(&curve, delta, cl_equiv)
}

/// Exact coverage of the `Δ ln L` rule for a Poisson mean `mu_true` with no
/// background and unit efficiency, summed over `n` until the remaining tail
/// is below `1e-13`.
pub fn exact_coverage(mu_true: f64, delta: f64) -> Result<f64> {
    if !(mu_true >= 0.0 && mu_true.is_finite()) {
        return Err(domain(format!(
            "true mean must be finite and >= 0, got {mu_true}"
        )));
    }
    let model = CountingModel::exact(0.0, 1.0)?;
    let mut covered = 0.0;
    let mut seen = 0.0;
    let mut n = 0;
    while 1.0 - seen > 1e-13 && (n as f64) < mu_true + 50.0 * mu_true.sqrt() + 50.0 {
        let p = crate::poisson::ln_pmf(n, mu_true).exp();
        let obs = Observation::nominal(&model, n);
        let curve = profile(
            &model,
            &obs,
            &[
                0.0,
                n as f64 + 1.0,
                2.0 * n as f64 + 10.0 * (n as f64).sqrt() + 10.0,
            ],
        )?;
        if delta_ln_l_interval(&curve, delta, 0.68)?.contains(mu_true) {
            covered += p;
        }
        seen += p;
        n += 1;
    }
    Ok(covered)
}
