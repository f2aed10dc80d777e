//! Goodness of fit: binned chi-square, chi-square differences under Wilks
//! asymptotics or a Monte Carlo null, effective degrees of freedom, and the
//! two-sample energy test.

use rand::seq::SliceRandom;
use rand::RngExt;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::rng::{self, family};
use crate::special::{chi2_sf, normal_cdf, normal_pdf, p_to_sigma_two_sided};

const SQRT_2PI: f64 = 2.506_628_274_631_000_7;

/// Below this prediction the Gaussian approximation behind chi-square is poor.
pub const LOW_PREDICTION: f64 = 5.0;
pub const DEFAULT_RESTARTS: usize = 5;
/// Allowed negative chi-square difference before a refit is forced.
pub const DELTA_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinnedData {
    pub edges: Vec<f64>,
    pub counts: Vec<f64>,
    /// Replaces the predicted mean as the per-bin variance.
    pub variance: Option<Vec<f64>>,
}

impl BinnedData {
    pub fn new(edges: Vec<f64>, counts: Vec<f64>, variance: Option<Vec<f64>>) -> Result<Self> {
        if edges.len() < 2
            || edges.windows(2).any(|w| !(w[1] > w[0]))
            || edges.iter().any(|e| !e.is_finite())
        {
            return Err(domain("bin edges must be finite and strictly ascending"));
        }
        if counts.len() + 1 != edges.len() {
            return Err(domain(format!(
                "{} edges need {} counts, got {}",
                edges.len(),
                edges.len() - 1,
                counts.len()
            )));
        }
        if let Some((i, c)) = counts
            .iter()
            .enumerate()
            .find(|(_, c)| !(**c >= 0.0 && c.is_finite()))
        {
            return Err(domain(format!("count {c} in bin {i} must be non-negative")));
        }
        if let Some(v) = &variance {
            if v.len() != counts.len() || v.iter().any(|x| !(*x > 0.0)) {
                return Err(domain("variance override needs one positive entry per bin"));
            }
        }
        Ok(BinnedData {
            edges,
            counts,
            variance,
        })
    }

    /// Equal-width bins on `[lo, hi]`.
    pub fn uniform_edges(lo: f64, hi: f64, bins: usize) -> Vec<f64> {
        (0..=bins)
            .map(|i| lo + (hi - lo) * i as f64 / bins as f64)
            .collect()
    }

    pub fn n_bins(&self) -> usize {
        self.counts.len()
    }

    fn with_counts(&self, counts: Vec<f64>) -> BinnedData {
        BinnedData {
            edges: self.edges.clone(),
            counts,
            variance: self.variance.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chi2Result {
    pub s: f64,
    pub ndof: usize,
    pub p: f64,
    /// Some prediction is below [`LOW_PREDICTION`].
    pub low_prediction: bool,
}

fn chi2_sum(data: &BinnedData, prediction: &[f64]) -> f64 {
    let mut s = 0.0;
    for (i, (o, e)) in data.counts.iter().zip(prediction).enumerate() {
        if !(*e > 0.0) {
            return f64::INFINITY;
        }
        let var = data.variance.as_ref().map_or(*e, |v| v[i]);
        s += (o - e) * (o - e) / var;
    }
    s
}

/// `S = Σ (obs - pred)² / var` with `var = pred` unless overridden.
pub fn chi2_binned(data: &BinnedData, prediction: &[f64], n_fitted: usize) -> Result<Chi2Result> {
    if prediction.len() != data.n_bins() {
        return Err(domain(format!(
            "{} predictions for {} bins",
            prediction.len(),
            data.n_bins()
        )));
    }
    if let Some((i, e)) = prediction.iter().enumerate().find(|(_, e)| !(**e > 0.0)) {
        return Err(domain(format!(
            "prediction {e} in bin {i} must be positive"
        )));
    }
    if n_fitted >= data.n_bins() {
        return Err(domain(format!(
            "{n_fitted} fitted parameters leave no degrees of freedom in {} bins",
            data.n_bins()
        )));
    }
    let s = chi2_sum(data, prediction);
    let ndof = data.n_bins() - n_fitted;
    Ok(Chi2Result {
        s,
        ndof,
        p: chi2_sf(s, ndof as f64),
        low_prediction: prediction.iter().any(|e| *e < LOW_PREDICTION),
    })
}

/// A parametric prediction for binned data.
pub trait BinnedModel: Sync {
    fn n_params(&self) -> usize;
    /// Hard limits on each parameter; may be infinite.
    fn bounds(&self, data: &BinnedData) -> Vec<(f64, f64)>;
    fn start(&self, data: &BinnedData) -> Vec<f64>;
    /// Finite box from which random restarts are drawn.
    fn restart_box(&self, data: &BinnedData) -> Vec<(f64, f64)>;
    /// Expected count in each bin.
    fn predict(&self, params: &[f64], edges: &[f64]) -> Vec<f64>;
    /// A point of this model reproducing a fit of the restricted model it
    /// nests, used as an extra starting point.
    fn embed(&self, _restricted: &[f64]) -> Option<Vec<f64>> {
        None
    }
    /// `∂ prediction_i / ∂ param_j`, when available in closed form.
    fn jacobian(&self, _params: &[f64], _edges: &[f64]) -> Option<Vec<Vec<f64>>> {
        None
    }
}

/// `Σ c_k t^k` per unit x, with `t` mapped to `[-1, 1]` over `range`,
/// integrated exactly over each bin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Polynomial {
    pub degree: usize,
    pub range: (f64, f64),
}

impl Polynomial {
    pub fn new(degree: usize, edges: &[f64]) -> Self {
        Polynomial {
            degree,
            range: (edges[0], edges[edges.len() - 1]),
        }
    }

    fn integral(&self, c: &[f64], lo: f64, hi: f64) -> f64 {
        let (mid, half) = (
            0.5 * (self.range.0 + self.range.1),
            0.5 * (self.range.1 - self.range.0),
        );
        let (tl, th) = ((lo - mid) / half, (hi - mid) / half);
        let (mut pl, mut ph, mut sum) = (tl, th, 0.0);
        for (k, ck) in c.iter().enumerate() {
            sum += ck * (ph - pl) / (k + 1) as f64;
            pl *= tl;
            ph *= th;
        }
        sum * half
    }

    fn basis(&self, lo: f64, hi: f64) -> Vec<f64> {
        let (mid, half) = (
            0.5 * (self.range.0 + self.range.1),
            0.5 * (self.range.1 - self.range.0),
        );
        let (tl, th) = ((lo - mid) / half, (hi - mid) / half);
        let (mut pl, mut ph) = (tl, th);
        (0..=self.degree)
            .map(|k| {
                let v = half * (ph - pl) / (k + 1) as f64;
                pl *= tl;
                ph *= th;
                v
            })
            .collect()
    }

    fn mean_density(data: &BinnedData) -> f64 {
        let width = data.edges[data.n_bins()] - data.edges[0];
        (data.counts.iter().sum::<f64>() / width).max(1e-3)
    }
}

impl BinnedModel for Polynomial {
    fn n_params(&self) -> usize {
        self.degree + 1
    }

    fn bounds(&self, _: &BinnedData) -> Vec<(f64, f64)> {
        vec![(f64::NEG_INFINITY, f64::INFINITY); self.degree + 1]
    }

    fn start(&self, data: &BinnedData) -> Vec<f64> {
        let mut c = vec![0.0; self.degree + 1];
        c[0] = Self::mean_density(data);
        c
    }

    fn restart_box(&self, data: &BinnedData) -> Vec<(f64, f64)> {
        let d = Self::mean_density(data);
        (0..=self.degree)
            .map(|k| {
                if k == 0 {
                    (0.5 * d, 1.5 * d)
                } else {
                    (-0.3 * d, 0.3 * d)
                }
            })
            .collect()
    }

    fn predict(&self, c: &[f64], edges: &[f64]) -> Vec<f64> {
        edges
            .windows(2)
            .map(|w| self.integral(c, w[0], w[1]))
            .collect()
    }

    fn jacobian(&self, _: &[f64], edges: &[f64]) -> Option<Vec<Vec<f64>>> {
        Some(edges.windows(2).map(|w| self.basis(w[0], w[1])).collect())
    }

    fn embed(&self, restricted: &[f64]) -> Option<Vec<f64>> {
        (restricted.len() <= self.degree + 1).then(|| {
            let mut c = restricted.to_vec();
            c.resize(self.degree + 1, 0.0);
            c
        })
    }
}

/// Polynomial background plus `A exp(-(x - x0)² / 2σ²)`; parameters are the
/// background coefficients followed by `A, x0, σ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakModel {
    pub background: Polynomial,
    /// Lets `A` go negative, which moves it off the boundary and changes
    /// the null distribution of the chi-square difference.
    pub allow_negative_amplitude: bool,
    pub sigma_range: (f64, f64),
}

impl PeakModel {
    /// Width limits from the narrowest bin to a quarter of the range.
    pub fn new(background_degree: usize, edges: &[f64]) -> Self {
        let min_width = edges
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::INFINITY, f64::min);
        let span = edges[edges.len() - 1] - edges[0];
        PeakModel {
            background: Polynomial::new(background_degree, edges),
            allow_negative_amplitude: false,
            sigma_range: (min_width, 0.25 * span),
        }
    }
}

impl BinnedModel for PeakModel {
    fn n_params(&self) -> usize {
        self.background.n_params() + 3
    }

    fn bounds(&self, data: &BinnedData) -> Vec<(f64, f64)> {
        let mut b = self.background.bounds(data);
        let a_lo = if self.allow_negative_amplitude {
            f64::NEG_INFINITY
        } else {
            0.0
        };
        b.extend([
            (a_lo, f64::INFINITY),
            self.background.range,
            self.sigma_range,
        ]);
        b
    }

    fn start(&self, data: &BinnedData) -> Vec<f64> {
        let mut p = self.background.start(data);
        let (lo, hi) = self.background.range;
        p.extend([
            0.0,
            0.5 * (lo + hi),
            (self.sigma_range.0 * self.sigma_range.1).sqrt(),
        ]);
        p
    }

    fn restart_box(&self, data: &BinnedData) -> Vec<(f64, f64)> {
        let mut b = self.background.restart_box(data);
        let d = Polynomial::mean_density(data);
        let a_lo = if self.allow_negative_amplitude {
            -0.3 * d
        } else {
            0.0
        };
        b.extend([(a_lo, 0.3 * d), self.background.range, self.sigma_range]);
        b
    }

    fn predict(&self, p: &[f64], edges: &[f64]) -> Vec<f64> {
        let k = self.background.n_params();
        let (a, x0, sigma) = (p[k], p[k + 1], p[k + 2]);
        let norm = a * sigma * SQRT_2PI;
        let cdf: Vec<f64> = edges.iter().map(|e| normal_cdf((e - x0) / sigma)).collect();
        edges
            .windows(2)
            .zip(cdf.windows(2))
            .map(|(w, c)| self.background.integral(&p[..k], w[0], w[1]) + norm * (c[1] - c[0]))
            .collect()
    }

    fn jacobian(&self, p: &[f64], edges: &[f64]) -> Option<Vec<Vec<f64>>> {
        let k = self.background.n_params();
        let (a, x0, sigma) = (p[k], p[k + 1], p[k + 2]);
        let u: Vec<f64> = edges.iter().map(|e| (e - x0) / sigma).collect();
        let cdf: Vec<f64> = u.iter().map(|v| normal_cdf(*v)).collect();
        let pdf: Vec<f64> = u.iter().map(|v| normal_pdf(*v)).collect();
        Some(
            (0..edges.len() - 1)
                .map(|i| {
                    let mut row = self.background.basis(edges[i], edges[i + 1]);
                    let mass = cdf[i + 1] - cdf[i];
                    row.push(sigma * SQRT_2PI * mass);
                    row.push(a * SQRT_2PI * (pdf[i] - pdf[i + 1]));
                    row.push(a * SQRT_2PI * (mass - (u[i + 1] * pdf[i + 1] - u[i] * pdf[i])));
                    row
                })
                .collect(),
        )
    }

    fn embed(&self, restricted: &[f64]) -> Option<Vec<f64>> {
        if restricted.len() != self.background.n_params() {
            return None;
        }
        let (lo, hi) = self.background.range;
        let mut p = restricted.to_vec();
        p.extend([
            0.0,
            0.5 * (lo + hi),
            (self.sigma_range.0 * self.sigma_range.1).sqrt(),
        ]);
        Some(p)
    }
}

/// `N (1 + δ cos(x - x0))` per bin, evaluated at bin centres; parameters `N, x0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CosineModel {
    pub delta: f64,
}

impl BinnedModel for CosineModel {
    fn n_params(&self) -> usize {
        2
    }

    fn bounds(&self, _: &BinnedData) -> Vec<(f64, f64)> {
        vec![(0.0, f64::INFINITY), (0.0, 2.0 * std::f64::consts::PI)]
    }

    fn start(&self, data: &BinnedData) -> Vec<f64> {
        vec![
            data.counts.iter().sum::<f64>() / data.n_bins() as f64,
            std::f64::consts::PI,
        ]
    }

    fn restart_box(&self, data: &BinnedData) -> Vec<(f64, f64)> {
        let n = self.start(data)[0];
        vec![(0.8 * n, 1.2 * n), (0.0, 2.0 * std::f64::consts::PI)]
    }

    fn predict(&self, p: &[f64], edges: &[f64]) -> Vec<f64> {
        edges
            .windows(2)
            .map(|w| p[0] * (1.0 + self.delta * (0.5 * (w[0] + w[1]) - p[1]).cos()))
            .collect()
    }

    fn jacobian(&self, p: &[f64], edges: &[f64]) -> Option<Vec<Vec<f64>>> {
        Some(
            edges
                .windows(2)
                .map(|w| {
                    let phase = 0.5 * (w[0] + w[1]) - p[1];
                    vec![
                        1.0 + self.delta * phase.cos(),
                        p[0] * self.delta * phase.sin(),
                    ]
                })
                .collect(),
        )
    }
}

/// Disappearance `flux_i (1 - A sin²(Δm² L/E_i))` with bins in `L/E`;
/// parameters `A, Δm²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OscillationModel {
    pub flux: Vec<f64>,
    pub dm2_max: f64,
}

impl BinnedModel for OscillationModel {
    fn n_params(&self) -> usize {
        2
    }

    fn bounds(&self, _: &BinnedData) -> Vec<(f64, f64)> {
        vec![(0.0, 1.0), (0.0, self.dm2_max)]
    }

    fn start(&self, _: &BinnedData) -> Vec<f64> {
        vec![0.5, 0.5 * self.dm2_max]
    }

    fn restart_box(&self, data: &BinnedData) -> Vec<(f64, f64)> {
        self.bounds(data)
    }

    fn predict(&self, p: &[f64], edges: &[f64]) -> Vec<f64> {
        edges
            .windows(2)
            .zip(&self.flux)
            .map(|(w, f)| f * (1.0 - p[0] * (p[1] * 0.5 * (w[0] + w[1])).sin().powi(2)))
            .collect()
    }

    fn jacobian(&self, p: &[f64], edges: &[f64]) -> Option<Vec<Vec<f64>>> {
        Some(
            edges
                .windows(2)
                .zip(&self.flux)
                .map(|(w, f)| {
                    let le = 0.5 * (w[0] + w[1]);
                    let phase = p[1] * le;
                    vec![
                        -f * phase.sin().powi(2),
                        -f * p[0] * le * (2.0 * phase).sin(),
                    ]
                })
                .collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fit {
    pub params: Vec<f64>,
    pub chi2: f64,
    pub converged: bool,
}

/// Minimum-chi-square fit with a projected quasi-Newton minimizer started
/// from the model's start point, `extra` points, and `restarts` random
/// points of the restart box.
pub fn fit<M: BinnedModel + ?Sized>(
    model: &M,
    data: &BinnedData,
    restarts: usize,
    seed: u64,
) -> Result<Fit> {
    fit_with(model, data, &[], restarts, seed, family::FIT_RESTARTS)
}

fn fit_with<M: BinnedModel + ?Sized>(
    model: &M,
    data: &BinnedData,
    extra: &[Vec<f64>],
    restarts: usize,
    seed: u64,
    fam: u64,
) -> Result<Fit> {
    let bounds = model.bounds(data);
    let objective = |p: &[f64]| chi2_sum(data, &model.predict(p, &data.edges));
    let grad = |p: &[f64], fx: f64| match model.jacobian(p, &data.edges) {
        Some(jac) => chi2_gradient(data, &model.predict(p, &data.edges), &jac),
        None => gradient(&objective, p, fx, &bounds),
    };
    let mut starts = vec![model.start(data)];
    starts.extend(extra.iter().cloned());
    let boxes = model.restart_box(data);
    for r in 0..restarts as u64 {
        let mut g = rng::stream(seed, fam, r);
        starts.push(
            boxes
                .iter()
                .map(|(lo, hi)| lo + (hi - lo) * g.random::<f64>())
                .collect(),
        );
    }
    let mut best: Option<Fit> = None;
    for s in starts {
        let (params, chi2, converged) = minimize(&objective, &grad, s, &bounds);
        if chi2.is_finite() && best.as_ref().is_none_or(|b| chi2 < b.chi2) {
            best = Some(Fit {
                params,
                chi2,
                converged,
            });
        }
    }
    best.ok_or_else(|| Error::FitFailure("no starting point gave a finite chi-square".into()))
}

fn chi2_gradient(data: &BinnedData, pred: &[f64], jac: &[Vec<f64>]) -> Vec<f64> {
    let mut g = vec![0.0; jac.first().map_or(0, |r| r.len())];
    for (i, ((o, e), row)) in data.counts.iter().zip(pred).zip(jac).enumerate() {
        let w = match &data.variance {
            Some(v) => -2.0 * (o - e) / v[i],
            None => -(o - e) * (o + e) / (e * e),
        };
        for (gj, dj) in g.iter_mut().zip(row) {
            *gj += w * dj;
        }
    }
    g
}

fn clamp(x: &mut [f64], bounds: &[(f64, f64)]) {
    for (v, (lo, hi)) in x.iter_mut().zip(bounds) {
        *v = v.clamp(*lo, *hi);
    }
}

fn gradient(f: &impl Fn(&[f64]) -> f64, x: &[f64], fx: f64, bounds: &[(f64, f64)]) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        let h = 1e-6 * x[i].abs().max(1.0);
        let (lo, hi) = bounds[i];
        let up = (x[i] + h).min(hi);
        let down = (x[i] - h).max(lo);
        probe[i] = up;
        let fu = f(&probe);
        probe[i] = down;
        let fd = f(&probe);
        probe[i] = x[i];
        g[i] = match (fu.is_finite(), fd.is_finite()) {
            (true, true) if up > down => (fu - fd) / (up - down),
            (true, _) if up > x[i] => (fu - fx) / (up - x[i]),
            (_, true) if down < x[i] => (fx - fd) / (x[i] - down),
            _ => 0.0,
        };
    }
    g
}

/// Projected BFGS with an active set for bound constraints and Armijo
/// backtracking. Returns the point, its value and whether the projected
/// gradient vanished.
fn minimize(
    f: &impl Fn(&[f64]) -> f64,
    grad: &impl Fn(&[f64], f64) -> Vec<f64>,
    mut x: Vec<f64>,
    bounds: &[(f64, f64)],
) -> (Vec<f64>, f64, bool) {
    let n = x.len();
    clamp(&mut x, bounds);
    let mut fx = f(&x);
    if !fx.is_finite() {
        return (x, fx, false);
    }
    let mut g = grad(&x, fx);
    let mut h = identity(n);
    let mut fresh = true;
    let mut active = vec![false; n];
    for _ in 0..1000 {
        let free: Vec<bool> = (0..n)
            .map(|i| !((x[i] <= bounds[i].0 && g[i] > 0.0) || (x[i] >= bounds[i].1 && g[i] < 0.0)))
            .collect();
        if free.iter().zip(&active).any(|(f, a)| *f == *a) {
            h = identity(n);
            fresh = true;
            active = free.iter().map(|f| !f).collect();
        }
        let pg = (0..n)
            .filter(|&i| free[i])
            .map(|i| g[i].abs() * x[i].abs().max(1.0))
            .fold(0.0, f64::max);
        if pg < 1e-7 * (1.0 + fx.abs()) {
            return (x, fx, true);
        }
        let mut d: Vec<f64> = (0..n)
            .map(|i| {
                if free[i] {
                    -(0..n)
                        .filter(|&j| free[j])
                        .map(|j| h[i][j] * g[j])
                        .sum::<f64>()
                } else {
                    0.0
                }
            })
            .collect();
        if d.iter().zip(&g).map(|(a, b)| a * b).sum::<f64>() >= 0.0 {
            h = identity(n);
            d = (0..n).map(|i| if free[i] { -g[i] } else { 0.0 }).collect();
        }
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let mut xn: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + t * b).collect();
            clamp(&mut xn, bounds);
            let step: f64 = xn
                .iter()
                .zip(&x)
                .zip(&g)
                .map(|((a, b), c)| (a - b) * c)
                .sum();
            let fnew = f(&xn);
            if fnew.is_finite() && fnew <= fx + 1e-4 * step.min(0.0) && fnew <= fx {
                accepted = Some((xn, fnew));
                break;
            }
            t *= 0.5;
        }
        let Some((xn, fnew)) = accepted else {
            if fresh {
                return (x, fx, false);
            }
            h = identity(n);
            fresh = true;
            continue;
        };
        let gn = grad(&xn, fnew);
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        let yy: f64 = y.iter().map(|v| v * v).sum();
        let stalled = fx - fnew <= 1e-14 * (1.0 + fx.abs())
            && s.iter()
                .zip(&xn)
                .all(|(a, b)| a.abs() <= 1e-12 * b.abs().max(1.0));
        x = xn;
        fx = fnew;
        g = gn;
        if stalled {
            return (x, fx, false);
        }
        if sy > 1e-12 * yy.sqrt() * s.iter().map(|v| v * v).sum::<f64>().sqrt() {
            if fresh {
                let scale = sy / yy;
                h = identity(n)
                    .into_iter()
                    .map(|r| r.into_iter().map(|v| v * scale).collect())
                    .collect();
            }
            bfgs_update(&mut h, &s, &y, sy);
            fresh = false;
        }
    }
    (x, fx, false)
}

fn identity(n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| (0..n).map(|j| (i == j) as u8 as f64).collect())
        .collect()
}

fn bfgs_update(h: &mut [Vec<f64>], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let hy: Vec<f64> = (0..n)
        .map(|i| (0..n).map(|j| h[i][j] * y[j]).sum())
        .collect();
    let yhy: f64 = y.iter().zip(&hy).map(|(a, b)| a * b).sum();
    let rho = 1.0 / sy;
    for i in 0..n {
        for j in 0..n {
            h[i][j] += rho * ((1.0 + rho * yhy) * s[i] * s[j] - hy[i] * s[j] - s[i] * hy[j]);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "regime")]
pub enum NullRegime {
    /// `Δχ² ~ χ²_k` for nested models with interior, identified extra parameters.
    Wilks,
    /// Empirical distribution from toys drawn at the restricted fit.
    McNull { n_toys: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaChi2Result {
    pub chi2_restricted: f64,
    pub chi2_extended: f64,
    pub delta: f64,
    pub k_extra: usize,
    pub p: f64,
    /// Two-sided Gaussian equivalent, equal to `sqrt(Δχ²)` for one extra parameter.
    pub sigma: f64,
    /// Toy values of `Δχ²` under the null, empty in the Wilks regime.
    pub null_samples: Vec<f64>,
}

/// The asymptotic verdict from two chi-square values already in hand.
pub fn delta_chi2_from_values(
    chi2_restricted: f64,
    chi2_extended: f64,
    k_extra: usize,
) -> Result<DeltaChi2Result> {
    if k_extra == 0 {
        return Err(domain("at least one extra parameter is needed"));
    }
    let delta = chi2_restricted - chi2_extended;
    if delta < -DELTA_TOL {
        return Err(domain(format!("chi-square of the restricted hypothesis ({chi2_restricted}) is below the extended one ({chi2_extended})")));
    }
    let delta = delta.max(0.0);
    let p = chi2_sf(delta, k_extra as f64);
    Ok(DeltaChi2Result {
        chi2_restricted,
        chi2_extended,
        delta,
        k_extra,
        p,
        sigma: p_to_sigma_two_sided(p)?,
        null_samples: Vec::new(),
    })
}

fn fit_pair<M0: BinnedModel, M1: BinnedModel>(
    data: &BinnedData,
    m0: &M0,
    m1: &M1,
    seed: u64,
    fam: u64,
) -> Result<(Fit, Fit)> {
    let f0 = fit_with(m0, data, &[], DEFAULT_RESTARTS, seed, fam)?;
    let extra: Vec<Vec<f64>> = m1.embed(&f0.params).into_iter().collect();
    let mut f1 = fit_with(m1, data, &extra, DEFAULT_RESTARTS, seed, fam)?;
    if f0.chi2 - f1.chi2 < -DELTA_TOL {
        f1 = fit_with(
            m1,
            data,
            &extra,
            4 * DEFAULT_RESTARTS,
            seed ^ 0x5DEE_CE66,
            fam,
        )?;
        if f0.chi2 - f1.chi2 < -DELTA_TOL {
            return Err(Error::FitFailure(format!(
                "extended fit chi-square {} exceeds restricted {} after restarts",
                f1.chi2, f0.chi2
            )));
        }
    }
    Ok((f0, f1))
}

/// Compare a restricted model with an extended one on the same data.
pub fn chi2_difference<M0: BinnedModel, M1: BinnedModel>(
    data: &BinnedData,
    restricted: &M0,
    extended: &M1,
    k_extra: usize,
    regime: NullRegime,
) -> Result<DeltaChi2Result> {
    let (f0, f1) = fit_pair(data, restricted, extended, 0, family::FIT_RESTARTS)?;
    let mut r = delta_chi2_from_values(f0.chi2, f1.chi2.min(f0.chi2), k_extra)?;
    if let NullRegime::McNull { n_toys, seed } = regime {
        if n_toys == 0 {
            return Err(Error::Insufficient("Monte Carlo null needs toys".into()));
        }
        let truth = restricted.predict(&f0.params, &data.edges);
        let samples: Vec<f64> = (0..n_toys as u64)
            .into_par_iter()
            .map(|i| {
                let mut g = rng::stream(seed, family::GOF_TOYS, i);
                let toy = data.with_counts(
                    truth
                        .iter()
                        .map(|m| rng::poisson(&mut g, *m) as f64)
                        .collect(),
                );
                let (a, b) = fit_pair(
                    &toy,
                    restricted,
                    extended,
                    seed,
                    rng::subfamily(family::FIT_RESTARTS, i),
                )?;
                Ok((a.chi2 - b.chi2).max(0.0))
            })
            .collect::<Result<_>>()?;
        let tail = samples.iter().filter(|d| **d >= r.delta).count();
        r.p = (tail + 1) as f64 / (n_toys + 1) as f64;
        r.sigma = p_to_sigma_two_sided(r.p)?;
        r.null_samples = samples;
    }
    Ok(r)
}

/// Poisson toys around the prediction at `truth`.
pub fn poisson_toy<M: BinnedModel + ?Sized>(
    model: &M,
    truth: &[f64],
    edges: &[f64],
    rng: &mut impl rand::Rng,
) -> BinnedData {
    let counts = model
        .predict(truth, edges)
        .iter()
        .map(|m| rng::poisson(rng, *m) as f64)
        .collect();
    BinnedData {
        edges: edges.to_vec(),
        counts,
        variance: None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DofScan {
    pub n_bins: usize,
    pub n_params: usize,
    pub mean_s: f64,
    pub var_s: f64,
    pub n_toys: usize,
    pub failures: usize,
    /// `f` in `0..=n_params` whose `n_bins - f` is closest to `mean_s`.
    pub effective_f: usize,
}

/// Fit toys drawn at `truth` and compare the mean minimum chi-square with
/// `n_bins - f` for each candidate number of active parameters.
pub fn effective_dof_scan<M: BinnedModel>(
    model: &M,
    truth: &[f64],
    edges: &[f64],
    n_toys: usize,
    restarts: usize,
    seed: u64,
) -> Result<DofScan> {
    if n_toys < 2 {
        return Err(Error::Insufficient("need at least two toys".into()));
    }
    let fits: Vec<Option<f64>> = (0..n_toys as u64)
        .into_par_iter()
        .map(|i| {
            let toy = poisson_toy(
                model,
                truth,
                edges,
                &mut rng::stream(seed, family::GOF_TOYS, i),
            );
            fit_with(
                model,
                &toy,
                &[truth.to_vec()],
                restarts,
                seed,
                rng::subfamily(family::FIT_RESTARTS, i),
            )
            .ok()
            .map(|f| f.chi2)
        })
        .collect();
    let s: Vec<f64> = fits.iter().flatten().copied().collect();
    let failures = n_toys - s.len();
    if failures * 100 > n_toys {
        return Err(Error::FitFailure(format!(
            "{failures} of {n_toys} toy fits failed"
        )));
    }
    let n = s.len() as f64;
    let mean_s = s.iter().sum::<f64>() / n;
    let var_s = s.iter().map(|v| (v - mean_s).powi(2)).sum::<f64>() / (n - 1.0);
    let n_bins = edges.len() - 1;
    let n_params = model.n_params();
    let effective_f = (0..=n_params)
        .min_by(|a, b| {
            (mean_s - (n_bins - a) as f64)
                .abs()
                .total_cmp(&(mean_s - (n_bins - b) as f64).abs())
        })
        .unwrap();
    Ok(DofScan {
        n_bins,
        n_params,
        mean_s,
        var_s,
        n_toys,
        failures,
        effective_f,
    })
}

/// Two point samples in a common space with per-dimension metric scales.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoSample {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub scales: Vec<f64>,
}

impl TwoSample {
    pub fn new(a: Vec<Vec<f64>>, b: Vec<Vec<f64>>, scales: Vec<f64>) -> Result<Self> {
        let d = scales.len();
        if d == 0 || a.is_empty() || b.is_empty() {
            return Err(domain(
                "both samples and the metric scales must be non-empty",
            ));
        }
        if a.iter()
            .chain(&b)
            .any(|p| p.len() != d || p.iter().any(|x| !x.is_finite()))
        {
            return Err(domain(format!("every point needs {d} finite coordinates")));
        }
        if scales.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(domain("metric scales must be positive"));
        }
        Ok(TwoSample { a, b, scales })
    }
}

pub const MIN_PERMUTATIONS: usize = 99;
/// Pooled samples up to this size are relabelled exhaustively.
pub const EXHAUSTIVE_MAX: usize = 12;
/// Default distance floor as a fraction of the median pairwise distance.
pub const EPSILON_FRACTION: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyResult {
    pub e: f64,
    pub p: f64,
    pub epsilon: f64,
    /// Relabelings compared against the observed one.
    pub n_relabelings: usize,
    pub exhaustive: bool,
}

struct Pooled {
    n: usize,
    /// Kernel `-ln(d + ε)` for `i < j`, row-major upper triangle.
    f: Vec<f64>,
}

impl Pooled {
    fn energy(&self, in_a: &[bool], na: usize) -> f64 {
        let nb = self.n - na;
        let (qa, qb) = (1.0 / na as f64, -1.0 / nb as f64);
        let mut k = 0;
        let mut e = 0.0;
        for i in 0..self.n {
            let qi = if in_a[i] { qa } else { qb };
            let mut row = 0.0;
            for j in i + 1..self.n {
                row += if in_a[j] { qa } else { qb } * self.f[k];
                k += 1;
            }
            e += qi * row;
        }
        e
    }
}

/// Energy statistic with charges `1/|A|` and `-1/|B|`, and its permutation
/// p-value.
pub fn energy_test(
    ts: &TwoSample,
    epsilon: Option<f64>,
    n_perm: usize,
    seed: u64,
) -> Result<EnergyResult> {
    let points: Vec<Vec<f64>> =
        ts.a.iter()
            .chain(&ts.b)
            .map(|p| p.iter().zip(&ts.scales).map(|(x, s)| x / s).collect())
            .collect();
    let n = points.len();
    let mut d = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            d.push(
                points[i]
                    .iter()
                    .zip(&points[j])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt(),
            );
        }
    }
    let epsilon = match epsilon {
        Some(e) if e > 0.0 && e.is_finite() => e,
        Some(e) => return Err(domain(format!("epsilon {e} must be positive"))),
        None => default_epsilon(&d),
    };
    let pooled = Pooled {
        n,
        f: d.iter().map(|x| -(x + epsilon).ln()).collect(),
    };
    let na = ts.a.len();
    let observed: Vec<bool> = (0..n).map(|i| i < na).collect();
    let e = pooled.energy(&observed, na);
    let ties = 1e-12 * e.abs().max(1e-300);
    if n <= EXHAUSTIVE_MAX {
        let (mut total, mut tail) = (0usize, 0usize);
        for mask in 0u32..(1 << n) {
            if mask.count_ones() as usize != na {
                continue;
            }
            let labels: Vec<bool> = (0..n).map(|i| mask >> i & 1 == 1).collect();
            total += 1;
            tail += (pooled.energy(&labels, na) >= e - ties) as usize;
        }
        return Ok(EnergyResult {
            e,
            p: tail as f64 / total as f64,
            epsilon,
            n_relabelings: total,
            exhaustive: true,
        });
    }
    if n_perm < MIN_PERMUTATIONS {
        return Err(domain(format!(
            "{n_perm} permutations; at least {MIN_PERMUTATIONS} are needed"
        )));
    }
    let tail: usize = (0..n_perm as u64)
        .into_par_iter()
        .map(|i| {
            let mut labels = observed.clone();
            labels.shuffle(&mut rng::stream(seed, family::PERMUTATION, i));
            (pooled.energy(&labels, na) >= e - ties) as usize
        })
        .sum();
    Ok(EnergyResult {
        e,
        p: (tail + 1) as f64 / (n_perm + 1) as f64,
        epsilon,
        n_relabelings: n_perm,
        exhaustive: false,
    })
}

fn default_epsilon(d: &[f64]) -> f64 {
    let mut sorted = d.to_vec();
    let mid = sorted.len() / 2;
    let median = if sorted.is_empty() {
        0.0
    } else {
        *sorted.select_nth_unstable_by(mid, f64::total_cmp).1
    };
    let scale = if median > 0.0 {
        median
    } else {
        d.iter().copied().fold(0.0, f64::max)
    };
    if scale > 0.0 {
        EPSILON_FRACTION * scale
    } else {
        EPSILON_FRACTION
    }
}
