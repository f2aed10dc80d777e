//! Neyman constructions for a Poisson count with known background, the
//! classical upper limit, and the Gaussian flip-flop policy.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::interval::{IntervalMethod, IntervalResult};
use crate::poisson;
use crate::special::{ln_factorial, p_to_sigma};

/// Default signal grid step for belt construction.
pub const DEFAULT_DS: f64 = 0.005;

/// Rule deciding which counts enter an acceptance set first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ordering {
    /// Exclude the low tail only; acceptance is unbounded above.
    Upper,
    /// Exclude equal-probability tails on both sides.
    Central,
    /// Feldman–Cousins: rank by `P(n|s+b) / P(n|ŝ+b)` with `ŝ = max(0, n-b)`.
    LikelihoodRatio,
}

/// Contiguous set of accepted counts `[lo, hi]`; `hi == None` is unbounded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Acceptance {
    pub lo: u64,
    pub hi: Option<u64>,
}

impl Acceptance {
    pub fn contains(&self, n: u64) -> bool {
        n >= self.lo && self.hi.is_none_or(|hi| n <= hi)
    }

    /// Probability content of the set at Poisson mean `mu`.
    pub fn probability(&self, mu: f64) -> f64 {
        match self.hi {
            None => poisson::sf(self.lo, mu),
            Some(hi) => (self.lo..=hi).map(|n| poisson::ln_pmf(n, mu).exp()).sum(),
        }
    }
}

fn check_cl(cl: f64) -> Result<()> {
    if cl > 0.0 && cl < 1.0 {
        Ok(())
    } else {
        Err(domain(format!(
            "confidence level must lie in (0, 1), got {cl}"
        )))
    }
}

fn check_background(b: f64) -> Result<()> {
    if b >= 0.0 && b.is_finite() {
        Ok(())
    } else {
        Err(domain(format!(
            "background must be finite and >= 0, got {b}"
        )))
    }
}

/// Acceptance set at Poisson mean `mu = s + b`.
pub fn acceptance_set(mu: f64, b: f64, cl: f64, ordering: Ordering) -> Acceptance {
    match ordering {
        Ordering::Upper => {
            let mut lo = 0;
            while poisson::cdf(lo, mu) <= 1.0 - cl {
                lo += 1;
            }
            Acceptance { lo, hi: None }
        }
        Ordering::Central => {
            let alpha = 0.5 * (1.0 - cl);
            let mut lo = 0;
            while poisson::cdf(lo, mu) <= alpha {
                lo += 1;
            }
            let mut hi = lo;
            while poisson::sf(hi + 1, mu) > alpha {
                hi += 1;
            }
            Acceptance { lo, hi: Some(hi) }
        }
        Ordering::LikelihoodRatio => likelihood_ratio_acceptance(mu, b, cl),
    }
}

fn likelihood_ratio_acceptance(mu: f64, b: f64, cl: f64) -> Acceptance {
    // ln R(n) = ln P(n|mu) - ln P(n|max(n, b)). It is non-decreasing up to the
    // peak at floor(mu) or floor(mu)+1 and non-increasing after, so the sorted
    // ranking is a merge of the two flanks walking outward from the peak.
    let ln_mu = if mu > 0.0 { mu.ln() } else { f64::NEG_INFINITY };
    let ln_b = if b > 0.0 { b.ln() } else { f64::NEG_INFINITY };
    let ln_p = |n: u64| {
        if n == 0 {
            -mu
        } else {
            n as f64 * ln_mu - mu - ln_factorial(n)
        }
    };
    let ln_r = |n: u64| {
        let nf = n as f64;
        let best = if n == 0 {
            -b
        } else if nf >= b {
            nf * nf.ln() - nf
        } else {
            nf * ln_b - b
        };
        let own = if n == 0 { -mu } else { nf * ln_mu - mu };
        own - best
    };
    let floor = mu.floor() as u64;
    let peak = if ln_r(floor + 1) >= ln_r(floor) {
        floor + 1
    } else {
        floor
    };
    let (mut lo, mut hi) = (peak, peak);
    let mut sum = ln_p(peak).exp();
    let (mut r_left, mut r_right) = (
        if lo > 0 {
            ln_r(lo - 1)
        } else {
            f64::NEG_INFINITY
        },
        ln_r(hi + 1),
    );
    while sum < cl {
        // ties admit the larger n first
        if r_right >= r_left {
            hi += 1;
            sum += ln_p(hi).exp();
            r_right = ln_r(hi + 1);
        } else {
            lo -= 1;
            sum += ln_p(lo).exp();
            r_left = if lo > 0 {
                ln_r(lo - 1)
            } else {
                f64::NEG_INFINITY
            };
        }
    }
    Acceptance { lo, hi: Some(hi) }
}

/// A Neyman belt on an equally spaced signal grid starting at zero.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConfidenceBelt {
    pub b: f64,
    pub cl: f64,
    pub ordering: Ordering,
    pub s_grid: Vec<f64>,
    pub acceptance: Vec<Acceptance>,
}

/// Build a belt for known background `b` on the grid `0, ds, 2ds, ..., >= s_max`.
///
/// Fails with [`Error::BeltTruncated`] if the acceptance at `s_max` still
/// contains `n = 0`, i.e. no count's interval would close inside the grid.
pub fn build_belt(
    b: f64,
    cl: f64,
    ordering: Ordering,
    s_max: f64,
    ds: f64,
) -> Result<ConfidenceBelt> {
    check_background(b)?;
    check_cl(cl)?;
    if !(ds > 0.0 && ds.is_finite()) {
        return Err(domain(format!("grid step must be > 0, got {ds}")));
    }
    if !(s_max > 0.0 && s_max.is_finite()) {
        return Err(domain(format!("s_max must be > 0, got {s_max}")));
    }
    let steps = (s_max / ds).ceil() as usize;
    let s_grid: Vec<f64> = (0..=steps).map(|k| k as f64 * ds).collect();
    let acceptance: Vec<Acceptance> = s_grid
        .par_iter()
        .map(|&s| acceptance_set(s + b, b, cl, ordering))
        .collect();
    if acceptance.last().is_some_and(|a| a.contains(0)) {
        return Err(Error::BeltTruncated { s_max, n: 0 });
    }
    Ok(ConfidenceBelt {
        b,
        cl,
        ordering,
        s_grid,
        acceptance,
    })
}

impl ConfidenceBelt {
    fn method(&self) -> IntervalMethod {
        match self.ordering {
            Ordering::Upper => IntervalMethod::Classical,
            Ordering::Central => IntervalMethod::Central,
            Ordering::LikelihoodRatio => IntervalMethod::FeldmanCousins,
        }
    }

    fn accepts(&self, s: f64, n: u64) -> bool {
        acceptance_set(s + self.b, self.b, self.cl, self.ordering).contains(n)
    }

    /// Bisect for the edge between `out` (not accepting) and `inside` (accepting).
    fn refine_edge(&self, n: u64, mut inside: f64, mut out: f64) -> f64 {
        for _ in 0..60 {
            let mid = 0.5 * (inside + out);
            if self.accepts(mid, n) {
                inside = mid;
            } else {
                out = mid;
            }
            if (inside - out).abs() < 1e-12 {
                break;
            }
        }
        inside
    }

    /// Invert the belt at observed count `n`: every `s` whose acceptance set
    /// contains `n`. Grid-bracketed edges are refined by bisection.
    pub fn invert(&self, n: u64) -> Result<IntervalResult> {
        let Some(first) = self.acceptance.iter().position(|a| a.contains(n)) else {
            return Ok(IntervalResult::empty(self.cl, self.method()));
        };
        let last = self
            .acceptance
            .iter()
            .rposition(|a| a.contains(n))
            .expect("position found above");
        if last + 1 == self.s_grid.len() {
            return Err(Error::BeltTruncated {
                s_max: *self.s_grid.last().unwrap(),
                n,
            });
        }
        let upper = self.refine_edge(n, self.s_grid[last], self.s_grid[last + 1]);
        let lower = if first == 0 {
            0.0
        } else {
            self.refine_edge(n, self.s_grid[first], self.s_grid[first - 1])
        };
        Ok(IntervalResult::new(
            lower,
            upper.max(lower),
            self.cl,
            self.method(),
        ))
    }

    /// Largest count whose interval closes inside the grid.
    pub fn max_closed_count(&self) -> Option<u64> {
        self.acceptance.last().and_then(|a| a.lo.checked_sub(1))
    }

    /// Exact probability content of the acceptance set at grid point `i`.
    pub fn coverage_at(&self, i: usize) -> f64 {
        self.acceptance[i].probability(self.s_grid[i] + self.b)
    }
}

/// Smallest grid cap whose acceptance excludes `n`, so the belt closes for `n`.
fn closing_s_max(n: u64, b: f64, cl: f64, ordering: Ordering) -> f64 {
    let mut s_max = (n as f64 + 4.0 * (n as f64 + 1.0).sqrt() + 4.0).max(5.0);
    while acceptance_set(s_max + b, b, cl, ordering).lo <= n {
        s_max *= 1.5;
    }
    s_max
}

/// Interval from a belt with the given ordering, grid cap grown until it closes for `n`.
pub fn neyman_interval(n: u64, b: f64, cl: f64, ordering: Ordering) -> Result<IntervalResult> {
    check_background(b)?;
    check_cl(cl)?;
    let mut s_max = closing_s_max(n, b, cl, ordering);
    loop {
        let belt = build_belt(b, cl, ordering, s_max, DEFAULT_DS)?;
        match belt.invert(n) {
            Err(Error::BeltTruncated { .. }) => s_max *= 2.0,
            other => return other,
        }
    }
}

/// Largest `s` whose raw likelihood-ratio acceptance set contains `n`, found
/// by scanning down from the closing point in steps of `ds` and bisecting the
/// bracketed edge.
fn raw_fc_upper(n: u64, b: f64, cl: f64, ds: f64) -> f64 {
    let accepts = |s: f64| likelihood_ratio_acceptance(s + b, b, cl).contains(n);
    let top = closing_s_max(n, b, cl, Ordering::LikelihoodRatio);
    let mut k = (top / ds).ceil() as i64;
    while k > 0 && !accepts(k as f64 * ds) {
        k -= 1;
    }
    let start = k as f64 * ds;
    bisect_edge(&accepts, start, start + ds)
}

fn bisect_edge(accepts: &impl Fn(f64) -> bool, mut inside: f64, mut out: f64) -> f64 {
    for _ in 0..40 {
        let mid = 0.5 * (inside + out);
        if accepts(mid) {
            inside = mid;
        } else {
            out = mid;
        }
    }
    inside
}

/// Smallest `s` whose raw likelihood-ratio acceptance set contains `n`.
fn raw_fc_lower(n: u64, b: f64, cl: f64, ds: f64) -> f64 {
    let accepts = |s: f64| likelihood_ratio_acceptance(s + b, b, cl).contains(n);
    if accepts(0.0) {
        return 0.0;
    }
    let mut k = 1;
    while !accepts(k as f64 * ds) {
        k += 1;
    }
    bisect_edge(&accepts, k as f64 * ds, (k - 1) as f64 * ds)
}

/// Feldman–Cousins unified interval for count `n` over known background `b`.
///
/// The lower edge comes from inverting the likelihood-ratio belt at `b`.
/// Because of count discreteness the raw upper edge is not monotone in the
/// background, so the reported upper limit is the largest raw upper edge
/// over all backgrounds `b' >= b`; this makes it non-increasing in `b` and
/// reproduces the standard tables (1.08 at `n = 0, b = 3`; the raw belt gives
/// 0.95 there).
pub fn fc_interval(n: u64, b: f64, cl: f64) -> Result<IntervalResult> {
    check_background(b)?;
    check_cl(cl)?;
    let ds = DEFAULT_DS;
    let coarse = 0.01;
    let width = 2.0 + 2.0 * (b + n as f64 + 1.0).sqrt();
    let steps = (width / coarse).ceil() as usize;
    let (arg, best) = (0..=steps)
        .into_par_iter()
        .map(|j| {
            let bp = b + j as f64 * coarse;
            (bp, raw_fc_upper(n, bp, cl, ds))
        })
        .reduce(
            || (b, f64::NEG_INFINITY),
            |x, y| {
                if y.1 > x.1 || (y.1 == x.1 && y.0 < x.0) {
                    y
                } else {
                    x
                }
            },
        );
    // the raw edge is discontinuous in b'; resample around the coarse maximum
    let fine = 0.0005;
    let lo_b = (arg - coarse).max(b);
    let fine_steps = ((arg + coarse - lo_b) / fine).ceil() as usize;
    let upper = (0..=fine_steps)
        .into_par_iter()
        .map(|j| raw_fc_upper(n, lo_b + j as f64 * fine, cl, ds))
        .reduce(|| best, f64::max);
    let lower = raw_fc_lower(n, b, cl, ds);
    Ok(IntervalResult::new(
        lower,
        upper.max(lower),
        cl,
        IntervalMethod::FeldmanCousins,
    ))
}

/// Classical upper limit: `s_up` with `P(N <= n | s_up + b) = 1 - cl`.
/// Empty when the solution would be negative.
pub fn classical_upper_limit(n: u64, b: f64, cl: f64) -> Result<IntervalResult> {
    check_background(b)?;
    check_cl(cl)?;
    let mu_up = poisson::mean_for_cdf(n, 1.0 - cl)?;
    let s_up = mu_up - b;
    if s_up < 0.0 {
        Ok(IntervalResult::empty(cl, IntervalMethod::Classical))
    } else {
        Ok(IntervalResult::new(
            0.0,
            s_up,
            cl,
            IntervalMethod::Classical,
        ))
    }
}

/// Default switch point of the flip-flop policy, in standard deviations.
pub const FLIP_FLOP_SWITCH: f64 = 3.0;

/// Flip-flop policy for a unit-variance Gaussian measurement `x` of `s >= 0`:
/// an upper limit below `switch_sigma`, a central interval at or above it.
pub fn flip_flop_interval(x: f64, cl: f64, switch_sigma: f64) -> Result<IntervalResult> {
    check_cl(cl)?;
    if !x.is_finite() || !switch_sigma.is_finite() {
        return Err(domain(format!(
            "measurement {x} and switch {switch_sigma} must be finite"
        )));
    }
    if x < switch_sigma {
        let z = p_to_sigma(1.0 - cl)?;
        Ok(IntervalResult::new(
            0.0,
            x.max(0.0) + z,
            cl,
            IntervalMethod::FlipFlop,
        ))
    } else {
        let z = p_to_sigma(0.5 * (1.0 - cl))?;
        let lo = (x - z).max(0.0);
        let hi = (x + z).max(0.0);
        Ok(IntervalResult::new(lo, hi, cl, IntervalMethod::FlipFlop))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn upper_ordering_admits_zero_below_ln10() {
        let inside = acceptance_set(2.30, 0.0, 0.9, Ordering::Upper);
        let outside = acceptance_set(2.31, 0.0, 0.9, Ordering::Upper);
        assert!(inside.contains(0));
        assert!(!outside.contains(0));
    }

    #[test]
    fn degenerate_zero_mean() {
        for ordering in [
            Ordering::Upper,
            Ordering::Central,
            Ordering::LikelihoodRatio,
        ] {
            let a = acceptance_set(0.0, 0.0, 0.9, ordering);
            assert!(a.contains(0));
            assert_eq!(a.lo, 0);
            assert_relative_eq!(a.probability(0.0), 1.0);
        }
    }

    #[test]
    fn belt_truncation_is_reported() {
        let err = build_belt(0.0, 0.9, Ordering::LikelihoodRatio, 1.0, 0.01).unwrap_err();
        assert!(matches!(err, Error::BeltTruncated { .. }));
        let belt = build_belt(3.0, 0.9, Ordering::LikelihoodRatio, 10.0, 0.05).unwrap();
        let n_top = belt.max_closed_count().unwrap();
        assert!(belt.invert(n_top).is_ok());
        assert!(matches!(
            belt.invert(n_top + 1),
            Err(Error::BeltTruncated { .. })
        ));
    }

    #[test]
    fn classical_examples() {
        let r = classical_upper_limit(0, 0.0, 0.9).unwrap();
        assert_relative_eq!(r.upper().unwrap(), 10f64.ln(), max_relative = 1e-10);
        assert!(classical_upper_limit(0, 3.0, 0.9).unwrap().is_empty());
        let a = classical_upper_limit(10, 0.0, 0.99)
            .unwrap()
            .upper()
            .unwrap();
        let b = classical_upper_limit(10, 0.0, 0.99999)
            .unwrap()
            .upper()
            .unwrap();
        assert!(b > a);
    }

    #[test]
    fn flip_flop_examples() {
        let z90 = 1.281_551_565_544_600_5;
        let z95 = 1.644_853_626_951_472_2;
        let r = flip_flop_interval(0.0, 0.9, 3.0).unwrap();
        assert_eq!(r.lower(), Some(0.0));
        assert_relative_eq!(r.upper().unwrap(), z90, max_relative = 1e-12);
        let r = flip_flop_interval(5.0, 0.9, 3.0).unwrap();
        assert_relative_eq!(r.lower().unwrap(), 5.0 - z95, max_relative = 1e-12);
        assert_relative_eq!(r.upper().unwrap(), 5.0 + z95, max_relative = 1e-12);
        let below = flip_flop_interval(3.0 - 1e-9, 0.9, 3.0).unwrap();
        let above = flip_flop_interval(3.0, 0.9, 3.0).unwrap();
        assert_eq!(below.lower(), Some(0.0));
        assert!(above.lower().unwrap() > 1.0);
        assert!(above.upper().unwrap() - below.upper().unwrap() > 0.3);
    }
}
