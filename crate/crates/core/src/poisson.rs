//! Poisson probabilities in log space.

use crate::error::{domain, Result};
use crate::special::ln_factorial;

/// `ln P(n | mu)`. `mu == 0` gives 0 for `n == 0` and `-inf` otherwise.
pub fn ln_pmf(n: u64, mu: f64) -> f64 {
    if mu == 0.0 {
        return if n == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    n as f64 * mu.ln() - mu - ln_factorial(n)
}

/// Poisson probability mass `e^-mu mu^n / n!`, evaluated in log space.
pub fn pmf(n: u64, mu: f64) -> Result<f64> {
    check_mean(mu)?;
    Ok(ln_pmf(n, mu).exp())
}

fn check_mean(mu: f64) -> Result<()> {
    if mu >= 0.0 && mu.is_finite() {
        Ok(())
    } else {
        Err(domain(format!(
            "Poisson mean must be finite and >= 0, got {mu}"
        )))
    }
}

/// Sum of the geometric-like series `Σ_{k>=0} t_k / t_0` walking away from
/// the mode, where `ratio(k)` is `t_{k+1} / t_k`. Stops when a term no longer
/// moves the sum.
fn relative_series(mut ratio: impl FnMut(u64) -> Option<f64>) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let mut k = 0;
    while let Some(r) = ratio(k) {
        term *= r;
        sum += term;
        if term < 1e-17 * sum {
            break;
        }
        k += 1;
    }
    sum
}

/// `ln P(N >= n | mu)`, an exact tail sum in log space.
pub fn ln_sf(n: u64, mu: f64) -> f64 {
    if n == 0 {
        return 0.0;
    }
    if mu == 0.0 {
        return f64::NEG_INFINITY;
    }
    if n as f64 > mu {
        // terms decrease monotonically above the mode
        let series = relative_series(|k| Some(mu / (n + k + 1) as f64));
        ln_pmf(n, mu) + series.ln()
    } else {
        (-ln_cdf(n - 1, mu).exp()).ln_1p()
    }
}

/// `ln P(N <= n | mu)`.
pub fn ln_cdf(n: u64, mu: f64) -> f64 {
    if mu == 0.0 {
        return 0.0;
    }
    if (n as f64) < mu {
        // terms decrease monotonically walking down from n
        let series = relative_series(|k| {
            if k < n {
                Some((n - k) as f64 / mu)
            } else {
                None
            }
        });
        ln_pmf(n, mu) + series.ln()
    } else {
        (-ln_sf(n + 1, mu).exp()).ln_1p()
    }
}

/// `P(N >= n | mu)`.
pub fn sf(n: u64, mu: f64) -> f64 {
    ln_sf(n, mu).exp()
}

/// `P(N <= n | mu)`.
pub fn cdf(n: u64, mu: f64) -> f64 {
    ln_cdf(n, mu).exp()
}

/// Solve `P(N <= n | mu) = target` for `mu` (the CDF falls monotonically in `mu`).
pub fn mean_for_cdf(n: u64, target: f64) -> Result<f64> {
    if !(target > 0.0 && target < 1.0) {
        return Err(domain(format!(
            "target probability must lie in (0, 1), got {target}"
        )));
    }
    let mut lo = 0.0;
    let mut hi = n as f64 + 10.0;
    while cdf(n, hi) > target {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if cdf(n, mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-13 * hi.max(1.0) {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}
