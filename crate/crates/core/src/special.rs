//! Gaussian tail conversions and the few distribution tails the rest of the
//! crate leans on.
//!
//! Everything here works in log space or through the complementary error
//! function so that 5σ-scale tail probabilities never underflow or cancel.

use std::sync::OnceLock;

use statrs::function::erf::erfc_inv;
use statrs::function::gamma::{gamma_ur, ln_gamma};

use crate::error::{domain, Result};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Scaled complementary error function `exp(x^2) erfc(x)` for `x >= 0`.
///
/// Power series for `x < 2`, Lentz continued fraction beyond; relative
/// accuracy is a few ulps across the range used for tails out to 40σ.
pub fn erfcx(x: f64) -> f64 {
    debug_assert!(x >= 0.0);
    if x < 2.0 {
        // erf(x) = 2/sqrt(pi) * exp(-x^2) * Σ 2^k x^(2k+1) / (2k+1)!!
        let x2 = x * x;
        let mut term = x;
        let mut sum = x;
        let mut k = 0.0;
        loop {
            k += 1.0;
            term *= 2.0 * x2 / (2.0 * k + 1.0);
            sum += term;
            if term <= 1e-17 * sum {
                break;
            }
        }
        let erf = std::f64::consts::FRAC_2_SQRT_PI * (-x2).exp() * sum;
        (1.0 - erf) * x2.exp()
    } else {
        // erfc(x) = exp(-x^2)/sqrt(pi) * 1/(x + (1/2)/(x + 1/(x + (3/2)/(x + ...))))
        let tiny = 1e-300;
        let mut f = x;
        let mut c = x;
        let mut d = 0.0;
        for j in 1..500 {
            let a = 0.5 * j as f64;
            d = x + a * d;
            if d.abs() < tiny {
                d = tiny;
            }
            c = x + a / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            let delta = c * d;
            f *= delta;
            if (delta - 1.0).abs() < 1e-16 {
                break;
            }
        }
        1.0 / (f * std::f64::consts::PI.sqrt())
    }
}

/// Complementary error function.
pub fn erfc(x: f64) -> f64 {
    if x >= 0.0 {
        erfcx(x) * (-x * x).exp()
    } else {
        2.0 - erfcx(-x) * (-x * x).exp()
    }
}

/// One-sided upper Gaussian tail `P(Z >= z)` for a unit normal.
///
/// `sigma_to_p(5.0)` is 2.8665e-7, the usual discovery threshold.
pub fn sigma_to_p(z: f64) -> f64 {
    0.5 * erfc(z / std::f64::consts::SQRT_2)
}

/// Inverse of [`sigma_to_p`]: the `z` whose one-sided upper tail is `p`.
///
/// Returns negative values for `p > 0.5` and `-inf` for `p == 1`.
pub fn p_to_sigma(p: f64) -> Result<f64> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(domain(format!("p-value must lie in (0, 1], got {p}")));
    }
    if p == 1.0 {
        return Ok(f64::NEG_INFINITY);
    }
    let mut z = std::f64::consts::SQRT_2 * erfc_inv(2.0 * p);
    // Newton polish on ln Q(z) - ln p; the tail is log-concave so this is stable.
    let ln_p = p.ln();
    for _ in 0..4 {
        let q = sigma_to_p(z);
        if q <= 0.0 {
            break;
        }
        let ln_phi = -0.5 * z * z - LN_SQRT_2PI;
        let step = (q.ln() - ln_p) * (q.ln() - ln_phi).exp();
        z += step;
        if step.abs() <= 1e-15 * z.abs().max(1.0) {
            break;
        }
    }
    Ok(z)
}

/// Two-sided Gaussian equivalent: the `z` with `P(|Z| >= z) = p`.
pub fn p_to_sigma_two_sided(p: f64) -> Result<f64> {
    let z = p_to_sigma(0.5 * p)?;
    Ok(z.max(0.0))
}

/// Standard normal density.
pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z - LN_SQRT_2PI).exp()
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    sigma_to_p(-z)
}

const LN_FACTORIAL_TABLE: usize = 4096;

/// `ln n!`, tabulated for small `n`.
pub fn ln_factorial(n: u64) -> f64 {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    if (n as usize) < LN_FACTORIAL_TABLE {
        let table = TABLE.get_or_init(|| {
            let mut t = Vec::with_capacity(LN_FACTORIAL_TABLE);
            t.push(0.0);
            for k in 1..LN_FACTORIAL_TABLE {
                t.push(ln_gamma(k as f64 + 1.0));
            }
            t
        });
        table[n as usize]
    } else {
        ln_gamma(n as f64 + 1.0)
    }
}

/// Upper tail of the χ² distribution with `k` degrees of freedom.
pub fn chi2_sf(x: f64, k: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if k == 1.0 {
        erfc((0.5 * x).sqrt())
    } else if k == 2.0 {
        (-0.5 * x).exp()
    } else {
        gamma_ur(0.5 * k, 0.5 * x)
    }
}

/// CDF of the χ² distribution with `k` degrees of freedom.
pub fn chi2_cdf(x: f64, k: f64) -> f64 {
    1.0 - chi2_sf(x, k)
}

/// `ln(exp(a) + exp(b))` without overflow.
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// `ln Σ exp(x_i)`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// `P(X >= k)` for `X ~ Binomial(trials, prob)`, summed exactly in log space.
pub fn binomial_sf(k: u64, trials: u64, prob: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&prob) {
        return Err(domain(format!(
            "binomial probability must lie in [0, 1], got {prob}"
        )));
    }
    if k == 0 {
        return Ok(1.0);
    }
    if k > trials {
        return Ok(0.0);
    }
    if prob == 0.0 {
        return Ok(0.0);
    }
    if prob == 1.0 {
        return Ok(1.0);
    }
    let ln_p = prob.ln();
    let ln_q = (-prob).ln_1p();
    let ln_term = |j: u64| {
        ln_factorial(trials) - ln_factorial(j) - ln_factorial(trials - j)
            + j as f64 * ln_p
            + (trials - j) as f64 * ln_q
    };
    let odds = prob / (1.0 - prob);
    // sum the side of k away from the mode, so terms only shrink
    let mode = ((trials + 1) as f64 * prob).floor() as u64;
    let (start, upward) = if k > mode { (k, true) } else { (k - 1, false) };
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut j = start;
    loop {
        let next = if upward {
            if j == trials {
                break;
            }
            term * (trials - j) as f64 / (j + 1) as f64 * odds
        } else {
            if j == 0 {
                break;
            }
            term * j as f64 / ((trials - j + 1) as f64 * odds)
        };
        j = if upward { j + 1 } else { j - 1 };
        term = next;
        sum += term;
        if term <= 1e-17 * sum {
            break;
        }
    }
    let side = (ln_term(start) + sum.ln()).exp();
    Ok(if upward {
        side.min(1.0)
    } else {
        (1.0 - side).max(0.0)
    })
}
