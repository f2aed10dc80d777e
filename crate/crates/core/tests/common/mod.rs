#![allow(dead_code)]

/// Largest gap between the empirical CDF of `samples` and `cdf`.
pub fn ks_distance(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, x)| {
            let f = cdf(*x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Asymptotic Kolmogorov tail probability for distance `d` over `n` samples.
pub fn ks_pvalue(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    let mut sum = 0.0;
    for k in 1..200 {
        let term = (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Simpson's rule on `n` (even) panels.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let inner: f64 = (1..n)
        .map(|i| f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 })
        .sum();
    (f(a) + f(b) + inner) * h / 3.0
}

/// Chi-square tail by direct integration of the unnormalized density.
pub fn chi2_tail_by_quadrature(x: f64, k: f64) -> f64 {
    let top = k + 40.0 * (2.0 * k).sqrt() + 100.0;
    let log_peak = (0.5 * k - 1.0) * (k - 2.0).max(1.0).ln() - 0.5 * (k - 2.0).max(1.0);
    let dens = |t: f64| {
        if t <= 0.0 {
            0.0
        } else {
            ((0.5 * k - 1.0) * t.ln() - 0.5 * t - log_peak).exp()
        }
    };
    simpson(dens, x, top, 200_000) / simpson(dens, 0.0, top, 400_000)
}
