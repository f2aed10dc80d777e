//! Gauss–Legendre quadrature.

use std::sync::OnceLock;

/// Nodes and weights of the `n`-point Gauss–Legendre rule on [-1, 1].
fn legendre_rule(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// The 64-point rule, computed once.
pub fn gl64() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| legendre_rule(64))
}

/// Nodes and weights of a composite 64-point rule with `panels` equal panels on `[a, b]`.
pub fn composite_nodes(a: f64, b: f64, panels: usize) -> Vec<(f64, f64)> {
    let (x, w) = gl64();
    let h = (b - a) / panels as f64;
    let mut out = Vec::with_capacity(panels * x.len());
    for p in 0..panels {
        let lo = a + p as f64 * h;
        let mid = lo + 0.5 * h;
        for (xi, wi) in x.iter().zip(w) {
            out.push((mid + 0.5 * h * xi, 0.5 * h * wi));
        }
    }
    out
}

/// Adaptive 64-point Gauss–Legendre integration of `f` over `[a, b]`.
///
/// A panel is accepted when it agrees with the sum of its two halves to
/// `rel_tol` (relative to the running total) or `max_depth` is reached.
pub fn integrate<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, rel_tol: f64, max_depth: u32) -> f64 {
    fn panel<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> f64 {
        let (x, w) = gl64();
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        half * x
            .iter()
            .zip(w)
            .map(|(xi, wi)| wi * f(mid + half * xi))
            .sum::<f64>()
    }
    fn recurse<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let left = panel(f, a, m);
        let right = panel(f, m, b);
        let split = left + right;
        if depth == 0 || (split - whole).abs() <= tol.max(1e-300) {
            split
        } else {
            recurse(f, a, m, left, tol, depth - 1) + recurse(f, m, b, right, tol, depth - 1)
        }
    }
    let whole = panel(f, a, b);
    let tol = rel_tol * whole.abs();
    recurse(f, a, b, whole, tol, max_depth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn weights_sum_to_two_and_nodes_symmetric() {
        let (x, w) = gl64();
        assert_relative_eq!(w.iter().sum::<f64>(), 2.0, max_relative = 1e-14);
        for i in 0..32 {
            assert_relative_eq!(x[i], -x[63 - i], epsilon = 1e-15);
        }
    }

    #[test]
    fn integrates_polynomials_and_smooth_functions() {
        let poly = |x: f64| x.powi(20) - 3.0 * x.powi(7);
        assert_relative_eq!(
            integrate(&poly, 0.0, 1.0, 1e-12, 4),
            1.0 / 21.0 - 3.0 / 8.0,
            max_relative = 1e-13
        );
        let peaked = |x: f64| (-1000.0 * (x - 0.3) * (x - 0.3)).exp();
        let exact = (std::f64::consts::PI / 1000.0).sqrt();
        assert_relative_eq!(
            integrate(&peaked, -5.0, 5.0, 1e-12, 12),
            exact,
            max_relative = 1e-10
        );
    }
}
