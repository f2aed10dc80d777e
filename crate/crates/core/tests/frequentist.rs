use approx::assert_relative_eq;
use countstat::frequentist::{
    build_belt, classical_upper_limit, fc_interval, neyman_interval, Ordering,
};

/// Straightforward Feldman–Cousins inversion in linear space on a fine
/// grid, written independently of the library's belt code.
fn brute_force_fc_upper(n: u64, b: f64, cl: f64, ds: f64, s_max: f64) -> f64 {
    let pmf = |k: u64, mu: f64| {
        let mut p = (-mu).exp();
        for j in 1..=k {
            p *= mu / j as f64;
        }
        p
    };
    let accepts = |s: f64| {
        let mu = s + b;
        let mut ranked: Vec<(f64, u64, f64)> = (0..80)
            .map(|k| {
                let best = (k as f64).max(b);
                let p = pmf(k, mu);
                (p / pmf(k, best), k, p)
            })
            .collect();
        ranked.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap().then(y.1.cmp(&x.1)));
        let (mut sum, mut lo, mut hi) = (0.0, u64::MAX, 0);
        for (_, k, p) in ranked {
            sum += p;
            lo = lo.min(k);
            hi = hi.max(k);
            if sum >= cl {
                break;
            }
        }
        lo <= n && n <= hi
    };
    let mut upper = 0.0;
    let mut s = 0.0;
    while s < s_max {
        if accepts(s) {
            upper = s;
        }
        s += ds;
    }
    upper
}

#[test]
fn fc_zero_count_limits() {
    let b3 = fc_interval(0, 3.0, 0.9).unwrap();
    let b0 = fc_interval(0, 0.0, 0.9).unwrap();
    assert_eq!(b3.lower(), Some(0.0));
    assert!(
        (b3.upper().unwrap() - 1.08).abs() <= 0.01,
        "b=3: {:?}",
        b3.upper()
    );
    assert!(
        (b0.upper().unwrap() - 2.44).abs() <= 0.01,
        "b=0: {:?}",
        b0.upper()
    );
}

#[test]
fn raw_belt_matches_brute_force_oracle() {
    for (n, b) in [(0u64, 1.0), (0, 3.0), (2, 3.0), (5, 1.5)] {
        let belt = build_belt(b, 0.9, Ordering::LikelihoodRatio, 20.0, 0.01).unwrap();
        let raw = belt.invert(n).unwrap().upper().unwrap();
        let slow = brute_force_fc_upper(n, b, 0.9, 0.002, 20.0);
        assert!((raw - slow).abs() < 3e-3, "n={n} b={b}: {raw} vs {slow}");
        // the reported limit is the sup of raw edges over b' >= b
        assert!(fc_interval(n, b, 0.9).unwrap().upper().unwrap() >= raw - 1e-9);
    }
}

#[test]
fn fc_reported_limit_is_sup_over_larger_backgrounds() {
    let reported = fc_interval(0, 3.0, 0.9).unwrap().upper().unwrap();
    let sup = (0..=200)
        .map(|j| brute_force_fc_upper(0, 3.0 + 0.005 * j as f64, 0.9, 0.002, 4.0))
        .fold(0.0, f64::max);
    assert!((reported - sup).abs() < 5e-3, "{reported} vs {sup}");
}

#[test]
fn fc_zero_count_limit_falls_with_background() {
    let limits: Vec<f64> = [0.0, 1.0, 2.0, 3.0]
        .iter()
        .map(|&b| fc_interval(0, b, 0.9).unwrap().upper().unwrap())
        .collect();
    for w in limits.windows(2) {
        assert!(w[1] < w[0], "{limits:?}");
    }
}

#[test]
fn fc_unifies_upper_limits_and_two_sided_intervals() {
    let b = 3.0;
    let intervals: Vec<_> = (0..=15).map(|n| fc_interval(n, b, 0.9).unwrap()).collect();
    assert!(intervals.iter().all(|r| !r.is_empty()));
    assert_eq!(intervals[0].lower(), Some(0.0));
    assert!(intervals[15].lower().unwrap() > 0.0);
    // no jump in the upper limit where the lower bound lifts off zero
    for w in intervals.windows(2) {
        let (u0, u1) = (w[0].upper().unwrap(), w[1].upper().unwrap());
        assert!(u1 >= u0 - 1e-9 && u1 - u0 < 2.5, "{u0} -> {u1}");
    }
}

#[test]
fn fc_limit_not_increasing_in_background() {
    for n in [0u64, 2, 5] {
        let mut prev = f64::INFINITY;
        for b in [0.0, 0.5, 1.0, 2.0, 3.0, 5.0] {
            let u = fc_interval(n, b, 0.9).unwrap().upper().unwrap();
            assert!(u <= prev + 1e-9, "n={n} b={b}");
            prev = u;
        }
    }
}

#[test]
fn belts_never_undercover() {
    for ordering in [
        Ordering::Upper,
        Ordering::Central,
        Ordering::LikelihoodRatio,
    ] {
        for b in [0.0, 3.0] {
            let belt = build_belt(b, 0.9, ordering, 15.0, 0.05).unwrap();
            for i in 0..belt.s_grid.len() {
                assert!(
                    belt.coverage_at(i) >= 0.9,
                    "{ordering:?} b={b} s={}",
                    belt.s_grid[i]
                );
                let a = belt.acceptance[i];
                if let Some(hi) = a.hi {
                    assert!(a.lo <= hi);
                }
            }
        }
    }
}

#[test]
fn upper_ordering_inversion_is_the_classical_limit() {
    for (n, b) in [(0u64, 0.0), (3, 1.0), (7, 2.5)] {
        let belt = neyman_interval(n, b, 0.9, Ordering::Upper).unwrap();
        let classical = classical_upper_limit(n, b, 0.9).unwrap();
        assert_relative_eq!(
            belt.upper().unwrap(),
            classical.upper().unwrap(),
            epsilon = 1e-8
        );
    }
    assert!(neyman_interval(0, 3.0, 0.9, Ordering::Upper)
        .unwrap()
        .is_empty());
}

#[test]
fn classical_limit_equals_flat_prior_bayes_at_zero_background() {
    // posterior for n counts with flat prior and b = 0 is Gamma(n+1, 1)
    for n in [0u64, 1, 4] {
        let classical = classical_upper_limit(n, 0.0, 0.9).unwrap().upper().unwrap();
        let gamma_cdf = |s: f64| {
            let mut term = 1.0;
            let mut sum = 1.0;
            for j in 1..=n {
                term *= s / j as f64;
                sum += term;
            }
            1.0 - (-s).exp() * sum
        };
        assert_relative_eq!(gamma_cdf(classical), 0.9, epsilon = 1e-10);
    }
}
