use approx::assert_relative_eq;
use countstat::bayes::upper_limit;
use countstat::rng;
use countstat::significance::*;
use countstat::special::sigma_to_p;
use countstat::{CountingModel, Nuisance, Observation, SubsidiaryCounts, SubsidiaryForm};
use rand::RngExt;

fn linear_tail(n: u64, mu: f64) -> f64 {
    let mut term = (-mu).exp();
    let mut below = 0.0;
    for k in 0..n {
        below += term;
        term *= mu / (k + 1) as f64;
    }
    1.0 - below
}

#[test]
fn counting_pvalues_match_direct_sum() {
    assert_relative_eq!(
        pvalue_counting(10, 3.0).unwrap().p,
        linear_tail(10, 3.0),
        max_relative = 1e-10
    );
    assert!((pvalue_counting(10, 3.0).unwrap().p - 1.1025e-3).abs() < 1e-7);
    let p16 = pvalue_counting(16, 3.0).unwrap().p;
    assert!((p16 - 1.24e-7).abs() < 0.01e-7, "{p16}");
}

fn counted_background(mean: f64, k: u64) -> CountingModel {
    let bg = Nuisance {
        mean,
        rel_sigma: 1.0 / (k as f64).sqrt(),
        form: SubsidiaryForm::GammaFromCount,
    };
    CountingModel::new(bg, Nuisance::exact(1.0)).unwrap()
}

#[test]
fn conditioning_binomial_tail() {
    let model = counted_background(10.0, 10);
    let obs = Observation::new(
        &model,
        10,
        SubsidiaryCounts {
            background: Some(10),
            efficiency: None,
        },
    )
    .unwrap();
    let p = pvalue_nuisance(&obs, &model, NuisanceStrategy::Conditioning).unwrap();
    // P(X >= 10 | 20, 1/2) = (1 + C(20,10)/2^20) / 2
    assert_relative_eq!(
        p.p,
        0.5 * (1.0 + 184_756.0 / 1_048_576.0),
        max_relative = 1e-12
    );
    assert!((p.p - 0.5881).abs() < 1e-4);
    assert_eq!(p.method, "conditioning");
}

#[test]
fn strategies_collapse_without_uncertainty() {
    let exact = CountingModel::exact(3.0, 1.0).unwrap();
    let base = pvalue_counting(9, 3.0).unwrap().p;
    let obs = Observation::nominal(&exact, 9);
    for s in [
        NuisanceStrategy::PlugIn,
        NuisanceStrategy::PriorPredictive,
        NuisanceStrategy::PosteriorPredictive,
        NuisanceStrategy::Supremum { lo: 3.0, hi: 3.0 },
    ] {
        assert_eq!(pvalue_nuisance(&obs, &exact, s).unwrap().p, base, "{s:?}");
    }
    let adj = pvalue_nuisance(
        &obs,
        &exact,
        NuisanceStrategy::CiAdjusted {
            gamma: DEFAULT_GAMMA,
            interval: None,
        },
    )
    .unwrap();
    assert_relative_eq!(adj.p, base + DEFAULT_GAMMA, max_relative = 1e-12);
    // nearly exact subsidiary measurement
    let sharp = counted_background(3.0, 100_000_000);
    let obs = Observation::nominal(&sharp, 9);
    for s in [
        NuisanceStrategy::PlugIn,
        NuisanceStrategy::PriorPredictive,
        NuisanceStrategy::PosteriorPredictive,
        NuisanceStrategy::CiAdjusted {
            gamma: DEFAULT_GAMMA,
            interval: None,
        },
        NuisanceStrategy::Conditioning,
    ] {
        let p = pvalue_nuisance(&obs, &sharp, s).unwrap().p;
        assert!((p / base - 1.0).abs() < 0.02, "{s:?}: {p} vs {base}");
    }
}

#[test]
fn ci_adjusted_uses_grid_maximum() {
    let model = counted_background(3.0, 9);
    let obs = Observation::nominal(&model, 16);
    let p = pvalue_nuisance(
        &obs,
        &model,
        NuisanceStrategy::CiAdjusted {
            gamma: 1e-8,
            interval: Some((2.5, 3.5)),
        },
    )
    .unwrap()
    .p;
    let oracle = (0..=700)
        .map(|k| linear_tail(16, 2.5 + k as f64 / 700.0))
        .fold(0.0, f64::max)
        + 1e-8;
    assert_relative_eq!(p, oracle, max_relative = 1e-6);
    assert!(
        p > pvalue_nuisance(&obs, &model, NuisanceStrategy::PlugIn)
            .unwrap()
            .p
    );
}

#[test]
fn supremum_needs_bounded_range() {
    let model = counted_background(3.0, 9);
    let obs = Observation::nominal(&model, 5);
    assert!(pvalue_nuisance(
        &obs,
        &model,
        NuisanceStrategy::Supremum {
            lo: 0.0,
            hi: f64::INFINITY
        }
    )
    .is_err());
    let exact = CountingModel::exact(3.0, 1.0).unwrap();
    assert!(pvalue_nuisance(
        &Observation::nominal(&exact, 5),
        &exact,
        NuisanceStrategy::Conditioning
    )
    .is_err());
}

#[test]
fn combination_rules_match_uniform_monte_carlo() {
    let mut rng = rng::stream(11, rng::family::SAMPLES, 0);
    let draws = 400_000;
    let (mut prod_hits, mut min_hits) = (0u64, 0u64);
    for _ in 0..draws {
        let (u, v): (f64, f64) = (rng.random(), rng.random());
        prod_hits += (u * v <= 0.25) as u64;
        min_hits += (u.min(v) <= 0.01) as u64;
    }
    let check = |hits: u64, p: f64| {
        let est = hits as f64 / draws as f64;
        let se = (p * (1.0 - p) / draws as f64).sqrt();
        assert!((est - p).abs() < 5.0 * se, "{est} vs {p}");
    };
    let prod = combine_pvalues(&[0.5, 0.5], CombineRule::Product)
        .unwrap()
        .p;
    assert!((prod - 0.5966).abs() < 1e-4);
    check(prod_hits, prod);
    check(
        min_hits,
        combine_pvalues(&[0.01, 0.3], CombineRule::Min).unwrap().p,
    );
    let tiny = combine_pvalues(&[1e-6, 0.1], CombineRule::Min).unwrap().p;
    assert_relative_eq!(tiny, 1.0 - (1.0 - 1e-6f64).powi(2), max_relative = 1e-9);
    for p in [1e-5, 0.01, 0.3, 0.9] {
        assert!(combine_pvalues(&[p, 1.0], CombineRule::Product).unwrap().p >= p);
    }
}

#[test]
fn product_rule_is_not_associative() {
    let (a, b, c) = (0.01, 0.05, 0.5);
    let nested = combine_pvalues(
        &[combine_pvalues(&[a, b], CombineRule::Product).unwrap().p, c],
        CombineRule::Product,
    )
    .unwrap()
    .p;
    let flat = combine_pvalues(&[a, b, c], CombineRule::Product).unwrap().p;
    assert!((nested - flat).abs() > 1e-6);
}

#[test]
fn cls_is_conservative() {
    let mut count = 0;
    for n in 0..10u64 {
        for bi in 0..10 {
            for si in 0..10 {
                let (b, s) = (0.5 * bi as f64, 0.7 * si as f64 + 0.1);
                let r = cls_counting(n, b, s).unwrap();
                assert!(r.cls >= r.one_minus_p1 - 1e-15);
                count += 1;
            }
        }
    }
    assert_eq!(count, 1000);
    assert_relative_eq!(
        cls_counting(0, 3.0, 3.0).unwrap().cls,
        (-3f64).exp(),
        epsilon = 1e-12
    );
    // n above the background distribution
    let r = cls_counting(15, 3.0, 20.0).unwrap();
    assert!((r.cls - r.one_minus_p1).abs() < 1e-2 * r.one_minus_p1);
}

#[test]
fn zero_count_cls_limit_is_background_free() {
    for b in [0.0, 1.0, 3.0] {
        let u = cls_upper_limit(0, b, 0.9).unwrap().upper().unwrap();
        assert_relative_eq!(u, 10f64.ln(), epsilon = 1e-9);
    }
}

#[test]
fn punzi_matches_exact_tail_bisection() {
    let model = CountingModel::exact(3.0, 1.0).unwrap();
    let alpha = sigma_to_p(5.0);
    let r = punzi_sensitivity(&model, alpha, 0.95).unwrap();
    assert_eq!(r.t_crit, 16);
    assert!(linear_tail(15, 3.0) > alpha && linear_tail(16, 3.0) <= alpha);
    let (mut lo, mut hi) = (0.0, 100.0);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if linear_tail(16, 3.0 + mid) >= 0.95 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    assert!((r.s_min - hi).abs() < 1e-3, "{} vs {hi}", r.s_min);
    let looser = punzi_sensitivity(&model, 1e-3, 0.95).unwrap();
    assert!(looser.t_crit < r.t_crit && looser.s_min < r.s_min);
}

#[test]
fn punzi_zero_background_is_degenerate() {
    let r = punzi_sensitivity(&CountingModel::exact(0.0, 1.0).unwrap(), 1e-3, 0.95).unwrap();
    assert_eq!(r.t_crit, 1);
    assert_relative_eq!(r.s_min, 20f64.ln(), epsilon = 1e-9);
}

#[test]
fn median_sensitivity_properties() {
    let fixed = CountingModel::exact(0.0, 1.0).unwrap();
    let lim = |m: CountingModel| move |o: &Observation| upper_limit(&m, o, 0.9);
    let med = median_sensitivity(&fixed, 11, 5, lim(fixed)).unwrap();
    assert!((med.median - 10f64.ln()).abs() < 1e-3);
    let model = CountingModel::exact(3.0, 1.0).unwrap();
    let a = median_sensitivity(&model, 101, 42, lim(model)).unwrap();
    let b = median_sensitivity(&model, 101, 42, lim(model)).unwrap();
    assert_eq!(a, b);
    let mut inv: Vec<f64> = a.limits.iter().map(|l| 1.0 / l).collect();
    inv.sort_by(f64::total_cmp);
    assert_eq!(inv[50], 1.0 / a.median);
    assert!(median_sensitivity(&model, 100, 42, lim(model)).is_err());
}
