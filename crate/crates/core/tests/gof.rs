mod common;

use common::{chi2_tail_by_quadrature, ks_distance, ks_pvalue, simpson};
use countstat::gof::*;
use countstat::rng;
use countstat::special::{chi2_cdf, sigma_to_p};
use rand::RngExt;

#[test]
fn perfect_agreement() {
    let data = BinnedData::new(vec![0.0, 1.0, 2.0, 3.0], vec![4.0, 9.0, 16.0], None).unwrap();
    let r = chi2_binned(&data, &[4.0, 9.0, 16.0], 0).unwrap();
    assert_eq!((r.s, r.ndof, r.p), (0.0, 3, 1.0));
    assert!(r.low_prediction);
    assert!(chi2_binned(&data, &[4.0, 0.0, 16.0], 0).is_err());
    assert!(BinnedData::new(vec![0.0, 1.0, 1.0], vec![1.0, 1.0], None).is_err());
}

#[test]
fn hundred_bin_expectation() {
    let edges = BinnedData::uniform_edges(0.0, 1.0, 100);
    let flat = Polynomial::new(0, &edges);
    let toys = 2000;
    let s: Vec<f64> = (0..toys)
        .map(|i| {
            let toy = poisson_toy(
                &flat,
                &[1e5],
                &edges,
                &mut rng::stream(4, rng::family::GOF_TOYS, i),
            );
            let f = fit(&flat, &toy, 0, 0).unwrap();
            let r = chi2_binned(&toy, &flat.predict(&f.params, &edges), 1).unwrap();
            assert_eq!(r.ndof, 99);
            r.s
        })
        .collect();
    let mean = s.iter().sum::<f64>() / toys as f64;
    let sd = (s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (toys as f64 - 1.0)).sqrt();
    assert!(
        (mean - 99.0).abs() < 4.0 * 14.0 / (toys as f64).sqrt(),
        "{mean}"
    );
    assert!((sd - 14.0).abs() < 1.0, "{sd}");
    assert_eq!((2.0f64 * 99.0).sqrt().round(), 14.0);
}

#[test]
fn marginal_chi2_is_unremarkable() {
    let data =
        BinnedData::new(BinnedData::uniform_edges(0.0, 1.0, 99), vec![1.0; 99], None).unwrap();
    // S = 110 spread over 99 bins at unit variance
    let pred: Vec<f64> = vec![1.0 + (110.0f64 / 99.0).sqrt(); 99];
    let data = BinnedData {
        variance: Some(vec![1.0; 99]),
        ..data
    };
    let r = chi2_binned(&data, &pred, 0).unwrap();
    assert!((r.s - 110.0).abs() < 1e-9);
    let oracle = chi2_tail_by_quadrature(110.0, 99.0);
    assert!((r.p - oracle).abs() < 1e-6, "{} vs {oracle}", r.p);
    assert!((r.p - 0.21).abs() < 0.005);
}

#[test]
fn chi2_is_permutation_invariant_and_additive() {
    let edges = BinnedData::uniform_edges(0.0, 6.0, 6);
    let obs = vec![3.0, 7.0, 2.0, 9.0, 4.0, 5.0];
    let pred = vec![4.0, 5.5, 3.0, 7.0, 4.5, 6.0];
    let full = chi2_binned(
        &BinnedData::new(edges.clone(), obs.clone(), None).unwrap(),
        &pred,
        0,
    )
    .unwrap()
    .s;
    let order = [3, 0, 5, 1, 4, 2];
    let po: Vec<f64> = order.iter().map(|&i| obs[i]).collect();
    let pp: Vec<f64> = order.iter().map(|&i| pred[i]).collect();
    let permuted = chi2_binned(&BinnedData::new(edges, po, None).unwrap(), &pp, 0)
        .unwrap()
        .s;
    assert!((full - permuted).abs() < 1e-12);
    let part = |r: std::ops::Range<usize>| {
        let e = BinnedData::uniform_edges(0.0, r.len() as f64, r.len());
        chi2_binned(
            &BinnedData::new(e, obs[r.clone()].to_vec(), None).unwrap(),
            &pred[r],
            0,
        )
        .unwrap()
        .s
    };
    assert!((part(0..2) + part(2..6) - full).abs() < 1e-12);
}

#[test]
fn five_sigma_from_delta_chi2() {
    let r = delta_chi2_from_values(110.0, 85.0, 1).unwrap();
    assert_eq!(r.delta, 25.0);
    assert!((r.sigma - 5.0).abs() < 1e-9, "{}", r.sigma);
    // the one-parameter tail is the two-sided 5 sigma probability
    assert!((r.p / (2.0 * sigma_to_p(5.0)) - 1.0).abs() < 1e-9);
    // x = u² turns the one-parameter tail into a Gaussian one
    let phi = |u: f64| (-0.5 * u * u).exp() / (2.0 * std::f64::consts::PI).sqrt();
    assert!((r.p / (2.0 * simpson(phi, 5.0, 40.0, 200_000)) - 1.0).abs() < 1e-9);
    assert!(delta_chi2_from_values(80.0, 85.0, 1).is_err());
}

#[test]
fn identical_models_give_zero() {
    let edges = BinnedData::uniform_edges(0.0, 1.0, 20);
    let m = Polynomial::new(1, &edges);
    let toy = poisson_toy(
        &m,
        &[500.0, 100.0],
        &edges,
        &mut rng::stream(1, rng::family::GOF_TOYS, 0),
    );
    let r = chi2_difference(&toy, &m, &m, 1, NullRegime::Wilks).unwrap();
    assert!(r.delta.abs() < 1e-6);
    assert!((r.p - 1.0).abs() < 1e-3);
}

#[test]
fn nested_polynomials_follow_wilks() {
    let edges = BinnedData::uniform_edges(0.0, 1.0, 20);
    let (m1, m2) = (Polynomial::new(1, &edges), Polynomial::new(2, &edges));
    let deltas: Vec<f64> = (0..2000)
        .map(|i| {
            let toy = poisson_toy(
                &m1,
                &[20_000.0, 4000.0],
                &edges,
                &mut rng::stream(2, rng::family::GOF_TOYS, i),
            );
            chi2_difference(&toy, &m1, &m2, 1, NullRegime::Wilks)
                .unwrap()
                .delta
        })
        .collect();
    let d = ks_distance(&deltas, |x| chi2_cdf(x, 1.0));
    assert!(ks_pvalue(d, deltas.len()) > 0.01, "KS distance {d}");
}

#[test]
fn peak_search_exceeds_three_degrees_of_freedom() {
    let edges = BinnedData::uniform_edges(0.0, 10.0, 40);
    let (bg, peak) = (Polynomial::new(1, &edges), PeakModel::new(1, &edges));
    let toy = poisson_toy(
        &bg,
        &[10.0, 2.0],
        &edges,
        &mut rng::stream(3, rng::family::GOF_TOYS, 0),
    );
    let r = chi2_difference(
        &toy,
        &bg,
        &peak,
        3,
        NullRegime::McNull {
            n_toys: 400,
            seed: 9,
        },
    )
    .unwrap();
    let n = r.null_samples.len() as f64;
    let mean = r.null_samples.iter().sum::<f64>() / n;
    assert!(mean > 3.0, "{mean}");
    let tail = r.null_samples.iter().filter(|d| **d > 7.815).count() as f64 / n;
    assert!(tail > 0.05, "{tail}");
    assert!(r.p > 0.0 && r.p <= 1.0);
}

#[test]
fn mc_null_pvalues_are_valid() {
    let edges = BinnedData::uniform_edges(0.0, 1.0, 15);
    let (m1, m2) = (Polynomial::new(1, &edges), Polynomial::new(2, &edges));
    let datasets = 150;
    let ps: Vec<f64> = (0..datasets)
        .map(|i| {
            let data = poisson_toy(
                &m1,
                &[300.0, 60.0],
                &edges,
                &mut rng::stream(6, rng::family::SAMPLES, i),
            );
            chi2_difference(
                &data,
                &m1,
                &m2,
                1,
                NullRegime::McNull {
                    n_toys: 99,
                    seed: i,
                },
            )
            .unwrap()
            .p
        })
        .collect();
    for alpha in [0.1, 0.01] {
        let frac = ps.iter().filter(|p| **p <= alpha).count() as f64 / datasets as f64;
        let slack = 2.0 / 99f64.sqrt() + 3.0 * (alpha * (1.0 - alpha) / datasets as f64).sqrt();
        assert!(frac <= alpha + slack, "alpha {alpha}: {frac}");
    }
    assert!(ps.iter().all(|p| *p >= 0.01));
}

fn effective_f<M: BinnedModel>(m: &M, truth: &[f64], edges: &[f64]) -> DofScan {
    effective_dof_scan(m, truth, edges, 4000, 0, 12).unwrap()
}

#[test]
fn linear_fit_uses_two_degrees_of_freedom() {
    let edges = BinnedData::uniform_edges(0.0, 1.0, 50);
    let r = effective_f(&Polynomial::new(1, &edges), &[5000.0, 1000.0], &edges);
    assert_eq!(r.effective_f, 2, "{r:?}");
    assert!((r.mean_s - 48.0).abs() < 0.5);
}

#[test]
fn negligible_phase_is_not_a_parameter() {
    let edges = BinnedData::uniform_edges(0.0, 2.0 * std::f64::consts::PI, 50);
    let r = effective_f(&CosineModel { delta: 1e-6 }, &[1000.0, 1.0], &edges);
    assert_eq!(r.effective_f, 1, "{r:?}");
}

#[test]
fn small_oscillation_phase_identifies_one_combination() {
    let edges = BinnedData::uniform_edges(0.1, 1.0, 50);
    let m = OscillationModel {
        flux: vec![1e5; 50],
        dm2_max: 0.15,
    };
    let r = effective_f(&m, &[0.8, 0.1], &edges);
    assert_eq!(r.effective_f, 1, "{r:?}");
}

fn uniform_sample(n: usize, shift: f64, g: &mut impl rand::Rng) -> Vec<Vec<f64>> {
    (0..n).map(|_| vec![g.random::<f64>() + shift]).collect()
}

#[test]
fn small_samples_are_enumerated() {
    let ts = TwoSample::new(
        vec![vec![0.0], vec![0.3]],
        vec![vec![1.0], vec![1.7]],
        vec![1.0],
    )
    .unwrap();
    let r = energy_test(&ts, None, 0, 1).unwrap();
    assert!(r.exhaustive);
    assert_eq!(r.n_relabelings, 6);
    assert!(((r.p * 6.0).round() - r.p * 6.0).abs() < 1e-12);
    let swapped = TwoSample::new(ts.b.clone(), ts.a.clone(), vec![1.0]).unwrap();
    let e2 = energy_test(&swapped, None, 0, 1).unwrap().e;
    assert!((r.e - e2).abs() <= 1e-12 * r.e.abs());
}

#[test]
fn energy_is_invariant_under_rigid_motion_and_rescaling() {
    let mut g = rng::stream(7, rng::family::SAMPLES, 0);
    let pts = |n: usize, g: &mut rand_chacha::ChaCha8Rng| {
        (0..n)
            .map(|_| vec![g.random::<f64>(), g.random::<f64>()])
            .collect::<Vec<_>>()
    };
    let (a, b) = (pts(15, &mut g), pts(20, &mut g));
    let base = energy_test(
        &TwoSample::new(a.clone(), b.clone(), vec![1.0, 1.0]).unwrap(),
        Some(1e-6),
        99,
        3,
    )
    .unwrap();
    let (c, s) = (0.7f64.cos(), 0.7f64.sin());
    let moved = |p: &Vec<f64>| vec![c * p[0] - s * p[1] + 3.0, s * p[0] + c * p[1] - 1.0];
    let rot = TwoSample::new(
        a.iter().map(moved).collect(),
        b.iter().map(moved).collect(),
        vec![1.0, 1.0],
    )
    .unwrap();
    let r = energy_test(&rot, Some(1e-6), 99, 3).unwrap();
    assert!((r.e - base.e).abs() < 1e-9 * base.e.abs().max(1.0));
    assert_eq!(r.p, base.p);
    let scaled = |p: &Vec<f64>| p.iter().map(|x| 5.0 * x).collect::<Vec<f64>>();
    let sc = TwoSample::new(
        a.iter().map(scaled).collect(),
        b.iter().map(scaled).collect(),
        vec![5.0, 5.0],
    )
    .unwrap();
    let r = energy_test(&sc, Some(1e-6), 99, 3).unwrap();
    assert!((r.e - base.e).abs() < 1e-9 * base.e.abs().max(1.0));
}

#[test]
fn duplicate_points_stay_finite() {
    let ts = TwoSample::new(vec![vec![1.0]; 10], vec![vec![1.0]; 10], vec![1.0]).unwrap();
    let r = energy_test(&ts, None, 99, 1).unwrap();
    assert!(r.e.is_finite() && r.p.is_finite() && r.epsilon > 0.0);
    assert!(energy_test(&ts, Some(0.0), 99, 1).is_err());
    assert!(energy_test(&ts, None, 50, 1).is_err());
}

#[test]
fn energy_test_detects_a_shift() {
    let mut g = rng::stream(8, rng::family::SAMPLES, 0);
    let ts = TwoSample::new(
        uniform_sample(100, 0.0, &mut g),
        uniform_sample(100, 0.3, &mut g),
        vec![1.0],
    )
    .unwrap();
    assert!(energy_test(&ts, None, 199, 2).unwrap().p <= 0.01);
}

#[test]
fn energy_null_pvalues_are_uniform() {
    let ps: Vec<f64> = (0..1000)
        .map(|i| {
            let mut g = rng::stream(10, rng::family::SAMPLES, i);
            let ts = TwoSample::new(
                uniform_sample(100, 0.0, &mut g),
                uniform_sample(100, 0.0, &mut g),
                vec![1.0],
            )
            .unwrap();
            energy_test(&ts, None, 99, i).unwrap().p
        })
        .collect();
    let d = ks_distance(&ps, |x| x.clamp(0.0, 1.0));
    assert!(d < 0.05, "{d}");
}
