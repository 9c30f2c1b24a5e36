#![allow(clippy::excessive_precision)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use tsemos::scoring::*;
use tsemos::special::{chi2_sf, gamma_q, norm_cdf, norm_quantile};
use tsemos::verify::rank_histogram;

fn n01() -> GaussianParams {
    GaussianParams::new(0.0, 1.0).unwrap()
}

#[test]
fn crps_reference_values() {
    assert!((crps_normal(n01(), 0.0) - 0.2336950).abs() < 1e-6);
    assert!((crps_normal(n01(), 1.0) - 0.6024414).abs() < 1e-6);
    for s in [0.5, 2.0, 10.0] {
        let g = GaussianParams::new(0.0, s).unwrap();
        assert!((crps_normal(g, 0.0) - s * 0.2336950).abs() < 1e-6 * s);
    }
}

#[test]
fn crps_quadrature_examples() {
    let q = crps_integral(|z| n01().cdf(z), 0.0, 1e-10).unwrap();
    assert!((q - crps_normal(n01(), 0.0)).abs() < 1e-6);
    let g = GaussianParams::new(3.0, 2.0).unwrap();
    let q = crps_integral(|z| g.cdf(z), -1.0, 1e-10).unwrap();
    assert!((q - crps_normal(g, -1.0)).abs() < 1e-6);
    // point mass at y
    let q = crps_integral(|z| if z >= 2.5 { 1.0 } else { 0.0 }, 2.5, 1e-10).unwrap();
    assert!(q.abs() < 1e-9);
}

#[test]
fn ensemble_crps_matches_step_cdf_integral() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..20 {
        let members: Vec<f64> = (0..10).map(|_| rng.random_range(-3.0..3.0)).collect();
        let y = rng.random_range(-4.0..4.0);
        let cdf =
            |z: f64| members.iter().filter(|x| **x <= z).count() as f64 / members.len() as f64;
        let q = crps_integral(cdf, y, 1e-11).unwrap();
        let diff = (crps_ensemble(&members, y) - q).abs();
        assert!(diff < 1e-8, "diff {diff:e}");
    }
    assert_eq!(crps_ensemble(&[1.5], 4.0), 2.5);
    assert_eq!(crps_ensemble(&[2.0; 7], 2.0), 0.0);
}

#[test]
fn logs_pit_interval_examples() {
    assert!((logs_normal(n01(), 0.0) - 0.9189385).abs() < 1e-7);
    assert!((logs_normal(n01(), 2.0) - 2.9189385).abs() < 1e-7);
    let g = GaussianParams::new(4.0, 3.0).unwrap();
    assert_eq!(pit_normal(g, 4.0), 0.5);
    assert!((pit_normal(g, 4.0 + 1.959964 * 3.0) - 0.975).abs() < 1e-6);

    let level = ensemble_nominal_level(50);
    assert!((level - 49.0 / 51.0).abs() < 1e-15);
    assert!((100.0 * level - 96.08).abs() < 0.005);
    let iv = central_interval(n01(), level, 0.0).unwrap();
    assert!((iv.width - 4.1238).abs() < 1e-3);
    assert!(!central_interval(n01(), level, 9.0).unwrap().covered);
}

#[test]
fn crpss_examples() {
    assert_eq!(crpss(1.0, 1.0).unwrap(), 0.0);
    assert!((crpss(0.890, 1.165).unwrap() - 0.236).abs() < 1e-3);
    assert_eq!(crpss(2.0, 1.0).unwrap(), -1.0);
}

#[test]
fn summary_examples() {
    let case = |se: f64| CaseScore {
        crps: 1.0,
        logs: Some(1.0),
        se,
        pit: Some(0.5),
        width: 2.0,
        covered: se < 4.0,
    };
    let s = summarize(&[case(1.0), case(9.0)]).unwrap();
    assert!((s.rmse - 5f64.sqrt()).abs() < 1e-12);
    assert_eq!(s.coverage, 50.0);
    let one = summarize(&[case(1.0)]).unwrap();
    assert_eq!((one.coverage, one.n, one.mean_width), (100.0, 1, 2.0));
}

#[test]
fn exchangeable_ranks_are_uniform() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let m = 10;
    let ranks: Vec<usize> = (0..20_000)
        .map(|_| {
            let members: Vec<f64> = (0..m).map(|_| StandardNormal.sample(&mut rng)).collect();
            let y: f64 = StandardNormal.sample(&mut rng);
            verification_rank(&members, y, &mut rng)
        })
        .collect();
    let counts = rank_histogram(&ranks, m).unwrap();
    let expected = ranks.len() as f64 / (m + 1) as f64;
    let stat: f64 = counts
        .iter()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum();
    let p = 1.0 - ChiSquared::new(m as f64).unwrap().cdf(stat);
    assert!(p > 0.01, "chi-squared p {p}");
    assert_eq!(verification_rank(&[1.0, 2.0, 3.0], -5.0, &mut rng), 1);
    assert_eq!(verification_rank(&[1.0, 2.0, 3.0], 5.0, &mut rng), 4);
}

#[test]
fn special_functions_match_statrs() {
    let n = Normal::new(0.0, 1.0).unwrap();
    for i in -80..=80 {
        let z = i as f64 * 0.1;
        let want = n.cdf(z);
        assert!((norm_cdf(z) - want).abs() <= 1e-10 * want, "z {z}");
    }
    // 30-digit reference values
    for (z, want) in [
        (-8.0, 6.2209605742717841235e-16),
        (-5.0, 2.8665157187919391167e-7),
        (-2.8, 0.0025551303304279342076),
        (-1.0, 0.15865525393145705141),
        (0.5, 0.69146246127401310364),
        (3.0, 0.99865010196836990547),
    ] {
        assert!(
            (norm_cdf(z) - want).abs() <= (4.0 + z * z) * f64::EPSILON * want,
            "z {z}"
        );
    }
    for i in 1..1000 {
        let p = i as f64 / 1000.0;
        assert!((norm_quantile(p) - n.inverse_cdf(p)).abs() < 1e-9);
    }
    for df in [1.0, 2.0, 5.0, 10.0, 30.0] {
        let c = ChiSquared::new(df).unwrap();
        for q in [0.01, 0.5, 1.0, 3.0, 10.0, 25.0, 60.0] {
            let want = 1.0 - c.cdf(q);
            assert!((chi2_sf(q, df) - want).abs() < 1e-10, "df {df} q {q}");
        }
    }
    for (a, x) in [(0.5, 0.2), (3.0, 2.5), (10.0, 14.0), (25.0, 20.0)] {
        let want = statrs::function::gamma::gamma_ur(a, x);
        assert!((gamma_q(a, x) - want).abs() < 1e-12);
    }
}
