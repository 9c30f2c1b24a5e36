use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use tsemos::timeseries::*;

fn ar_sim(tau: &[f64], n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let burn = 500;
    let mut x = vec![0.0; n + burn];
    for t in 0..n + burn {
        let mut v: f64 = StandardNormal.sample(&mut rng);
        for (j, c) in tau.iter().enumerate() {
            if t > j {
                v += c * x[t - j - 1];
            }
        }
        x[t] = v;
    }
    x.split_off(burn)
}

// Two-pass autocorrelation written out separately from the library.
fn naive_acf(x: &[f64], lag: usize) -> f64 {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let c0: f64 = x.iter().map(|v| (v - m) * (v - m)).sum();
    let ck: f64 = (lag..x.len()).map(|t| (x[t] - m) * (x[t - lag] - m)).sum();
    ck / c0
}

#[test]
fn acf_matches_two_pass_computation() {
    let x = ar_sim(&[0.4, -0.2], 800, 3);
    let r = acf(&x, 6).unwrap();
    for (k, v) in r.iter().enumerate() {
        assert!((v - naive_acf(&x, k + 1)).abs() < 1e-12);
    }
}

#[test]
fn acf_examples() {
    let alt: Vec<f64> = (0..2000)
        .map(|i| if i % 2 == 0 { 1.0 } else { -1.0 })
        .collect();
    assert!((acf(&alt, 1).unwrap()[0] + 1.0).abs() < 1e-3);
    let noise = ar_sim(&[], 5000, 9);
    assert!(acf(&noise, 1).unwrap()[0].abs() < 3.0 / 5000f64.sqrt());
    let ar1 = ar_sim(&[0.7], 5000, 10);
    assert!((acf(&ar1, 1).unwrap()[0] - 0.7).abs() < 0.05);
    assert!(acf(&[2.0; 50], 3).is_err());
}

#[test]
fn yule_walker_order_selection() {
    let zero = (0..100)
        .filter(|s| {
            fit_ar_yule_walker(&ar_sim(&[], 5000, *s), 10)
                .unwrap()
                .coeffs
                .order()
                == 0
        })
        .count();
    assert!(zero > 50, "order 0 in {zero}/100");

    let fit = fit_ar_yule_walker(&ar_sim(&[0.5, 0.3], 5000, 4), 10).unwrap();
    assert_eq!(fit.coeffs.order(), 2);
    assert!((fit.coeffs.tau()[0] - 0.5).abs() < 0.05);
    assert!((fit.coeffs.tau()[1] - 0.3).abs() < 0.05);
}

#[test]
fn residual_like_series_pick_low_orders() {
    // five years of daily AR(1) errors, as left over after deseasonalizing
    let n = 1826;
    let low = (0..50)
        .filter(|s| {
            let x = ar_sim(&[0.7], n, 1000 + s);
            let p = fit_ar_yule_walker(&x, default_max_order(n))
                .unwrap()
                .coeffs
                .order();
            (1..=3).contains(&p)
        })
        .count();
    assert!(low >= 40, "low orders in {low}/50");
}

#[test]
fn one_step_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let eta = rng.random_range(-2.0..2.0);
        let (t1, t2) = (rng.random_range(-0.6..0.6), rng.random_range(-0.3..0.3));
        let h: Vec<f64> = (0..4).map(|_| rng.random_range(-3.0..3.0)).collect();
        let ar = ArCoeffs::new(eta, vec![t1, t2]).unwrap();
        let want = eta + t1 * (h[3] - eta) + t2 * (h[2] - eta);
        assert!((ar_one_step(&ar, &h).unwrap() - want).abs() < 1e-12);
    }
    let ar = ArCoeffs::new(0.0, vec![0.5]).unwrap();
    assert_eq!(ar_one_step(&ar, &[1.0]).unwrap(), 0.5);
    assert_eq!(ar_multistep(&ar, &[1.0], 2).unwrap(), vec![0.5, 0.25]);
    assert!(ar_one_step(&ArCoeffs::new(0.0, vec![0.1, 0.1]).unwrap(), &[1.0]).is_err());
}

#[test]
fn multistep_matches_unrolled_recursion() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..20 {
        let eta = rng.random_range(-1.0..1.0);
        let t = [
            0.4,
            rng.random_range(-0.2..0.2),
            rng.random_range(-0.1..0.1),
        ];
        let h: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
        let ar = ArCoeffs::new(eta, t.to_vec()).unwrap();
        let d = |v: f64| v - eta;
        let (a, b, c) = (d(h[2]), d(h[1]), d(h[0]));
        let p1 = t[0] * a + t[1] * b + t[2] * c;
        let p2 = t[0] * p1 + t[1] * a + t[2] * b;
        let p3 = t[0] * p2 + t[1] * p1 + t[2] * a;
        let p4 = t[0] * p3 + t[1] * p2 + t[2] * p1;
        let p5 = t[0] * p4 + t[1] * p3 + t[2] * p2;
        let got = ar_multistep(&ar, &h, 5).unwrap();
        for (g, w) in got.iter().zip([p1, p2, p3, p4, p5]) {
            assert!((g - (eta + w)).abs() < 1e-12);
        }
        assert_eq!(got[0], ar_one_step(&ar, &h).unwrap());
    }
}

#[test]
fn garch_examples() {
    let g = GarchCoeffs::new(0.1, 0.5, 0.3).unwrap();
    assert!((g.step(1.0, 1.0) - 0.9).abs() < 1e-15);
    let flat = GarchCoeffs::new(0.4, 0.0, 0.0).unwrap();
    let out = garch_filter(&flat, &[3.0, 0.1, 7.0, 2.0], 1.0).unwrap();
    assert!(out[1..].iter().all(|v| *v == 0.4));
    assert!(garch_filter(&g, &[1.0, -0.5], 1.0).is_err());
}

#[test]
fn ljung_box_against_chi_squared_oracle() {
    for (seed, k) in [(1u64, 1usize), (2, 5), (3, 10), (4, 20)] {
        let x = ar_sim(&[0.15], 400, seed);
        let n = x.len() as f64;
        let q: f64 = (1..=k)
            .map(|j| naive_acf(&x, j).powi(2) / (n - j as f64))
            .sum::<f64>()
            * n
            * (n + 2.0);
        let lb = ljung_box(&x, k).unwrap();
        assert!((lb.statistic - q).abs() < 1e-9 * q.max(1.0));
        let p = 1.0 - ChiSquared::new(k as f64).unwrap().cdf(q);
        assert!(
            (lb.p_value - p).abs() < 1e-10,
            "k {k}: {} vs {p}",
            lb.p_value
        );
    }
}

#[test]
fn ljung_box_power() {
    let x = ar_sim(&[0.8], 1000, 21);
    assert!(ljung_box(&x, 5).unwrap().p_value < 1e-6);
}
