use tsemos_demo::{miscalibrated_pit, score_profile, seasonal_curve};

#[test]
fn profile_is_smallest_at_the_mean() {
    let rows = score_profile(1.0, 2.0, -5.0, 7.0, 121).unwrap();
    assert_eq!(rows.len(), 121);
    let best = rows.iter().min_by(|a, b| a[1].total_cmp(&b[1])).unwrap();
    assert!((best[0] - 1.0).abs() < 1e-9);
    // CRPS of N(mu, s) at y = mu is s (2 phi(0) - 1/sqrt(pi))
    assert!((best[1] - 2.0 * 0.2336950).abs() < 1e-6);
    assert!(rows.iter().all(|r| r[1] >= 0.0 && r[2].is_finite()));
    assert!(score_profile(0.0, -1.0, 0.0, 1.0, 10).is_err());
    assert!(score_profile(0.0, 1.0, 1.0, 0.0, 10).is_err());
}

#[test]
fn seasonal_curve_repeats_yearly() {
    let loc = [1.0, 0.9, 2.0, -1.0, 0.3, 0.0, 0.05, 0.0, 0.0, 0.0];
    let scale = [0.1, 0.3, 0.2, 0.1, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
    let rows = seasonal_curve(&loc, &scale, 10.0, 1.0, 1500).unwrap();
    assert_eq!(rows.len(), 1500);
    assert!(rows.iter().all(|r| r[2] > 0.0));
    // 1461 days are exactly four periods
    let (a, b) = (rows[10], rows[10 + 1461]);
    assert!((a[1] - b[1]).abs() < 1e-9 && (a[2] - b[2]).abs() < 1e-9);
    assert!((rows[0][1] - rows[182][1]).abs() > 1.0);
    assert!(seasonal_curve(&loc[..9], &scale, 10.0, 1.0, 10).is_err());
}

#[test]
fn underdispersion_shows_in_pit_variance() {
    let (calibrated, v1) = miscalibrated_pit(0.0, 1.0, 20_000, 10, 3).unwrap();
    assert_eq!(calibrated.iter().sum::<usize>(), 20_000);
    assert!((v1 - 1.0 / 12.0).abs() < 0.003);
    let (narrow, v2) = miscalibrated_pit(0.0, 0.5, 20_000, 10, 3).unwrap();
    assert!(v2 > 0.1);
    assert!(narrow[0] > 2 * narrow[5] && narrow[9] > 2 * narrow[5]);
    let (_, v3) = miscalibrated_pit(0.0, 2.0, 20_000, 10, 3).unwrap();
    assert!(v3 < 1.0 / 12.0);
}
