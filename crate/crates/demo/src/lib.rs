//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Three operations are exported: a score profile of a Gaussian forecast,
//! the seasonal location and scale over one year, and the PIT histogram of
//! a deliberately miscalibrated forecast. The plain functions below do the
//! work and are tested natively; the `#[wasm_bindgen]` wrappers only flatten
//! results into `Float64Array`s.

// `!(hi > lo)` also rejects NaN bounds.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use tsemos::scoring::{crps_normal, logs_normal, pit_normal, GaussianParams};
use tsemos::seasonal::{seasonal_location, seasonal_logscale, SeasonalCoeffs};
use tsemos::verify::pit_histogram;
use wasm_bindgen::prelude::*;

/// CRPS and LogS of `N(mu, sigma)` for `n` observations spread evenly over
/// `[lo, hi]`. Rows are `(y, crps, logs)`.
pub fn score_profile(
    mu: f64,
    sigma: f64,
    lo: f64,
    hi: f64,
    n: usize,
) -> tsemos::Result<Vec<[f64; 3]>> {
    let g = GaussianParams::new(mu, sigma)?;
    if n < 2 || !(hi > lo) {
        return Err(tsemos::Error::InvalidInput(
            "need n >= 2 and hi > lo".into(),
        ));
    }
    Ok((0..n)
        .map(|i| {
            let y = lo + (hi - lo) * i as f64 / (n - 1) as f64;
            [y, crps_normal(g, y), logs_normal(g, y)]
        })
        .collect())
}

/// Seasonal location and scale for days `1..=days` at a fixed ensemble
/// mean and spread. `loc` and `scale` use the ten-coefficient layout.
/// Rows are `(t, mu, sigma)`.
pub fn seasonal_curve(
    loc: &[f64],
    scale: &[f64],
    ens_mean: f64,
    ens_sd: f64,
    days: usize,
) -> tsemos::Result<Vec<[f64; 3]>> {
    let (l, s) = (
        SeasonalCoeffs::from_slice(loc)?,
        SeasonalCoeffs::from_slice(scale)?,
    );
    Ok((1..=days)
        .map(|d| {
            let t = d as f64;
            [
                t,
                seasonal_location(&l, t, ens_mean),
                seasonal_logscale(&s, t, ens_sd).exp(),
            ]
        })
        .collect())
}

/// PIT counts of forecasts `N(bias, spread)` for standard normal outcomes,
/// plus the PIT variance. Unbiased unit-spread forecasts are calibrated;
/// `spread < 1` gives the U shape of an underdispersive ensemble.
pub fn miscalibrated_pit(
    bias: f64,
    spread: f64,
    n: usize,
    bins: usize,
    seed: u64,
) -> tsemos::Result<(Vec<usize>, f64)> {
    let g = GaussianParams::new(bias, spread)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pit: Vec<f64> = (0..n)
        .map(|_| {
            let y: f64 = StandardNormal.sample(&mut rng);
            pit_normal(g, y)
        })
        .collect();
    let h = pit_histogram(&pit, bins)?;
    Ok((h.counts, h.variance))
}

fn js_err(e: tsemos::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Flattened `score_profile`: `[y0, crps0, logs0, y1, ...]`.
#[wasm_bindgen(js_name = scoreProfile)]
pub fn score_profile_js(
    mu: f64,
    sigma: f64,
    lo: f64,
    hi: f64,
    n: usize,
) -> Result<Vec<f64>, JsError> {
    score_profile(mu, sigma, lo, hi, n)
        .map(|rows| rows.concat())
        .map_err(js_err)
}

/// Flattened `seasonal_curve`: `[t0, mu0, sigma0, t1, ...]`.
#[wasm_bindgen(js_name = seasonalCurve)]
pub fn seasonal_curve_js(
    loc: Vec<f64>,
    scale: Vec<f64>,
    ens_mean: f64,
    ens_sd: f64,
    days: usize,
) -> Result<Vec<f64>, JsError> {
    seasonal_curve(&loc, &scale, ens_mean, ens_sd, days)
        .map(|rows| rows.concat())
        .map_err(js_err)
}

/// `miscalibrated_pit` as `[count0, ..., count_{bins-1}, variance]`.
#[wasm_bindgen(js_name = pitHistogram)]
pub fn miscalibrated_pit_js(
    bias: f64,
    spread: f64,
    n: usize,
    bins: usize,
    seed: u32,
) -> Result<Vec<f64>, JsError> {
    let (counts, var) = miscalibrated_pit(bias, spread, n, bins, seed as u64).map_err(js_err)?;
    let mut out: Vec<f64> = counts.into_iter().map(|c| c as f64).collect();
    out.push(var);
    Ok(out)
}
