//! Fourier seasonal basis and the seasonal location / log-scale predictors
//! shared by the SEMOS family.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::{Error, Result};

/// Length of the seasonal cycle in days.
pub const PERIOD_DAYS: f64 = 365.25;

/// Number of coefficients in one seasonal predictor.
pub const N_COEFFS: usize = 10;

/// Two-harmonic Fourier basis at running day index `t`:
/// `(sin(2 pi t / P), cos(2 pi t / P), sin(4 pi t / P), cos(4 pi t / P))`.
pub fn fourier_features(t: f64) -> [f64; 4] {
    let w = 2.0 * PI * t / PERIOD_DAYS;
    let (s1, c1) = w.sin_cos();
    let (s2, c2) = (2.0 * w).sin_cos();
    [s1, c1, s2, c2]
}

/// Coefficients of one seasonal linear predictor
/// `intercept + f0(t) + (slope + f1(t)) * x`.
///
/// Serialized as the flat array
/// `[intercept, slope, fi_1..fi_4, fs_1..fs_4]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct SeasonalCoeffs {
    pub intercept: f64,
    pub slope: f64,
    pub fourier_intercept: [f64; 4],
    pub fourier_slope: [f64; 4],
}

impl SeasonalCoeffs {
    /// Intercept/slope only, all Fourier terms zero.
    pub fn affine(intercept: f64, slope: f64) -> Self {
        Self {
            intercept,
            slope,
            ..Self::default()
        }
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        if v.len() != N_COEFFS {
            return Err(Error::InvalidInput(format!(
                "seasonal coefficients need {N_COEFFS} values, got {}",
                v.len()
            )));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput(
                "non-finite seasonal coefficient".into(),
            ));
        }
        let mut fi = [0.0; 4];
        let mut fs = [0.0; 4];
        fi.copy_from_slice(&v[2..6]);
        fs.copy_from_slice(&v[6..10]);
        Ok(Self {
            intercept: v[0],
            slope: v[1],
            fourier_intercept: fi,
            fourier_slope: fs,
        })
    }

    pub fn to_array(&self) -> [f64; N_COEFFS] {
        let mut out = [0.0; N_COEFFS];
        out[0] = self.intercept;
        out[1] = self.slope;
        out[2..6].copy_from_slice(&self.fourier_intercept);
        out[6..10].copy_from_slice(&self.fourier_slope);
        out
    }

    /// `intercept + f0(t) + (slope + f1(t)) * x` for precomputed features.
    pub fn predictor(&self, features: &[f64; 4], x: f64) -> f64 {
        let f0 = dot4(&self.fourier_intercept, features);
        let f1 = dot4(&self.fourier_slope, features);
        self.intercept + f0 + (self.slope + f1) * x
    }

    /// Amplitude of the first harmonic of the seasonal intercept.
    pub fn intercept_amplitude(&self, harmonic: usize) -> f64 {
        let i = 2 * (harmonic - 1);
        self.fourier_intercept[i].hypot(self.fourier_intercept[i + 1])
    }
}

impl TryFrom<Vec<f64>> for SeasonalCoeffs {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::from_slice(&v)
    }
}

impl From<SeasonalCoeffs> for Vec<f64> {
    fn from(c: SeasonalCoeffs) -> Self {
        c.to_array().to_vec()
    }
}

fn dot4(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2] + a[3] * b[3]
}

/// The ten regressors of a seasonal predictor: `[1, x, F(t), F(t) * x]`.
pub fn design_row(t: f64, x: f64) -> [f64; N_COEFFS] {
    let f = fourier_features(t);
    [
        1.0,
        x,
        f[0],
        f[1],
        f[2],
        f[3],
        f[0] * x,
        f[1] * x,
        f[2] * x,
        f[3] * x,
    ]
}

/// Seasonal location `mu_S(t)` from the ensemble mean.
pub fn seasonal_location(c: &SeasonalCoeffs, t: f64, ens_mean: f64) -> f64 {
    c.predictor(&fourier_features(t), ens_mean)
}

/// Seasonal log-scale `log sigma_S(t)`. The raw ensemble standard deviation
/// enters linearly, not its logarithm.
pub fn seasonal_logscale(c: &SeasonalCoeffs, t: f64, ens_sd: f64) -> f64 {
    c.predictor(&fourier_features(t), ens_sd)
}
