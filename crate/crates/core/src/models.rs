//! The six postprocessing models behind one interface.
//!
//! [`fit`] estimates a [`FittedModel`] on a training series;
//! [`FittedModel::predict`] turns any series that contains the history it
//! needs into Gaussian forecasts for a date range. Prediction for a target
//! day only reads observations that are available at issuance, i.e. up to
//! `lead_offset_days + 1` days before the target.
//!
//! EMOS and AR-EMOS re-estimate their coefficients on rolling windows for
//! every forecast day. The SEMOS family is fitted once on the static training
//! period; during prediction only the residual histories advance.

use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{time_index, StationSeries};
use crate::optimize::{minimize, OptResult, OptimizeSettings};
use crate::scoring::{crps_normal, GaussianParams};
use crate::seasonal::{design_row, fourier_features, SeasonalCoeffs, N_COEFFS, PERIOD_DAYS};
use crate::timeseries::{
    default_max_order, fit_ar_yule_walker, fit_garch11, ArCoeffs, GarchCoeffs,
};
use crate::{Error, Result};

/// Model variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "EMOS")]
    Emos,
    #[serde(rename = "AR-EMOS")]
    ArEmos,
    #[serde(rename = "SEMOS")]
    Semos,
    #[serde(rename = "DAR-SEMOS")]
    DarSemos,
    #[serde(rename = "DAR-GARCH-SEMOS")]
    DarGarchSemos,
    #[serde(rename = "SAR-SEMOS")]
    SarSemos,
}

impl ModelKind {
    pub const ALL: [ModelKind; 6] = [
        ModelKind::Emos,
        ModelKind::ArEmos,
        ModelKind::Semos,
        ModelKind::DarSemos,
        ModelKind::DarGarchSemos,
        ModelKind::SarSemos,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::Emos => "EMOS",
            ModelKind::ArEmos => "AR-EMOS",
            ModelKind::Semos => "SEMOS",
            ModelKind::DarSemos => "DAR-SEMOS",
            ModelKind::DarGarchSemos => "DAR-GARCH-SEMOS",
            ModelKind::SarSemos => "SAR-SEMOS",
        }
    }

    /// True for the statically fitted seasonal models.
    pub fn is_seasonal(&self) -> bool {
        !matches!(self, ModelKind::Emos | ModelKind::ArEmos)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_uppercase().replace('_', "-");
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == key)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown model '{s}'")))
    }
}

/// Estimation settings shared by all models.
#[derive(Debug, Clone, PartialEq)]
pub struct FitSettings {
    pub optimizer: OptimizeSettings,
    /// EMOS rolling training window in days.
    pub emos_window: usize,
    /// AR-EMOS window for the per-member AR fits.
    pub ar_window: usize,
    /// AR-EMOS window for the spread weight.
    pub weight_window: usize,
    pub ar_emos_max_order: usize,
    /// Upper bound for AR order selection in the SEMOS family; `None` uses
    /// [`default_max_order`].
    pub max_ar_order: Option<usize>,
    /// Half-width in days of the day-of-year pooling window for the
    /// empirical standard deviation used to initialize the scale.
    pub climatology_half_width: usize,
    /// Ridge weight applied to EMOS windows with (near-)constant spread.
    pub emos_ridge: f64,
}

impl Default for FitSettings {
    fn default() -> Self {
        Self {
            optimizer: OptimizeSettings::default(),
            emos_window: 30,
            ar_window: 90,
            weight_window: 30,
            ar_emos_max_order: 5,
            max_ar_order: None,
            climatology_half_width: 15,
            emos_ridge: 1e-8,
        }
    }
}

/// Minimum static training length for the seasonal models (two years).
pub const MIN_SEASONAL_TRAINING_DAYS: usize = 731;

/// Training metadata stored with every fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitMeta {
    pub station_id: String,
    pub lead_time_h: u32,
    /// Origin of the running time index (`t = 1`).
    pub train_start: NaiveDate,
    pub train_end: NaiveDate,
    pub n_train: usize,
    pub converged: bool,
    pub iterations: usize,
    /// Norm of the numerical objective gradient at the solution.
    #[serde(default)]
    pub gradient_norm: f64,
    /// Mean training CRPS at the initial coefficients.
    pub initial_crps: f64,
    /// Mean training CRPS at the fitted coefficients.
    pub train_crps: f64,
    /// Rolling window lengths (EMOS: `[window]`, AR-EMOS: `[ar, weight]`).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub windows: Vec<usize>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

/// A fitted model. Serializes to the documented JSON layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub kind: ModelKind,
    /// Location coefficients: `[a0, a1]` for EMOS, the ten seasonal
    /// coefficients for the SEMOS family, empty for AR-EMOS.
    pub loc: Vec<f64>,
    /// Scale coefficients, same layout as `loc`.
    pub scale: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ar: Option<ArCoeffs>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub garch: Option<GarchCoeffs>,
    /// AR-EMOS spread weight.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<f64>,
    /// AR-EMOS per-member AR fits (as of the end of training).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub member_ar: Option<Vec<ArCoeffs>>,
    pub meta: FitMeta,
}

/// One Gaussian forecast.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Forecast {
    pub date: NaiveDate,
    pub params: GaussianParams,
}

/// Training residuals of a fitted model.
#[derive(Debug, Clone, PartialEq)]
pub struct Residuals {
    pub dates: Vec<NaiveDate>,
    /// `y - mu`.
    pub raw: Vec<f64>,
    /// `(y - mu) / sigma`.
    pub standardized: Vec<f64>,
}

// ---------------------------------------------------------------------------
// SEMOS family core

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Variant {
    Plain,
    Deseasonalized,
    Garch,
    Standardized,
}

impl Variant {
    fn of(kind: ModelKind) -> Option<Self> {
        match kind {
            ModelKind::Semos => Some(Variant::Plain),
            ModelKind::DarSemos => Some(Variant::Deseasonalized),
            ModelKind::DarGarchSemos => Some(Variant::Garch),
            ModelKind::SarSemos => Some(Variant::Standardized),
            _ => None,
        }
    }
}

/// Per-day predictors of a series on the model's time axis.
struct Inputs {
    feats: Vec<[f64; 4]>,
    mean: Vec<f64>,
    sd: Vec<f64>,
    obs: Vec<f64>,
}

impl Inputs {
    fn new(series: &StationSeries, origin: NaiveDate) -> Result<Self> {
        Ok(Self {
            feats: series
                .dates()
                .iter()
                .map(|d| fourier_features(time_index(origin, *d)))
                .collect(),
            mean: series.ens_mean().to_vec(),
            sd: series.ens_sd().to_vec(),
            obs: series.complete_obs()?,
        })
    }

    fn len(&self) -> usize {
        self.obs.len()
    }
}

#[derive(Debug, Clone)]
struct SemosParams {
    variant: Variant,
    loc: SeasonalCoeffs,
    scale: SeasonalCoeffs,
    ar: ArCoeffs,
    garch: GarchCoeffs,
}

impl SemosParams {
    /// Number of leading days without a prediction.
    fn warmup(&self) -> usize {
        match self.variant {
            Variant::Plain => 0,
            _ => self.ar.order(),
        }
    }

    /// Unconstrained parameter vector
    /// `[loc(10), scale(10), eta, tau(p), sqrt(omega)(3)]`.
    fn pack(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(2 * N_COEFFS + 4 + self.ar.order());
        v.extend(self.loc.to_array());
        v.extend(self.scale.to_array());
        if self.variant != Variant::Plain {
            v.push(self.ar.eta());
            v.extend_from_slice(self.ar.tau());
        }
        if self.variant == Variant::Garch {
            v.extend(self.garch.roots());
        }
        v
    }

    fn unpack(&self, x: &[f64]) -> Option<Self> {
        let loc = SeasonalCoeffs::from_slice(&x[..N_COEFFS]).ok()?;
        let scale = SeasonalCoeffs::from_slice(&x[N_COEFFS..2 * N_COEFFS]).ok()?;
        let p = self.ar.order();
        let mut out = Self {
            loc,
            scale,
            ..self.clone()
        };
        if self.variant != Variant::Plain {
            let base = 2 * N_COEFFS;
            out.ar = ArCoeffs::new(x[base], x[base + 1..base + 1 + p].to_vec()).ok()?;
            if self.variant == Variant::Garch {
                let r = &x[base + 1 + p..base + 4 + p];
                out.garch = GarchCoeffs::from_roots([r[0], r[1], r[2]]);
            }
        }
        Some(out)
    }

    /// Predictive `(mu, sigma)` for every day with `lead_offset` unobserved
    /// days before it. Day `i` only reads observations up to
    /// `i - lead_offset - 1`. Days without enough history yield `None`.
    fn predict_path(&self, inp: &Inputs, lead_offset: usize) -> Vec<Option<(f64, f64)>> {
        let n = inp.len();
        let mu_s: Vec<f64> = (0..n)
            .map(|i| self.loc.predictor(&inp.feats[i], inp.mean[i]))
            .collect();
        let sigma_s: Vec<f64> = (0..n)
            .map(|i| self.scale.predictor(&inp.feats[i], inp.sd[i]).exp())
            .collect();
        let p = self.ar.order();
        let k = lead_offset;
        let first = if self.variant == Variant::Plain {
            0
        } else {
            p + k
        };
        let mut out = vec![None; n];

        match self.variant {
            Variant::Plain => {
                for i in 0..n {
                    out[i] = Some((mu_s[i], sigma_s[i]));
                }
            }
            Variant::Deseasonalized | Variant::Standardized => {
                let standardized = self.variant == Variant::Standardized;
                let hist: Vec<f64> = (0..n)
                    .map(|i| {
                        let r = inp.obs[i] - mu_s[i];
                        if standardized {
                            r / sigma_s[i]
                        } else {
                            r
                        }
                    })
                    .collect();
                for i in first..n {
                    let pred = ar_forecast(&self.ar, &hist[..i - k], k + 1);
                    let mu = if standardized {
                        mu_s[i] + sigma_s[i] * pred
                    } else {
                        mu_s[i] + pred
                    };
                    out[i] = Some((mu, sigma_s[i]));
                }
            }
            Variant::Garch => {
                let r: Vec<f64> = (0..n).map(|i| inp.obs[i] - mu_s[i]).collect();
                // conditional variances from observed residuals; var[d] uses rho(d-1)
                let g = &self.garch;
                let mut var = vec![f64::NAN; n];
                if p < n {
                    var[p] = g.initial_variance();
                    for d in p + 1..n {
                        let eps = r[d - 1] - ar_forecast(&self.ar, &r[..d - 1], 1);
                        let rho = eps / sigma_s[d - 1];
                        var[d] = g.step(var[d - 1], rho * rho);
                    }
                }
                let persistence = g.persistence();
                for i in first..n {
                    let pred = ar_forecast(&self.ar, &r[..i - k], k + 1);
                    let mut v = var[i - k];
                    for _ in 0..k {
                        v = g.omega0 + persistence * v;
                    }
                    out[i] = Some((mu_s[i] + pred, sigma_s[i] * v.sqrt()));
                }
            }
        }
        out
    }

    /// Mean training CRPS (one-step, observed histories).
    fn mean_crps(&self, inp: &Inputs) -> f64 {
        let path = self.predict_path(inp, 0);
        let mut total = 0.0;
        let mut count = 0usize;
        for (i, v) in path.iter().enumerate() {
            if let Some((mu, sigma)) = v {
                match GaussianParams::new(*mu, *sigma) {
                    Ok(g) => total += crps_normal(g, inp.obs[i]),
                    Err(_) => return f64::INFINITY,
                }
                count += 1;
            }
        }
        if count == 0 {
            f64::INFINITY
        } else {
            total / count as f64
        }
    }
}

/// `steps`-ahead AR prediction from the end of `hist`, feeding predictions
/// back. No stationarity warning; callers check once per fit or prediction.
fn ar_forecast(ar: &ArCoeffs, hist: &[f64], steps: usize) -> f64 {
    let p = ar.order();
    let eta = ar.eta();
    let tau = ar.tau();
    if p == 0 {
        return eta;
    }
    if steps == 1 {
        let n = hist.len();
        let mut acc = 0.0;
        for j in 0..p {
            acc += tau[j] * (hist[n - 1 - j] - eta);
        }
        return eta + acc;
    }
    let mut buf: Vec<f64> = hist[hist.len() - p..].to_vec();
    let mut last = eta;
    for _ in 0..steps {
        let n = buf.len();
        let mut acc = 0.0;
        for j in 0..p {
            acc += tau[j] * (buf[n - 1 - j] - eta);
        }
        last = eta + acc;
        buf.push(last);
    }
    last
}

fn ols(rows: &[[f64; N_COEFFS]], target: &[f64]) -> Result<[f64; N_COEFFS]> {
    let n = rows.len();
    let x = DMatrix::from_fn(n, N_COEFFS, |i, j| rows[i][j]);
    let y = DVector::from_column_slice(target);
    let svd = x.svd(true, true);
    let beta = svd
        .solve(&y, 1e-12)
        .map_err(|e| Error::NumericalFailure(format!("least squares failed: {e}")))?;
    let mut out = [0.0; N_COEFFS];
    out.copy_from_slice(beta.as_slice());
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericalFailure(
            "least squares produced non-finite coefficients".into(),
        ));
    }
    Ok(out)
}

/// Empirical standard deviation of `values` pooled over all days whose
/// position in the seasonal cycle lies within `half_width` days.
fn seasonal_window_sd(t: &[f64], values: &[f64], half_width: usize) -> Vec<f64> {
    let phase: Vec<f64> = t.iter().map(|v| v.rem_euclid(PERIOD_DAYS)).collect();
    let limit = half_width as f64 + 0.5;
    phase
        .iter()
        .map(|&a| {
            let (mut n, mut s, mut s2) = (0.0, 0.0, 0.0);
            for (&b, &v) in phase.iter().zip(values) {
                let d = (a - b).abs();
                if d.min(PERIOD_DAYS - d) <= limit {
                    n += 1.0;
                    s += v;
                    s2 += v * v;
                }
            }
            let mean = s / n;
            ((s2 - n * mean * mean) / (n - 1.0)).max(0.0).sqrt()
        })
        .collect()
}

fn fit_seasonal(
    kind: ModelKind,
    train: &StationSeries,
    settings: &FitSettings,
) -> Result<FittedModel> {
    let variant = Variant::of(kind).expect("seasonal kind");
    let n = train.len();
    if n < MIN_SEASONAL_TRAINING_DAYS {
        return Err(Error::InsufficientHistory {
            date: train.dates()[0],
            needed: MIN_SEASONAL_TRAINING_DAYS,
            got: n,
        });
    }
    let origin = train.dates()[0];
    let inp = Inputs::new(train, origin)?;
    let t: Vec<f64> = train
        .dates()
        .iter()
        .map(|d| time_index(origin, *d))
        .collect();
    let mut warnings = Vec::new();
    let max_order = settings
        .max_ar_order
        .unwrap_or_else(|| default_max_order(n));

    // I.1: location by least squares
    let loc_rows: Vec<_> = (0..n).map(|i| design_row(t[i], inp.mean[i])).collect();
    let loc = SeasonalCoeffs::from_slice(&ols(&loc_rows, &inp.obs)?)?;
    let resid: Vec<f64> = (0..n)
        .map(|i| inp.obs[i] - loc.predictor(&inp.feats[i], inp.mean[i]))
        .collect();

    let fit_ar = |x: &[f64], warnings: &mut Vec<String>| -> ArCoeffs {
        match fit_ar_yule_walker(x, max_order) {
            Ok(f) => f.coeffs,
            Err(e) => {
                let msg = format!("AR initialization failed ({e}); using AR(0)");
                log::warn!("{msg}");
                warnings.push(msg);
                ArCoeffs::constant(x.iter().sum::<f64>() / x.len() as f64)
            }
        }
    };

    // scale by least squares on the log of a day-of-year pooled spread
    let scale_by_ols = || -> Result<SeasonalCoeffs> {
        let s_hat = seasonal_window_sd(&t, &resid, settings.climatology_half_width);
        let log_s: Vec<f64> = s_hat.iter().map(|v| v.max(1e-6).ln()).collect();
        let rows: Vec<_> = (0..n).map(|i| design_row(t[i], inp.sd[i])).collect();
        SeasonalCoeffs::from_slice(&ols(&rows, &log_s)?)
    };
    let unit_scale = SeasonalCoeffs::affine(0.0, 1.0);

    let init = match variant {
        Variant::Plain => SemosParams {
            variant,
            loc,
            scale: unit_scale,
            ar: ArCoeffs::constant(0.0),
            garch: GarchCoeffs::from_roots([1.0, 0.0, 0.0]),
        },
        Variant::Deseasonalized => SemosParams {
            variant,
            loc,
            scale: unit_scale,
            ar: fit_ar(&resid, &mut warnings),
            garch: GarchCoeffs::from_roots([1.0, 0.0, 0.0]),
        },
        Variant::Garch => {
            let ar = fit_ar(&resid, &mut warnings);
            let scale = scale_by_ols()?;
            let p = ar.order();
            let rho: Vec<f64> = (p..n)
                .map(|i| {
                    let eps = resid[i] - ar_forecast(&ar, &resid[..i], 1);
                    eps / scale.predictor(&inp.feats[i], inp.sd[i]).exp()
                })
                .collect();
            let garch = fit_garch11(&rho).unwrap_or_else(|| {
                let var = rho.iter().map(|r| r * r).sum::<f64>() / rho.len().max(1) as f64;
                let msg = format!("GARCH initialization failed; using omega = ({var}, 0, 0)");
                log::warn!("{msg}");
                warnings.push(msg);
                GarchCoeffs::from_roots([var.max(1e-12).sqrt(), 0.0, 0.0])
            });
            SemosParams {
                variant,
                loc,
                scale,
                ar,
                garch,
            }
        }
        Variant::Standardized => {
            let scale = scale_by_ols()?;
            let z: Vec<f64> = (0..n)
                .map(|i| resid[i] / scale.predictor(&inp.feats[i], inp.sd[i]).exp())
                .collect();
            SemosParams {
                variant,
                loc,
                scale,
                ar: fit_ar(&z, &mut warnings),
                garch: GarchCoeffs::from_roots([1.0, 0.0, 0.0]),
            }
        }
    };

    // II: joint CRPS minimization with the AR order fixed
    let objective = |x: &[f64]| match init.unpack(x) {
        Some(p) => p.mean_crps(&inp),
        None => f64::INFINITY,
    };
    let result: OptResult = minimize(objective, &init.pack(), &settings.optimizer)?;
    let fitted = init
        .unpack(&result.x)
        .ok_or_else(|| Error::NumericalFailure("optimizer returned invalid coefficients".into()))?;
    if !result.converged {
        let msg = format!(
            "{kind} optimizer stopped without convergence ({:?}, gradient norm {:.3e})",
            result.termination, result.gradient_norm
        );
        log::warn!("{msg}");
        warnings.push(msg);
    }
    if variant != Variant::Plain && !fitted.ar.is_stationary() {
        let msg = format!("{kind} fitted AR coefficients are not stationary");
        log::warn!("{msg}");
        warnings.push(msg);
    }

    Ok(FittedModel {
        kind,
        loc: fitted.loc.to_array().to_vec(),
        scale: fitted.scale.to_array().to_vec(),
        ar: (variant != Variant::Plain).then(|| fitted.ar.clone()),
        garch: (variant == Variant::Garch).then_some(fitted.garch),
        weight: None,
        member_ar: None,
        meta: FitMeta {
            station_id: train.station_id().to_string(),
            lead_time_h: train.lead_time_h(),
            train_start: origin,
            train_end: *train.dates().last().expect("nonempty"),
            n_train: n,
            converged: result.converged,
            iterations: result.iterations,
            gradient_norm: result.gradient_norm,
            initial_crps: result.initial_value,
            train_crps: result.value,
            windows: Vec::new(),
            warnings,
        },
    })
}

// ---------------------------------------------------------------------------
// EMOS

/// EMOS coefficients `([a0, a1], [b0, b1])` fitted by CRPS minimization on
/// one window.
fn fit_emos_window(
    mean: &[f64],
    sd: &[f64],
    obs: &[f64],
    settings: &FitSettings,
) -> Result<([f64; 2], [f64; 2], OptResult)> {
    let n = obs.len() as f64;
    let log_sd: Vec<f64> = sd.iter().map(|s| s.ln()).collect();
    // least squares start for the location
    let mx = mean.iter().sum::<f64>() / n;
    let my = obs.iter().sum::<f64>() / n;
    let sxx: f64 = mean.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = mean.iter().zip(obs).map(|(x, y)| (x - mx) * (y - my)).sum();
    let a1 = if sxx > 1e-12 { sxy / sxx } else { 1.0 };
    let a0 = my - a1 * mx;
    let rss: f64 = mean
        .iter()
        .zip(obs)
        .map(|(x, y)| (y - a0 - a1 * x).powi(2))
        .sum();
    let b0 = (rss / n).sqrt().max(1e-3).ln();

    let ls_mean = log_sd.iter().sum::<f64>() / n;
    let ls_var = log_sd.iter().map(|v| (v - ls_mean).powi(2)).sum::<f64>() / n;
    let ridge = if ls_var < 1e-10 {
        settings.emos_ridge
    } else {
        0.0
    };

    let objective = |c: &[f64]| {
        let mut total = 0.0;
        for i in 0..obs.len() {
            let mu = c[0] + c[1] * mean[i];
            let sigma = (c[2] + c[3] * log_sd[i]).exp();
            match GaussianParams::new(mu, sigma) {
                Ok(g) => total += crps_normal(g, obs[i]),
                Err(_) => return f64::INFINITY,
            }
        }
        total / n + ridge * c.iter().map(|v| v * v).sum::<f64>()
    };
    let r = minimize(objective, &[a0, a1, b0, 0.0], &settings.optimizer)?;
    Ok(([r.x[0], r.x[1]], [r.x[2], r.x[3]], r))
}

fn emos_forecast(coef: &([f64; 2], [f64; 2]), mean: f64, sd: f64) -> (f64, f64) {
    (
        coef.0[0] + coef.0[1] * mean,
        (coef.1[0] + coef.1[1] * sd.ln()).exp(),
    )
}

// ---------------------------------------------------------------------------
// AR-EMOS

/// AR-EMOS ingredients for one target day.
#[derive(Debug, Clone)]
struct ArEmosDay {
    mu: f64,
    sigma1: f64,
    sigma2: f64,
    member_ar: Vec<ArCoeffs>,
}

/// Per-member AR adjustment of the ensemble for `target`, using member error
/// series observed up to `target - lead_offset - 1`.
fn ar_emos_day(
    members: &[Vec<f64>],
    obs: &[f64],
    target: usize,
    lead_offset: usize,
    settings: &FitSettings,
    warnings: &mut Vec<String>,
) -> Option<ArEmosDay> {
    let window = settings.ar_window;
    let end = target.checked_sub(lead_offset + 1)?;
    let start = (end + 1).checked_sub(window)?;
    let m = members[target].len();
    let mut adjusted = Vec::with_capacity(m);
    let mut innovation = 0.0;
    let mut fits = Vec::with_capacity(m);
    let mut errors = vec![0.0; window];
    for member in 0..m {
        for (slot, d) in errors.iter_mut().zip(start..=end) {
            *slot = obs[d] - members[d][member];
        }
        let (ar, var) = match fit_ar_yule_walker(&errors, settings.ar_emos_max_order) {
            Ok(f) => (f.coeffs, f.innovation_var),
            Err(e) => {
                let eta = errors.iter().sum::<f64>() / window as f64;
                let var = errors.iter().map(|v| (v - eta).powi(2)).sum::<f64>() / window as f64;
                let msg = format!("member {member}: AR fit failed ({e}); no adjustment");
                log::debug!("{msg}");
                if warnings.len() < 16 {
                    warnings.push(msg);
                }
                (ArCoeffs::constant(eta), var)
            }
        };
        let r_hat = ar_forecast(&ar, &errors, lead_offset + 1);
        adjusted.push(members[target][member] + r_hat);
        innovation += var;
        fits.push(ar);
    }
    let mf = m as f64;
    let mu = adjusted.iter().sum::<f64>() / mf;
    let sigma2 = (adjusted.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (mf - 1.0)).sqrt();
    Some(ArEmosDay {
        mu,
        sigma1: (innovation / mf).sqrt(),
        sigma2,
        member_ar: fits,
    })
}

/// Convex spread combination `omega sigma1 + (1 - omega) sigma2`, floored so
/// the result stays a valid scale.
fn mix_sigma(weight: f64, s1: f64, s2: f64) -> f64 {
    (weight * s1 + (1.0 - weight) * s2).max(1e-9)
}

/// Spread weight minimizing the mean CRPS over `days`, by golden-section
/// search on `[0, 1]` with the endpoints checked explicitly.
fn estimate_weight(days: &[(&ArEmosDay, f64)]) -> f64 {
    let loss = |w: f64| {
        days.iter()
            .map(|(d, y)| {
                let g = GaussianParams::new(d.mu, mix_sigma(w, d.sigma1, d.sigma2)).expect("valid");
                crps_normal(g, *y)
            })
            .sum::<f64>()
    };
    let ratio = (5.0_f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (0.0, 1.0);
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    let (mut fc, mut fd) = (loss(c), loss(d));
    while b - a > 1e-8 {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - ratio * (b - a);
            fc = loss(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + ratio * (b - a);
            fd = loss(d);
        }
    }
    let inner = 0.5 * (a + b);
    [(loss(0.0), 0.0), (loss(1.0), 1.0), (loss(inner), inner)]
        .into_iter()
        .min_by(|x, y| x.0.total_cmp(&y.0))
        .map(|x| x.1)
        .expect("three candidates")
}

/// AR-EMOS forecast for `target`: member AR fits as of issuance and a weight
/// estimated on the preceding, already verified days.
fn ar_emos_target(
    members: &[Vec<f64>],
    obs: &[f64],
    target: usize,
    lead_offset: usize,
    settings: &FitSettings,
    cache: &mut [Option<ArEmosDay>],
    warnings: &mut Vec<String>,
) -> Option<(ArEmosDay, f64)> {
    let k = lead_offset;
    let last_observed = target.checked_sub(k + 1)?;
    let first = (last_observed + 1).checked_sub(settings.weight_window)?;
    let mut get = |d: usize, warnings: &mut Vec<String>| -> Option<ArEmosDay> {
        if cache[d].is_none() {
            cache[d] = ar_emos_day(members, obs, d, k, settings, warnings);
        }
        cache[d].clone()
    };
    let mut window = Vec::with_capacity(settings.weight_window);
    for d in first..=last_observed {
        window.push((get(d, warnings)?, obs[d]));
    }
    let refs: Vec<(&ArEmosDay, f64)> = window.iter().map(|(d, y)| (d, *y)).collect();
    let weight = estimate_weight(&refs);
    let day = get(target, warnings)?;
    Some((day, weight))
}

// ---------------------------------------------------------------------------
// public interface

/// Fits a model of `kind` on a complete training series.
pub fn fit(kind: ModelKind, train: &StationSeries, settings: &FitSettings) -> Result<FittedModel> {
    if kind.is_seasonal() {
        return fit_seasonal(kind, train, settings);
    }
    let obs = train.complete_obs()?;
    let n = train.len();
    let k = train.lead_offset_days();
    let meta = |converged: bool,
                iterations: usize,
                gradient_norm: f64,
                initial: f64,
                value: f64,
                windows,
                warnings| FitMeta {
        station_id: train.station_id().to_string(),
        lead_time_h: train.lead_time_h(),
        train_start: train.dates()[0],
        train_end: train.dates()[n - 1],
        n_train: n,
        converged,
        iterations,
        gradient_norm,
        initial_crps: initial,
        train_crps: value,
        windows,
        warnings,
    };
    match kind {
        ModelKind::Emos => {
            let w = settings.emos_window;
            if n < w {
                return Err(Error::InsufficientHistory {
                    date: train.dates()[n - 1],
                    needed: w,
                    got: n,
                });
            }
            let r = n - w..n;
            let (a, b, res) = fit_emos_window(
                &train.ens_mean()[r.clone()],
                &train.ens_sd()[r.clone()],
                &obs[r],
                settings,
            )?;
            Ok(FittedModel {
                kind,
                loc: a.to_vec(),
                scale: b.to_vec(),
                ar: None,
                garch: None,
                weight: None,
                member_ar: None,
                meta: meta(
                    res.converged,
                    res.iterations,
                    res.gradient_norm,
                    res.initial_value,
                    res.value,
                    vec![w],
                    vec![],
                ),
            })
        }
        ModelKind::ArEmos => {
            // State as of the end of training: weight over the last verified
            // days, member AR fits on the final window.
            let mut warnings = Vec::new();
            let needed = settings.ar_window + settings.weight_window + 2 * k + 1;
            let mut window = Vec::new();
            for d in n.saturating_sub(settings.weight_window)..n {
                match ar_emos_day(train.members(), &obs, d, k, settings, &mut warnings) {
                    Some(day) => window.push((day, obs[d])),
                    None => {
                        return Err(Error::InsufficientHistory {
                            date: train.dates()[n - 1],
                            needed,
                            got: n,
                        })
                    }
                }
            }
            let refs: Vec<(&ArEmosDay, f64)> = window.iter().map(|(d, y)| (d, *y)).collect();
            let weight = estimate_weight(&refs);
            let crps: f64 = refs
                .iter()
                .map(|(d, y)| {
                    crps_normal(
                        GaussianParams::new(d.mu, mix_sigma(weight, d.sigma1, d.sigma2))
                            .expect("valid"),
                        *y,
                    )
                })
                .sum::<f64>()
                / refs.len() as f64;
            let member_ar = window.last().map(|(d, _)| d.member_ar.clone());
            Ok(FittedModel {
                kind,
                loc: Vec::new(),
                scale: Vec::new(),
                ar: None,
                garch: None,
                weight: Some(weight),
                member_ar,
                meta: meta(
                    true,
                    0,
                    0.0,
                    crps,
                    crps,
                    vec![settings.ar_window, settings.weight_window],
                    warnings,
                ),
            })
        }
        _ => unreachable!("seasonal kinds handled above"),
    }
}

impl FittedModel {
    /// Checks that the components match the model kind.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidInput(format!("{} model: {m}", self.kind)));
        let seasonal = self.kind.is_seasonal();
        match self.kind {
            ModelKind::Emos if self.loc.len() != 2 || self.scale.len() != 2 => {
                return bad("EMOS needs two location and two scale coefficients")
            }
            ModelKind::ArEmos if !self.weight.is_some_and(|w| (0.0..=1.0).contains(&w)) => {
                return bad("AR-EMOS needs a weight in [0, 1]")
            }
            _ => {}
        }
        if seasonal {
            SeasonalCoeffs::from_slice(&self.loc)?;
            SeasonalCoeffs::from_slice(&self.scale)?;
        }
        let wants_ar = matches!(
            self.kind,
            ModelKind::DarSemos | ModelKind::DarGarchSemos | ModelKind::SarSemos
        );
        if wants_ar != self.ar.is_some() {
            return bad("AR block present iff the model is autoregressive");
        }
        if (self.kind == ModelKind::DarGarchSemos) != self.garch.is_some() {
            return bad("GARCH block present iff the model is DAR-GARCH-SEMOS");
        }
        if let Some(g) = &self.garch {
            GarchCoeffs::new(g.omega0, g.omega1, g.omega2)?;
        }
        Ok(())
    }

    fn seasonal_params(&self) -> Result<SemosParams> {
        let variant = Variant::of(self.kind).expect("seasonal kind");
        Ok(SemosParams {
            variant,
            loc: SeasonalCoeffs::from_slice(&self.loc)?,
            scale: SeasonalCoeffs::from_slice(&self.scale)?,
            ar: self.ar.clone().unwrap_or_else(|| ArCoeffs::constant(0.0)),
            garch: self.garch.unwrap_or(GarchCoeffs {
                omega0: 1.0,
                omega1: 0.0,
                omega2: 0.0,
            }),
        })
    }

    /// Forecasts for every date in `start..=end`, treating the series' lead
    /// time as the forecast horizon.
    pub fn predict(
        &self,
        series: &StationSeries,
        start: NaiveDate,
        end: NaiveDate,
    ) -> Result<Vec<Forecast>> {
        self.predict_with_offset(series, start, end, series.lead_offset_days())
    }

    /// As [`predict`](Self::predict) with an explicit number of unobserved
    /// days before each target.
    pub fn predict_with_offset(
        &self,
        series: &StationSeries,
        start: NaiveDate,
        end: NaiveDate,
        lead_offset: usize,
    ) -> Result<Vec<Forecast>> {
        self.validate()?;
        let lo = series
            .index_of(start)
            .ok_or_else(|| Error::InvalidInput(format!("{start} is outside the series")))?;
        let hi = series
            .index_of(end)
            .ok_or_else(|| Error::InvalidInput(format!("{end} is outside the series")))?;
        if hi < lo {
            return Err(Error::InvalidInput(format!("empty range {start}..{end}")));
        }
        let k = lead_offset;
        let insufficient = |i: usize, needed: usize| Error::InsufficientHistory {
            date: series.dates()[i],
            needed,
            got: i,
        };
        let mut out = Vec::with_capacity(hi - lo + 1);
        match self.kind {
            ModelKind::Emos => {
                let w = self.meta.windows.first().copied().unwrap_or(30);
                let obs = series.complete_obs()?;
                let settings = FitSettings::default();
                for i in lo..=hi {
                    let last = i
                        .checked_sub(k + 1)
                        .ok_or_else(|| insufficient(i, w + k + 1))?;
                    let first = (last + 1)
                        .checked_sub(w)
                        .ok_or_else(|| insufficient(i, w + k + 1))?;
                    let (a, b, _) = fit_emos_window(
                        &series.ens_mean()[first..=last],
                        &series.ens_sd()[first..=last],
                        &obs[first..=last],
                        &settings,
                    )?;
                    let (mu, sigma) =
                        emos_forecast(&(a, b), series.ens_mean()[i], series.ens_sd()[i]);
                    out.push(Forecast {
                        date: series.dates()[i],
                        params: GaussianParams::new(mu, sigma)?,
                    });
                }
            }
            ModelKind::ArEmos => {
                let settings = FitSettings {
                    ar_window: self.meta.windows.first().copied().unwrap_or(90),
                    weight_window: self.meta.windows.get(1).copied().unwrap_or(30),
                    ..FitSettings::default()
                };
                let needed = settings.ar_window + settings.weight_window + 2 * k + 1;
                let obs = series.complete_obs()?;
                let mut cache = vec![None; series.len()];
                let mut warnings = Vec::new();
                for i in lo..=hi {
                    let (day, w) = ar_emos_target(
                        series.members(),
                        &obs,
                        i,
                        k,
                        &settings,
                        &mut cache,
                        &mut warnings,
                    )
                    .ok_or_else(|| insufficient(i, needed))?;
                    out.push(Forecast {
                        date: series.dates()[i],
                        params: GaussianParams::new(day.mu, mix_sigma(w, day.sigma1, day.sigma2))?,
                    });
                }
            }
            _ => {
                let params = self.seasonal_params()?;
                if k > 0 && params.variant != Variant::Plain && !params.ar.is_stationary() {
                    log::warn!(
                        "{} {}: multi-step prediction with non-stationary AR coefficients",
                        self.kind,
                        self.meta.station_id
                    );
                }
                let inp = Inputs::new(series, self.meta.train_start)?;
                let path = params.predict_path(&inp, k);
                for i in lo..=hi {
                    let (mu, sigma) =
                        path[i].ok_or_else(|| insufficient(i, params.warmup() + k))?;
                    out.push(Forecast {
                        date: series.dates()[i],
                        params: GaussianParams::new(mu, sigma)?,
                    });
                }
            }
        }
        Ok(out)
    }

    /// Residuals on the training period. Seasonal models use one-step
    /// predictions with observed histories; rolling models use their
    /// lead-time forecasts wherever enough history exists.
    pub fn training_residuals(&self, train: &StationSeries) -> Result<Residuals> {
        let first = *train.dates().first().ok_or(Error::EmptyInput)?;
        let last = *train.dates().last().expect("nonempty");
        let obs = train.complete_obs()?;
        let forecasts = if self.kind.is_seasonal() {
            let params = self.seasonal_params()?;
            let inp = Inputs::new(train, self.meta.train_start)?;
            params
                .predict_path(&inp, 0)
                .into_iter()
                .zip(train.dates())
                .filter_map(|(v, d)| v.map(|(mu, sigma)| (*d, mu, sigma)))
                .collect::<Vec<_>>()
        } else {
            let k = train.lead_offset_days();
            let warm = match self.kind {
                ModelKind::Emos => self.meta.windows.first().copied().unwrap_or(30) + k + 1,
                _ => self.meta.windows.iter().sum::<usize>() + 2 * k + 1,
            };
            if warm >= train.len() {
                return Err(Error::InsufficientHistory {
                    date: last,
                    needed: warm + 1,
                    got: train.len(),
                });
            }
            self.predict(train, first + chrono::Duration::days(warm as i64), last)?
                .into_iter()
                .map(|f| (f.date, f.params.mu(), f.params.sigma()))
                .collect()
        };
        let mut res = Residuals {
            dates: Vec::with_capacity(forecasts.len()),
            raw: Vec::with_capacity(forecasts.len()),
            standardized: Vec::with_capacity(forecasts.len()),
        };
        for (d, mu, sigma) in forecasts {
            let i = train.index_of(d).expect("date from series");
            let e = obs[i] - mu;
            res.dates.push(d);
            res.raw.push(e);
            res.standardized.push(e / sigma);
        }
        Ok(res)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(s)?;
        m.validate()?;
        Ok(m)
    }

    pub fn location_coeffs(&self) -> Option<SeasonalCoeffs> {
        SeasonalCoeffs::from_slice(&self.loc).ok()
    }

    pub fn scale_coeffs(&self) -> Option<SeasonalCoeffs> {
        SeasonalCoeffs::from_slice(&self.scale).ok()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticConfig};

    fn series(n_days: usize, seed: u64) -> StationSeries {
        let cfg = SyntheticConfig {
            n_days,
            seed,
            ..SyntheticConfig::default()
        };
        generate_synthetic(&cfg).unwrap().0
    }

    #[test]
    fn kind_names_round_trip() {
        for k in ModelKind::ALL {
            assert_eq!(k.name().parse::<ModelKind>().unwrap(), k);
            let json = serde_json::to_string(&k).unwrap();
            assert_eq!(json, format!("\"{}\"", k.name()));
        }
        assert_eq!(
            "sar_semos".parse::<ModelKind>().unwrap(),
            ModelKind::SarSemos
        );
        assert!("NGR".parse::<ModelKind>().is_err());
    }

    #[test]
    fn ar_forecast_matches_public_recursion() {
        let ar = ArCoeffs::new(0.2, vec![0.5, -0.1, 0.3]).unwrap();
        let h = [0.1, 0.7, -0.4, 1.2];
        for steps in 1..6 {
            let want = *crate::timeseries::ar_multistep(&ar, &h, steps)
                .unwrap()
                .last()
                .unwrap();
            assert_eq!(ar_forecast(&ar, &h, steps), want);
        }
    }

    #[test]
    fn golden_weight_hits_endpoints() {
        let day = |s1: f64, s2: f64| ArEmosDay {
            mu: 0.0,
            sigma1: s1,
            sigma2: s2,
            member_ar: vec![],
        };
        // observations spread like N(0, 1): sigma1 = 1 is right, sigma2 far too small
        let obs = [-1.5, -0.8, -0.3, 0.2, 0.6, 1.1, 1.7, -0.1];
        let days: Vec<ArEmosDay> = obs.iter().map(|_| day(1.0, 0.01)).collect();
        let refs: Vec<_> = days.iter().zip(obs).collect();
        assert_eq!(estimate_weight(&refs), 1.0);
        let days: Vec<ArEmosDay> = obs.iter().map(|_| day(0.01, 1.0)).collect();
        let refs: Vec<_> = days.iter().zip(obs).collect();
        assert_eq!(estimate_weight(&refs), 0.0);
    }

    #[test]
    fn mix_sigma_endpoints() {
        assert_eq!(mix_sigma(1.0, 2.0, 3.0), 2.0);
        assert_eq!(mix_sigma(0.0, 2.0, 3.0), 3.0);
        let m = mix_sigma(0.3, 2.0, 3.0);
        assert!((2.0..=3.0).contains(&m));
    }

    #[test]
    fn perfect_members_need_no_adjustment() {
        // members equal to the observation: error series identically zero
        let n = 130;
        let obs: Vec<f64> = (0..n).map(|i| (i as f64 * 0.3).sin()).collect();
        let members: Vec<Vec<f64>> = obs.iter().map(|y| vec![*y; 5]).collect();
        let settings = FitSettings::default();
        let mut warnings = Vec::new();
        let day = ar_emos_day(&members, &obs, n - 1, 0, &settings, &mut warnings).unwrap();
        assert!((day.mu - obs[n - 1]).abs() < 1e-12);
        assert!(day.sigma2 < 1e-12);
        assert_eq!(day.sigma1, 0.0);
        assert!(!warnings.is_empty());
    }

    #[test]
    fn emos_recovers_identity_relation() {
        let mut slopes = Vec::new();
        let n = 40;
        for seed in 0..10u64 {
            let s = series(n, seed);
            let mean = s.ens_mean();
            // y = mean + N(0, 1) noise
            let noise = series(n, seed + 100);
            let obs: Vec<f64> = mean
                .iter()
                .zip(noise.complete_obs().unwrap())
                .zip(noise.ens_mean())
                .map(|((m, y), x)| m + (y - 0.95 * x - 0.8) / 1.6)
                .collect();
            let (a, b, _) = fit_emos_window(
                &mean[..30],
                &s.ens_sd()[..30],
                &obs[..30],
                &FitSettings::default(),
            )
            .unwrap();
            assert!(b.iter().all(|v| v.is_finite()));
            slopes.push(a[1]);
        }
        let avg = slopes.iter().sum::<f64>() / slopes.len() as f64;
        assert!((avg - 1.0).abs() < 0.1, "mean slope {avg}");
    }

    #[test]
    fn emos_constant_spread_stays_finite() {
        let mean: Vec<f64> = (0..30).map(|i| i as f64 * 0.5).collect();
        let sd = vec![1.3; 30];
        let obs: Vec<f64> = mean
            .iter()
            .enumerate()
            .map(|(i, m)| m + if i % 2 == 0 { 0.7 } else { -0.7 })
            .collect();
        let (a, b, _) = fit_emos_window(&mean, &sd, &obs, &FitSettings::default()).unwrap();
        assert!(a.iter().chain(b.iter()).all(|v| v.is_finite()));
        let (_, sigma) = emos_forecast(&(a, b), 3.0, 1.3);
        assert!(sigma > 0.0);
    }

    #[test]
    fn seasonal_fit_needs_two_years() {
        let s = series(400, 3);
        assert!(matches!(
            fit(ModelKind::Semos, &s, &FitSettings::default()),
            Err(Error::InsufficientHistory { .. })
        ));
    }

    #[test]
    fn window_sd_pools_by_phase() {
        let t: Vec<f64> = (1..=1461).map(|v| v as f64).collect();
        // alternating +-1 everywhere: pooled sd close to 1
        let v: Vec<f64> = (0..1461)
            .map(|i| if i % 2 == 0 { 1.0 } else { -1.0 })
            .collect();
        let sd = seasonal_window_sd(&t, &v, 15);
        assert!(sd.iter().all(|s| (s - 1.0).abs() < 0.02));
    }

    #[test]
    fn validate_checks_structure() {
        let meta = FitMeta {
            station_id: "x".into(),
            lead_time_h: 24,
            train_start: NaiveDate::from_ymd_opt(2015, 1, 1).unwrap(),
            train_end: NaiveDate::from_ymd_opt(2019, 12, 31).unwrap(),
            n_train: 1826,
            converged: true,
            iterations: 1,
            gradient_norm: 0.0,
            initial_crps: 1.0,
            train_crps: 1.0,
            windows: vec![],
            warnings: vec![],
        };
        let mut m = FittedModel {
            kind: ModelKind::Semos,
            loc: vec![0.0; 10],
            scale: vec![0.0; 10],
            ar: None,
            garch: None,
            weight: None,
            member_ar: None,
            meta,
        };
        assert!(m.validate().is_ok());
        m.kind = ModelKind::DarSemos;
        assert!(m.validate().is_err());
        m.ar = Some(ArCoeffs::constant(0.0));
        assert!(m.validate().is_ok());
        m.garch = Some(GarchCoeffs::new(1.0, 0.0, 0.0).unwrap());
        assert!(m.validate().is_err());
        m.kind = ModelKind::ArEmos;
        m.weight = Some(1.5);
        assert!(m.validate().is_err());
    }
}
