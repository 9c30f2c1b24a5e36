//! Proper scoring rules, consistent scoring functions, PIT and central
//! prediction intervals.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::special::{norm_cdf, norm_pdf, norm_quantile};
use crate::{Error, Result};

const FRAC_1_SQRT_PI: f64 = 0.564_189_583_547_756_3;
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Parameters of a Gaussian predictive distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianParams {
    mu: f64,
    sigma: f64,
}

impl GaussianParams {
    /// Fails unless `mu` is finite and `sigma` is finite and strictly positive.
    pub fn new(mu: f64, sigma: f64) -> Result<Self> {
        if !mu.is_finite() || !sigma.is_finite() || sigma <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "gaussian parameters must be finite with sigma > 0, got mu={mu}, sigma={sigma}"
            )));
        }
        Ok(Self { mu, sigma })
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn standardize(&self, y: f64) -> f64 {
        (y - self.mu) / self.sigma
    }

    pub fn cdf(&self, y: f64) -> f64 {
        norm_cdf(self.standardize(y))
    }

    pub fn quantile(&self, p: f64) -> f64 {
        self.mu + self.sigma * norm_quantile(p)
    }
}

/// Closed-form CRPS of a Gaussian forecast.
pub fn crps_normal(g: GaussianParams, y: f64) -> f64 {
    let z = g.standardize(y);
    g.sigma * (z * (2.0 * norm_cdf(z) - 1.0) + 2.0 * norm_pdf(z) - FRAC_1_SQRT_PI)
}

/// Partial derivatives `(dCRPS/dmu, dCRPS/dsigma)` of [`crps_normal`].
pub fn crps_normal_gradient(g: GaussianParams, y: f64) -> (f64, f64) {
    let z = g.standardize(y);
    (1.0 - 2.0 * norm_cdf(z), 2.0 * norm_pdf(z) - FRAC_1_SQRT_PI)
}

/// CRPS by numerical integration of `(F(z) - 1{z >= y})^2` over the real line.
///
/// Both half-lines are mapped onto `[0, 1)` and integrated with globally
/// adaptive Gauss-Kronrod (7/15) bisection until the summed error estimate
/// drops below `tol`. Works for distribution functions with jumps.
pub fn crps_integral<F>(cdf: F, y: f64, tol: f64) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    if !(tol > 0.0) {
        return Err(Error::InvalidInput(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    // z = y - t / (1 - t) on the left, z = y + t / (1 - t) on the right.
    let left = |t: f64| {
        let u = 1.0 - t;
        let f = cdf(y - t / u);
        f * f / (u * u)
    };
    let right = |t: f64| {
        let u = 1.0 - t;
        let f = 1.0 - cdf(y + t / u);
        f * f / (u * u)
    };
    Ok(adaptive_gk(left, 0.5 * tol)? + adaptive_gk(right, 0.5 * tol)?)
}

const GK_NODES: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const KRONROD_WEIGHTS: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_728,
];
const GAUSS_WEIGHTS: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = KRONROD_WEIGHTS[7] * fc;
    let mut gauss = GAUSS_WEIGHTS[3] * fc;
    let mut outer = [[fc; 2]; 2];
    for i in 0..7 {
        let dx = h * GK_NODES[i];
        let (lo, hi) = (f(c - dx), f(c + dx));
        if i < 2 {
            outer[i] = [lo, hi];
        }
        let pair = lo + hi;
        kronrod += KRONROD_WEIGHTS[i] * pair;
        if i % 2 == 1 {
            gauss += GAUSS_WEIGHTS[i / 2] * pair;
        }
    }
    // The nodes never reach the endpoints. A jump hidden in an end gap shows
    // up as an endpoint value far from the outermost node relative to the
    // change between the two outermost nodes.
    let gap = h * (1.0 - GK_NODES[0]);
    let hidden = |side: usize, fe: f64| {
        let (f0, f1) = (outer[0][side], outer[1][side]);
        let step = (fe - f0).abs();
        if fe.is_finite() && step > 2.0 * (f0 - f1).abs() + 1e-300 {
            gap * step
        } else {
            0.0
        }
    };
    let err = ((kronrod - gauss) * h).abs() + hidden(0, f(a)) + hidden(1, f(b));
    (kronrod * h, err)
}

/// Kronrod value on `[a, b]` from its two halves, with an error estimate that
/// also compares against the single-panel rule. Gauss/Kronrod agreement
/// alone can be fooled by jumps.
fn panel<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let m = 0.5 * (a + b);
    let (whole, _) = gk15(f, a, b);
    let (v1, e1) = gk15(f, a, m);
    let (v2, e2) = gk15(f, m, b);
    let v = v1 + v2;
    (v, (whole - v).abs().max(e1 + e2))
}

fn adaptive_gk<F: Fn(f64) -> f64>(f: F, tol: f64) -> Result<f64> {
    const MAX_INTERVALS: usize = 200_000;
    const INITIAL: usize = 16;
    let mut intervals: Vec<(f64, f64, f64, f64)> = (0..INITIAL)
        .map(|i| {
            let (a, b) = (i as f64 / INITIAL as f64, (i + 1) as f64 / INITIAL as f64);
            let (v, e) = panel(&f, a, b);
            (a, b, v, e)
        })
        .collect();
    let mut total_err: f64 = intervals.iter().map(|i| i.3).sum();
    while total_err > tol {
        if intervals.len() >= MAX_INTERVALS {
            return Err(Error::NumericalFailure(format!(
                "quadrature did not reach tolerance {tol} (error estimate {total_err})"
            )));
        }
        let (idx, _) = intervals
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .expect("nonempty");
        let (a, b, _, e) = intervals.swap_remove(idx);
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            return Err(Error::NumericalFailure(
                "quadrature interval underflow".into(),
            ));
        }
        let (v1, e1) = panel(&f, a, m);
        let (v2, e2) = panel(&f, m, b);
        total_err += e1 + e2 - e;
        intervals.push((a, m, v1, e1));
        intervals.push((m, b, v2, e2));
        if !total_err.is_finite() {
            return Err(Error::NumericalFailure(
                "non-finite quadrature error".into(),
            ));
        }
        // Recompute occasionally so the running sum does not drift.
        if intervals.len().is_multiple_of(1024) {
            total_err = intervals.iter().map(|i| i.3).sum();
        }
    }
    Ok(intervals.iter().map(|i| i.2).sum())
}

/// CRPS of the empirical distribution of an ensemble (energy form).
///
/// `mean|x_i - y| - 1/(2 m^2) sum_ij |x_i - x_j|`, with the double sum
/// evaluated in `O(m log m)` from the sorted members.
pub fn crps_ensemble(members: &[f64], y: f64) -> f64 {
    let m = members.len();
    assert!(m >= 1, "crps_ensemble needs at least one member");
    let mf = m as f64;
    let abs_err = members.iter().map(|x| (x - y).abs()).sum::<f64>() / mf;
    let mut sorted = members.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pair_sum: f64 = sorted
        .iter()
        .enumerate()
        .map(|(i, x)| (2.0 * (i as f64 + 1.0) - mf - 1.0) * x)
        .sum::<f64>()
        * 2.0;
    (abs_err - pair_sum / (2.0 * mf * mf)).max(0.0)
}

/// Logarithmic score `-log f(y)` of a Gaussian forecast.
pub fn logs_normal(g: GaussianParams, y: f64) -> f64 {
    let z = g.standardize(y);
    g.sigma.ln() + HALF_LN_2PI + 0.5 * z * z
}

/// Probability integral transform value `F(y)`.
pub fn pit_normal(g: GaussianParams, y: f64) -> f64 {
    g.cdf(y)
}

/// Nominal level `(m - 1) / (m + 1)` of the raw `m`-member ensemble range.
pub fn ensemble_nominal_level(m: usize) -> f64 {
    (m as f64 - 1.0) / (m as f64 + 1.0)
}

/// A central prediction interval and whether it covered the observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CentralInterval {
    pub lower: f64,
    pub upper: f64,
    pub width: f64,
    pub covered: bool,
}

/// Central `level * 100 %` prediction interval of a Gaussian forecast.
pub fn central_interval(g: GaussianParams, level: f64, y: f64) -> Result<CentralInterval> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidLevel(level));
    }
    let alpha = 1.0 - level;
    let lower = g.quantile(0.5 * alpha);
    let upper = g.quantile(1.0 - 0.5 * alpha);
    Ok(CentralInterval {
        lower,
        upper,
        width: upper - lower,
        covered: lower <= y && y <= upper,
    })
}

/// Rank of `y` within the ensemble, in `1..=m+1`. Ties are broken uniformly
/// at random.
pub fn verification_rank<R: Rng + ?Sized>(members: &[f64], y: f64, rng: &mut R) -> usize {
    let below = members.iter().filter(|&&x| x < y).count();
    let ties = members.iter().filter(|&&x| x == y).count();
    1 + below
        + if ties > 0 {
            rng.random_range(0..=ties)
        } else {
            0
        }
}

/// Continuous ranked probability skill score relative to a reference.
pub fn crpss(mean_crps: f64, mean_crps_ref: f64) -> Result<f64> {
    if !(mean_crps_ref > 0.0) {
        return Err(Error::InvalidReference(mean_crps_ref));
    }
    Ok(1.0 - mean_crps / mean_crps_ref)
}

/// Scores of one forecast case.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CaseScore {
    pub crps: f64,
    /// `None` for forecasts without a density (the raw ensemble).
    pub logs: Option<f64>,
    /// Squared error of the forecast mean.
    pub se: f64,
    /// `None` for the raw ensemble, which is verified by rank instead.
    pub pit: Option<f64>,
    pub width: f64,
    pub covered: bool,
}

/// Scores a Gaussian forecast against `y` using a central interval at `level`.
pub fn score_gaussian(g: GaussianParams, y: f64, level: f64) -> Result<CaseScore> {
    let interval = central_interval(g, level, y)?;
    Ok(CaseScore {
        crps: crps_normal(g, y),
        logs: Some(logs_normal(g, y)),
        se: (g.mu - y).powi(2),
        pit: Some(pit_normal(g, y)),
        width: interval.width,
        covered: interval.covered,
    })
}

/// Scores a raw ensemble. Its central interval is the member range, whose
/// nominal level is `(m - 1) / (m + 1)`.
pub fn score_ensemble(members: &[f64], y: f64) -> Result<CaseScore> {
    if members.is_empty() {
        return Err(Error::EmptyInput);
    }
    let (lo, hi) = members
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        });
    let mean = members.iter().sum::<f64>() / members.len() as f64;
    Ok(CaseScore {
        crps: crps_ensemble(members, y),
        logs: None,
        se: (mean - y).powi(2),
        pit: None,
        width: hi - lo,
        covered: lo <= y && y <= hi,
    })
}

/// Aggregate scores over a set of cases.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreSummary {
    pub mean_crps: f64,
    pub mean_logs: Option<f64>,
    pub rmse: f64,
    pub mean_width: f64,
    /// Percentage of covered cases.
    pub coverage: f64,
    pub n: usize,
}

pub fn summarize(cases: &[CaseScore]) -> Result<ScoreSummary> {
    if cases.is_empty() {
        return Err(Error::EmptyInput);
    }
    let n = cases.len() as f64;
    let mean = |f: &dyn Fn(&CaseScore) -> f64| cases.iter().map(f).sum::<f64>() / n;
    let mean_logs = cases
        .iter()
        .map(|c| c.logs)
        .sum::<Option<f64>>()
        .map(|s| s / n);
    Ok(ScoreSummary {
        mean_crps: mean(&|c| c.crps),
        mean_logs,
        rmse: mean(&|c| c.se).sqrt(),
        mean_width: mean(&|c| c.width),
        coverage: 100.0 * cases.iter().filter(|c| c.covered).count() as f64 / n,
        n: cases.len(),
    })
}
