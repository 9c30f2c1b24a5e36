//! Autoregressive and GARCH(1,1) building blocks, sample autocorrelation and
//! the Ljung-Box portmanteau test.

use serde::{Deserialize, Serialize};

use crate::optimize::{minimize, OptimizeSettings};
use crate::special::chi2_sf;
use crate::{Error, Result};

/// Coefficients of a mean-reverting AR(p) process
/// `x(t) = eta + sum_j tau_j (x(t-j) - eta) + e(t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawAr")]
pub struct ArCoeffs {
    p: usize,
    eta: f64,
    tau: Vec<f64>,
}

#[derive(Deserialize)]
struct RawAr {
    p: usize,
    eta: f64,
    tau: Vec<f64>,
}

impl TryFrom<RawAr> for ArCoeffs {
    type Error = Error;
    fn try_from(r: RawAr) -> Result<Self> {
        if r.p != r.tau.len() {
            return Err(Error::InvalidInput(format!(
                "AR order {} does not match {} coefficients",
                r.p,
                r.tau.len()
            )));
        }
        Self::new(r.eta, r.tau)
    }
}

impl ArCoeffs {
    pub fn new(eta: f64, tau: Vec<f64>) -> Result<Self> {
        if !eta.is_finite() || tau.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidInput("non-finite AR coefficient".into()));
        }
        Ok(Self {
            p: tau.len(),
            eta,
            tau,
        })
    }

    /// AR(0) around `eta`.
    pub fn constant(eta: f64) -> Self {
        Self {
            p: 0,
            eta,
            tau: Vec::new(),
        }
    }

    pub fn order(&self) -> usize {
        self.p
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn tau(&self) -> &[f64] {
        &self.tau
    }

    /// True when all roots of the characteristic polynomial lie outside the
    /// unit circle, checked by stepping the coefficients down to partial
    /// autocorrelations.
    pub fn is_stationary(&self) -> bool {
        let mut a = self.tau.clone();
        while let Some(&k) = a.last() {
            if k.abs() >= 1.0 {
                return false;
            }
            let p = a.len();
            let denom = 1.0 - k * k;
            let prev: Vec<f64> = (0..p - 1)
                .map(|j| (a[j] + k * a[p - 2 - j]) / denom)
                .collect();
            a = prev;
        }
        true
    }
}

/// A fitted AR model together with its innovation variance and AIC.
#[derive(Debug, Clone, PartialEq)]
pub struct ArFit {
    pub coeffs: ArCoeffs,
    pub innovation_var: f64,
    pub aic: f64,
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Biased sample autocovariances `c_0..=c_max_lag` (divisor `n`).
fn autocovariances(x: &[f64], max_lag: usize) -> Vec<f64> {
    let n = x.len();
    let m = mean(x);
    let d: Vec<f64> = x.iter().map(|v| v - m).collect();
    (0..=max_lag)
        .map(|k| {
            d[k..]
                .iter()
                .zip(&d[..n - k])
                .map(|(a, b)| a * b)
                .sum::<f64>()
                / n as f64
        })
        .collect()
}

fn check_variance(c0: f64, x: &[f64]) -> Result<()> {
    let scale = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
    if !(c0 > 1e-14 * scale.max(f64::MIN_POSITIVE)) {
        return Err(Error::DegenerateSeries("series has zero variance".into()));
    }
    Ok(())
}

/// Sample autocorrelations at lags `1..=max_lag`, normalized by the lag-0
/// autocovariance.
pub fn acf(x: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    let n = x.len();
    if n < 2 || n <= max_lag {
        return Err(Error::HistoryTooShort {
            needed: (max_lag + 1).max(2),
            got: n,
        });
    }
    let c = autocovariances(x, max_lag);
    check_variance(c[0], x)?;
    Ok(c[1..].iter().map(|ck| ck / c[0]).collect())
}

/// Levinson-Durbin recursion on autocovariances `c_0..=c_K`.
///
/// Returns, for every order `0..=K`, the Yule-Walker coefficients and the
/// innovation variance.
fn levinson_durbin(c: &[f64]) -> Vec<(Vec<f64>, f64)> {
    let max_order = c.len() - 1;
    let mut out = Vec::with_capacity(max_order + 1);
    let mut phi: Vec<f64> = Vec::new();
    let mut v = c[0];
    out.push((phi.clone(), v));
    for k in 1..=max_order {
        let acc: f64 = (1..k).map(|j| phi[j - 1] * c[k - j]).sum();
        let kappa = (c[k] - acc) / v;
        let mut next = vec![0.0; k];
        for j in 1..k {
            next[j - 1] = phi[j - 1] - kappa * phi[k - j - 1];
        }
        next[k - 1] = kappa;
        phi = next;
        v *= 1.0 - kappa * kappa;
        out.push((phi.clone(), v));
    }
    out
}

/// Default upper bound for AR order selection: `min(20, floor(10 log10 n))`.
pub fn default_max_order(n: usize) -> usize {
    ((10.0 * (n as f64).log10()).floor() as usize).min(20)
}

/// Yule-Walker AR fit with the order chosen by AIC over `0..=max_order`.
///
/// `eta` is the sample mean; AIC is `n ln(v_k) + 2k` with `v_k` the
/// Levinson-Durbin innovation variance at order `k`.
pub fn fit_ar_yule_walker(x: &[f64], max_order: usize) -> Result<ArFit> {
    let n = x.len();
    if n <= max_order + 1 {
        return Err(Error::HistoryTooShort {
            needed: max_order + 2,
            got: n,
        });
    }
    let c = autocovariances(x, max_order);
    check_variance(c[0], x)?;
    let path = levinson_durbin(&c);
    let (best, aic) = path
        .iter()
        .enumerate()
        .map(|(k, (_, v))| (k, n as f64 * v.ln() + 2.0 * k as f64))
        .filter(|(_, a)| a.is_finite())
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .ok_or_else(|| Error::DegenerateSeries("no finite AIC".into()))?;
    let (tau, v) = &path[best];
    Ok(ArFit {
        coeffs: ArCoeffs::new(mean(x), tau.clone())?,
        innovation_var: *v,
        aic,
    })
}

/// One-step prediction `eta + sum_j tau_j (history[last + 1 - j] - eta)`.
pub fn ar_one_step(ar: &ArCoeffs, history: &[f64]) -> Result<f64> {
    let p = ar.order();
    if history.len() < p {
        return Err(Error::HistoryTooShort {
            needed: p,
            got: history.len(),
        });
    }
    let n = history.len();
    let mut acc = 0.0;
    for (j, tau) in ar.tau.iter().enumerate() {
        acc += tau * (history[n - 1 - j] - ar.eta);
    }
    Ok(ar.eta + acc)
}

/// Iterated predictions for the next `steps` values, feeding each prediction
/// back into the history.
pub fn ar_multistep(ar: &ArCoeffs, history: &[f64], steps: usize) -> Result<Vec<f64>> {
    let p = ar.order();
    if history.len() < p {
        return Err(Error::HistoryTooShort {
            needed: p,
            got: history.len(),
        });
    }
    if steps == 0 {
        return Err(Error::InvalidInput("steps must be at least 1".into()));
    }
    if steps > 1 && !ar.is_stationary() {
        log::warn!(
            "multi-step AR prediction with non-stationary coefficients {:?}",
            ar.tau
        );
    }
    let mut buf: Vec<f64> = history[history.len() - p..].to_vec();
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        let next = ar_one_step(ar, &buf)?;
        out.push(next);
        buf.push(next);
    }
    Ok(out)
}

/// GARCH(1,1) variance recursion coefficients
/// `s2(t) = omega0 + omega1 s2(t-1) + omega2 rho2(t-1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GarchCoeffs {
    pub omega0: f64,
    pub omega1: f64,
    pub omega2: f64,
}

impl GarchCoeffs {
    pub fn new(omega0: f64, omega1: f64, omega2: f64) -> Result<Self> {
        let g = Self {
            omega0,
            omega1,
            omega2,
        };
        if [omega0, omega1, omega2]
            .iter()
            .any(|w| !w.is_finite() || *w < 0.0)
        {
            return Err(Error::InvalidInput(format!(
                "invalid GARCH coefficients {g:?}"
            )));
        }
        Ok(g)
    }

    /// Builds coefficients from unconstrained square roots.
    pub fn from_roots(r: [f64; 3]) -> Self {
        Self {
            omega0: r[0] * r[0],
            omega1: r[1] * r[1],
            omega2: r[2] * r[2],
        }
    }

    pub fn roots(&self) -> [f64; 3] {
        [self.omega0.sqrt(), self.omega1.sqrt(), self.omega2.sqrt()]
    }

    pub fn persistence(&self) -> f64 {
        self.omega1 + self.omega2
    }

    /// Starting variance: the unconditional variance when stationary, 1 otherwise.
    pub fn initial_variance(&self) -> f64 {
        let persistence = self.persistence();
        let v = self.omega0 / (1.0 - persistence);
        if persistence < 1.0 && v > 0.0 && v.is_finite() {
            v
        } else {
            1.0
        }
    }

    /// One recursion step.
    pub fn step(&self, prev_var: f64, prev_rho_sq: f64) -> f64 {
        self.omega0 + self.omega1 * prev_var + self.omega2 * prev_rho_sq
    }
}

/// Filters conditional variances: `out[0] = init_var`,
/// `out[t] = omega0 + omega1 out[t-1] + omega2 rho_sq[t-1]`.
pub fn garch_filter(g: &GarchCoeffs, rho_sq: &[f64], init_var: f64) -> Result<Vec<f64>> {
    if !(init_var > 0.0) || !init_var.is_finite() {
        return Err(Error::InvalidInput(format!(
            "initial variance must be positive, got {init_var}"
        )));
    }
    if let Some(bad) = rho_sq.iter().find(|r| !(**r >= 0.0) || !r.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "squared residual {bad} is not a finite nonnegative value"
        )));
    }
    let mut out = Vec::with_capacity(rho_sq.len());
    let mut var = init_var;
    for t in 0..rho_sq.len() {
        if t > 0 {
            var = g.step(var, rho_sq[t - 1]);
        }
        out.push(var);
    }
    Ok(out)
}

/// Gaussian quasi-likelihood GARCH(1,1) fit for a zero-mean series.
///
/// A coarse grid over `(omega1, omega2)` with variance targeting supplies the
/// start; BFGS on the square-root parameters refines it. Returns `None` if
/// the series is (nearly) constant or the fit is not stationary.
pub fn fit_garch11(rho: &[f64]) -> Option<GarchCoeffs> {
    let n = rho.len();
    if n < 20 {
        return None;
    }
    let sq: Vec<f64> = rho.iter().map(|r| r * r).collect();
    let var = sq.iter().sum::<f64>() / n as f64;
    if !(var > 1e-12) {
        return None;
    }
    let nll = |g: &GarchCoeffs| -> f64 {
        let mut s2 = g.initial_variance();
        let mut total = 0.0;
        for t in 0..n {
            if t > 0 {
                s2 = g.step(s2, sq[t - 1]);
            }
            if !(s2 > 0.0) {
                return f64::INFINITY;
            }
            total += s2.ln() + sq[t] / s2;
        }
        0.5 * total / n as f64
    };

    let mut best = (
        f64::INFINITY,
        GarchCoeffs::from_roots([var.sqrt(), 0.0, 0.0]),
    );
    for a in [0.05, 0.1, 0.2, 0.3] {
        for b in [0.0, 0.3, 0.5, 0.6, 0.7, 0.8, 0.9] {
            if a + b >= 0.99 {
                continue;
            }
            let g = GarchCoeffs {
                omega0: var * (1.0 - a - b),
                omega1: b,
                omega2: a,
            };
            let v = nll(&g);
            if v < best.0 {
                best = (v, g);
            }
        }
    }

    let settings = OptimizeSettings {
        max_iterations: 200,
        ..OptimizeSettings::default()
    };
    let objective = |x: &[f64]| nll(&GarchCoeffs::from_roots([x[0], x[1], x[2]]));
    let start = best.1.roots();
    let fitted = match minimize(objective, &start, &settings) {
        Ok(r) => GarchCoeffs::from_roots([r.x[0], r.x[1], r.x[2]]),
        Err(_) => best.1,
    };
    (fitted.persistence() < 1.0 && fitted.omega0 > 0.0).then_some(fitted)
}

/// Result of a Ljung-Box test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LjungBox {
    pub statistic: f64,
    pub p_value: f64,
}

/// Ljung-Box test of no autocorrelation up to lag `k`:
/// `Q = n (n + 2) sum_j acf_j^2 / (n - j)`, referred to chi-squared(`k`).
pub fn ljung_box(x: &[f64], k: usize) -> Result<LjungBox> {
    let n = x.len();
    if k == 0 || n <= k {
        return Err(Error::InvalidInput(format!(
            "Ljung-Box needs n > k >= 1 (n={n}, k={k})"
        )));
    }
    let r = acf(x, k)?;
    let nf = n as f64;
    let q = nf
        * (nf + 2.0)
        * r.iter()
            .enumerate()
            .map(|(j, rj)| rj * rj / (nf - (j + 1) as f64))
            .sum::<f64>();
    Ok(LjungBox {
        statistic: q,
        p_value: chi2_sf(q, k as f64),
    })
}
