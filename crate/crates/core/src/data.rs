//! Station series: ingestion, validation, gap imputation and a synthetic
//! data-generating process for tests and demos.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{Duration, NaiveDate};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::seasonal::{seasonal_location, seasonal_logscale, SeasonalCoeffs, PERIOD_DAYS};
use crate::timeseries::{ArCoeffs, GarchCoeffs};
use crate::{Error, Result};

/// Ensemble mean and sample standard deviation (divisor `m - 1`).
pub fn ensemble_stats(members: &[f64]) -> Result<(f64, f64)> {
    if members.len() < 2 {
        return Err(Error::InvalidEnsemble(format!(
            "need at least 2 members, got {}",
            members.len()
        )));
    }
    if let Some(bad) = members.iter().find(|x| !x.is_finite()) {
        return Err(Error::InvalidEnsemble(format!("non-finite member {bad}")));
    }
    // Welford
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for (i, x) in members.iter().enumerate() {
        let delta = x - mean;
        mean += delta / (i + 1) as f64;
        m2 += delta * (x - mean);
    }
    Ok((mean, (m2 / (members.len() - 1) as f64).sqrt()))
}

/// Running day index with `t = 1` on `origin`.
pub fn time_index(origin: NaiveDate, date: NaiveDate) -> f64 {
    (date - origin).num_days() as f64 + 1.0
}

/// Daily ensemble forecasts and observations for one station and lead time.
#[derive(Debug, Clone, PartialEq)]
pub struct StationSeries {
    station_id: String,
    lead_time_h: u32,
    dates: Vec<NaiveDate>,
    obs: Vec<Option<f64>>,
    members: Vec<Vec<f64>>,
    ens_mean: Vec<f64>,
    ens_sd: Vec<f64>,
}

impl StationSeries {
    /// Validates the series: consecutive daily dates, a constant member
    /// count `m >= 2`, finite values and a strictly positive ensemble spread.
    pub fn new(
        station_id: impl Into<String>,
        lead_time_h: u32,
        dates: Vec<NaiveDate>,
        obs: Vec<Option<f64>>,
        members: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let n = dates.len();
        if obs.len() != n || members.len() != n {
            return Err(Error::InvalidInput(format!(
                "length mismatch: {n} dates, {} observations, {} ensembles",
                obs.len(),
                members.len()
            )));
        }
        if n == 0 {
            return Err(Error::EmptyInput);
        }
        for w in dates.windows(2) {
            if w[1] - w[0] != Duration::days(1) {
                return Err(Error::InvalidInput(format!(
                    "dates must be consecutive days: {} followed by {}",
                    w[0], w[1]
                )));
            }
        }
        if let Some(Some(bad)) = obs.iter().find(|o| matches!(o, Some(v) if !v.is_finite())) {
            return Err(Error::InvalidInput(format!("non-finite observation {bad}")));
        }
        let m = members[0].len();
        let mut ens_mean = Vec::with_capacity(n);
        let mut ens_sd = Vec::with_capacity(n);
        for (d, ens) in dates.iter().zip(&members) {
            if ens.len() != m {
                return Err(Error::InvalidEnsemble(format!(
                    "{d}: {} members, expected {m}",
                    ens.len()
                )));
            }
            let (mean, sd) = ensemble_stats(ens)?;
            if !(sd > 0.0) {
                return Err(Error::InvalidEnsemble(format!(
                    "{d}: ensemble spread is zero"
                )));
            }
            ens_mean.push(mean);
            ens_sd.push(sd);
        }
        Ok(Self {
            station_id: station_id.into(),
            lead_time_h,
            dates,
            obs,
            members,
            ens_mean,
            ens_sd,
        })
    }

    pub fn station_id(&self) -> &str {
        &self.station_id
    }

    pub fn lead_time_h(&self) -> u32 {
        self.lead_time_h
    }

    /// Number of days whose observation is not yet known at issuance,
    /// `ceil(lead / 24) - 1`.
    pub fn lead_offset_days(&self) -> usize {
        lead_offset_days(self.lead_time_h)
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn obs(&self) -> &[Option<f64>] {
        &self.obs
    }

    pub fn members(&self) -> &[Vec<f64>] {
        &self.members
    }

    pub fn n_members(&self) -> usize {
        self.members[0].len()
    }

    pub fn ens_mean(&self) -> &[f64] {
        &self.ens_mean
    }

    pub fn ens_sd(&self) -> &[f64] {
        &self.ens_sd
    }

    pub fn is_complete(&self) -> bool {
        self.obs.iter().all(Option::is_some)
    }

    /// Observations as plain values; fails if any are missing.
    pub fn complete_obs(&self) -> Result<Vec<f64>> {
        self.obs
            .iter()
            .zip(&self.dates)
            .map(|(o, d)| {
                o.ok_or_else(|| {
                    Error::MissingObservations(format!(
                        "{} lead {} h on {d}",
                        self.station_id, self.lead_time_h
                    ))
                })
            })
            .collect()
    }

    pub fn index_of(&self, date: NaiveDate) -> Option<usize> {
        let first = *self.dates.first()?;
        let i = (date - first).num_days();
        (i >= 0 && (i as usize) < self.len()).then_some(i as usize)
    }

    /// Sub-series covering `start..=end` (clipped to the available dates).
    pub fn slice(&self, start: NaiveDate, end: NaiveDate) -> Result<Self> {
        let lo = self.dates.partition_point(|d| *d < start);
        let hi = self.dates.partition_point(|d| *d <= end);
        if lo >= hi {
            return Err(Error::InvalidInput(format!(
                "{} lead {} h has no data between {start} and {end}",
                self.station_id, self.lead_time_h
            )));
        }
        Ok(Self {
            station_id: self.station_id.clone(),
            lead_time_h: self.lead_time_h,
            dates: self.dates[lo..hi].to_vec(),
            obs: self.obs[lo..hi].to_vec(),
            members: self.members[lo..hi].to_vec(),
            ens_mean: self.ens_mean[lo..hi].to_vec(),
            ens_sd: self.ens_sd[lo..hi].to_vec(),
        })
    }

    /// Copy with observation `i` replaced.
    pub fn with_obs(&self, i: usize, value: Option<f64>) -> Self {
        let mut out = self.clone();
        out.obs[i] = value;
        out
    }

    /// Fills missing observations with [`impute_missing`].
    pub fn impute(&self, half_window: usize, decay: f64) -> Result<Self> {
        let filled = impute_missing(&self.obs, half_window, decay)?;
        let mut out = self.clone();
        out.obs = filled.into_iter().map(Some).collect();
        Ok(out)
    }
}

pub fn lead_offset_days(lead_time_h: u32) -> usize {
    (lead_time_h.div_ceil(24) as usize).saturating_sub(1)
}

/// Default half-window for [`impute_missing`].
pub const DEFAULT_IMPUTE_HALF_WINDOW: usize = 4;
/// Default decay for [`impute_missing`].
pub const DEFAULT_IMPUTE_DECAY: f64 = 0.5;
/// Longest run of missing observations that is imputed.
pub const MAX_GAP: usize = 3;

/// Exponentially weighted moving-average imputation.
///
/// A missing value at index `i` becomes the weighted mean of the observed
/// values within `half_window` days on either side, with weight
/// `decay^distance`. Gaps longer than [`MAX_GAP`], or gaps without any
/// observed neighbour in the window, fail.
pub fn impute_missing(obs: &[Option<f64>], half_window: usize, decay: f64) -> Result<Vec<f64>> {
    if !(decay > 0.0 && decay < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "decay must lie in (0, 1), got {decay}"
        )));
    }
    let n = obs.len();
    let mut out = Vec::with_capacity(n);
    let mut i = 0;
    while i < n {
        if let Some(v) = obs[i] {
            out.push(v);
            i += 1;
            continue;
        }
        let start = i;
        let len = obs[start..].iter().take_while(|o| o.is_none()).count();
        if len > MAX_GAP {
            return Err(Error::ImputationFailure { start, len });
        }
        for j in start..start + len {
            let lo = j.saturating_sub(half_window);
            let hi = (j + half_window).min(n - 1);
            let (mut num, mut den) = (0.0, 0.0);
            for (k, o) in obs.iter().enumerate().take(hi + 1).skip(lo) {
                if let Some(v) = o {
                    let w = decay.powi(k.abs_diff(j) as i32);
                    num += w * v;
                    den += w;
                }
            }
            // Need support on both sides unless the gap touches an end.
            let left = obs[lo..j].iter().any(Option::is_some);
            let right = obs[j + 1..=hi].iter().any(Option::is_some);
            let edge = start == 0 || start + len == n;
            if den == 0.0 || (!edge && !(left && right)) {
                return Err(Error::ImputationFailure { start, len });
            }
            out.push(num / den);
        }
        i = start + len;
    }
    Ok(out)
}

/// Selects rows from a mixed file.
#[derive(Debug, Clone, Default)]
pub struct SeriesFilter {
    pub station_id: Option<String>,
    pub lead_time_h: Option<u32>,
}

struct Row {
    line: usize,
    station: String,
    date: NaiveDate,
    lead: u32,
    obs: Option<f64>,
    members: Vec<f64>,
}

fn parse_rows<R: Read>(reader: R) -> Result<Vec<Row>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    let expect = ["station_id", "date", "lead_time_h", "obs"];
    if header.len() < 6 || header.iter().take(4).ne(expect.iter().copied()) {
        return Err(Error::Parse {
            row: 1,
            msg: "header must be station_id,date,lead_time_h,obs,m1,...,mM with M >= 2".into(),
        });
    }
    for (k, name) in header.iter().skip(4).enumerate() {
        if name != format!("m{}", k + 1) {
            return Err(Error::Parse {
                row: 1,
                msg: format!(
                    "member column {} should be named m{}, found {name}",
                    k + 5,
                    k + 1
                ),
            });
        }
    }
    let m = header.len() - 4;
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec?;
        let err = |msg: String| Error::Parse { row: line, msg };
        if rec.len() != m + 4 {
            return Err(err(format!(
                "expected {} fields, found {}",
                m + 4,
                rec.len()
            )));
        }
        let date = NaiveDate::parse_from_str(&rec[1], "%Y-%m-%d")
            .map_err(|e| err(format!("bad date '{}': {e}", &rec[1])))?;
        let lead = rec[2]
            .parse::<u32>()
            .map_err(|e| err(format!("bad lead time '{}': {e}", &rec[2])))?;
        let obs = if rec[3].is_empty() {
            None
        } else {
            Some(parse_value(&rec[3]).map_err(|e| err(format!("bad observation: {e}")))?)
        };
        let members = (4..m + 4)
            .map(|k| parse_value(&rec[k]).map_err(|e| err(format!("bad member m{}: {e}", k - 3))))
            .collect::<Result<Vec<_>>>()?;
        rows.push(Row {
            line,
            station: rec[0].to_string(),
            date,
            lead,
            obs,
            members,
        });
    }
    Ok(rows)
}

fn parse_value(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("'{s}': {e}"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("'{s}' is not finite"))
    }
}

fn assemble(station: String, lead: u32, rows: Vec<Row>) -> Result<StationSeries> {
    for w in rows.windows(2) {
        let step = (w[1].date - w[0].date).num_days();
        let msg = match step {
            1 => continue,
            0 => format!("duplicated date {}", w[1].date),
            s if s < 0 => format!("date {} is earlier than {}", w[1].date, w[0].date),
            _ => format!("gap between {} and {}", w[0].date, w[1].date),
        };
        return Err(Error::Parse {
            row: w[1].line,
            msg,
        });
    }
    for r in &rows {
        let (_, sd) = ensemble_stats(&r.members).map_err(|e| Error::Parse {
            row: r.line,
            msg: e.to_string(),
        })?;
        if !(sd > 0.0) {
            return Err(Error::Parse {
                row: r.line,
                msg: "ensemble spread is zero".into(),
            });
        }
    }
    let mut dates = Vec::with_capacity(rows.len());
    let mut obs = Vec::with_capacity(rows.len());
    let mut members = Vec::with_capacity(rows.len());
    for r in rows {
        dates.push(r.date);
        obs.push(r.obs);
        members.push(r.members);
    }
    StationSeries::new(station, lead, dates, obs, members)
}

/// Reads all `(station, lead)` series from a CSV source, in first-seen order.
pub fn read_station_csv<R: Read>(reader: R, filter: &SeriesFilter) -> Result<Vec<StationSeries>> {
    let rows = parse_rows(reader)?;
    let mut groups: Vec<((String, u32), Vec<Row>)> = Vec::new();
    for r in rows {
        if filter.station_id.as_deref().is_some_and(|s| s != r.station) {
            continue;
        }
        if filter.lead_time_h.is_some_and(|l| l != r.lead) {
            continue;
        }
        let key = (r.station.clone(), r.lead);
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push(r),
            None => groups.push((key, vec![r])),
        }
    }
    groups
        .into_iter()
        .map(|((s, l), rows)| assemble(s, l, rows))
        .collect()
}

/// Loads exactly one series matching `filter` from a CSV file.
pub fn load_station_csv(path: impl AsRef<Path>, filter: &SeriesFilter) -> Result<StationSeries> {
    let path = path.as_ref();
    let mut all = read_station_csv(File::open(path)?, filter)?;
    match all.len() {
        1 => Ok(all.pop().expect("one series")),
        0 => Err(Error::Parse {
            row: 1,
            msg: format!("{} contains no rows matching {filter:?}", path.display()),
        }),
        k => Err(Error::Parse {
            row: 1,
            msg: format!(
                "{} contains {k} series; filter by station and lead time",
                path.display()
            ),
        }),
    }
}

/// Writes a series in the station CSV schema. Values use the shortest
/// representation that round-trips exactly; missing observations are empty.
pub fn write_station_csv<W: Write>(series: &StationSeries, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec![
        "station_id".to_string(),
        "date".into(),
        "lead_time_h".into(),
        "obs".into(),
    ];
    header.extend((1..=series.n_members()).map(|k| format!("m{k}")));
    w.write_record(&header)?;
    for i in 0..series.len() {
        let mut rec = vec![
            series.station_id.clone(),
            series.dates[i].format("%Y-%m-%d").to_string(),
            series.lead_time_h.to_string(),
            series.obs[i].map(|v| v.to_string()).unwrap_or_default(),
        ];
        rec.extend(series.members[i].iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Which error process drives the synthetic observations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorProcess {
    /// AR on the deseasonalized error `y - mu_S`, innovations scaled by
    /// `sigma_S * sigma_G`.
    Deseasonalized,
    /// AR on the standardized error `(y - mu_S) / sigma_S` with innovations
    /// of scale `sigma_G`.
    Standardized,
}

/// Parameters of the synthetic data-generating process.
///
/// The ensemble centre follows a seasonal climatology plus an AR(1) weather
/// anomaly; members scatter around it with a seasonally varying spread.
/// Observations follow the SEMOS predictors evaluated at the ensemble
/// statistics plus the chosen AR(-GARCH) error process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub station_id: String,
    pub lead_time_h: u32,
    pub start: NaiveDate,
    pub n_days: usize,
    pub members: usize,
    pub location: SeasonalCoeffs,
    pub log_scale: SeasonalCoeffs,
    pub error_process: ErrorProcess,
    pub ar: ArCoeffs,
    pub garch: Option<GarchCoeffs>,
    pub climate_mean: f64,
    pub climate_amplitude: f64,
    pub anomaly_sd: f64,
    pub anomaly_persistence: f64,
    /// Constant shift added to every member.
    pub member_bias: f64,
    /// Typical member standard deviation.
    pub spread: f64,
    /// Relative seasonal modulation of the member spread.
    pub spread_seasonal: f64,
    /// Log-normal day-to-day variability of the member spread.
    pub spread_noise: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            station_id: "S001".into(),
            lead_time_h: 24,
            start: NaiveDate::from_ymd_opt(2015, 1, 1).expect("valid date"),
            n_days: 2192,
            members: 20,
            location: SeasonalCoeffs {
                intercept: 0.8,
                slope: 0.95,
                fourier_intercept: [1.2, -0.8, 0.3, 0.2],
                fourier_slope: [0.02, -0.01, 0.0, 0.0],
            },
            log_scale: SeasonalCoeffs {
                intercept: 0.1,
                slope: 0.3,
                fourier_intercept: [0.15, 0.1, 0.0, 0.0],
                fourier_slope: [0.0; 4],
            },
            error_process: ErrorProcess::Standardized,
            ar: ArCoeffs::new(0.0, vec![0.6]).expect("finite"),
            garch: None,
            climate_mean: 9.0,
            climate_amplitude: 8.0,
            anomaly_sd: 4.0,
            anomaly_persistence: 0.8,
            member_bias: 0.0,
            spread: 0.9,
            spread_seasonal: 0.25,
            spread_noise: 0.25,
            seed: 1,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidConfig(m));
        if self.n_days == 0 {
            return fail("n_days must be positive".into());
        }
        if self.members < 2 {
            return fail(format!("need at least 2 members, got {}", self.members));
        }
        if !self.ar.is_stationary() {
            return fail(format!(
                "AR coefficients {:?} are not stationary",
                self.ar.tau()
            ));
        }
        if let Some(g) = &self.garch {
            GarchCoeffs::new(g.omega0, g.omega1, g.omega2)?;
            if g.persistence() >= 1.0 || g.omega0 <= 0.0 {
                return fail(format!("GARCH coefficients {g:?} are not stationary"));
            }
        }
        if !(self.spread > 0.0) || !(self.anomaly_sd >= 0.0) || self.spread_seasonal.abs() >= 1.0 {
            return fail("spread must be positive with |spread_seasonal| < 1".into());
        }
        if !(self.anomaly_persistence.abs() < 1.0) {
            return fail("anomaly persistence must lie in (-1, 1)".into());
        }
        Ok(())
    }
}

/// Conditional distribution of one synthetic observation given the past.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthRow {
    pub date: NaiveDate,
    pub mu: f64,
    pub sigma: f64,
    pub mu_seasonal: f64,
    pub sigma_seasonal: f64,
}

/// Draws a synthetic station series and the one-step-ahead true predictive
/// distribution of every observation.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<(StationSeries, Vec<TruthRow>)> {
    cfg.validate()?;
    const BURN_IN: usize = 200;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };

    let total = cfg.n_days + BURN_IN;
    let p = cfg.ar.order();
    let eta = cfg.ar.eta();
    // error-process state: AR history on the modelled scale and GARCH variance
    let mut hist: Vec<f64> = vec![eta; p];
    let mut garch_var = cfg.garch.map_or(1.0, |g| g.initial_variance());
    let mut prev_rho_sq = garch_var;
    let mut anomaly = 0.0;
    let anomaly_innov = cfg.anomaly_sd * (1.0 - cfg.anomaly_persistence.powi(2)).sqrt();

    let mut dates = Vec::with_capacity(cfg.n_days);
    let mut obs = Vec::with_capacity(cfg.n_days);
    let mut members = Vec::with_capacity(cfg.n_days);
    let mut truth = Vec::with_capacity(cfg.n_days);

    for i in 0..total {
        let t = i as f64 - BURN_IN as f64 + 1.0;
        let phase = 2.0 * std::f64::consts::PI * t / PERIOD_DAYS;
        anomaly = cfg.anomaly_persistence * anomaly + anomaly_innov * normal();
        let centre = cfg.climate_mean - cfg.climate_amplitude * phase.cos() + anomaly;
        let spread = cfg.spread
            * (1.0 + cfg.spread_seasonal * phase.cos())
            * (cfg.spread_noise * normal() - 0.5 * cfg.spread_noise.powi(2)).exp();
        let ens: Vec<f64> = (0..cfg.members)
            .map(|_| centre + cfg.member_bias + spread * normal())
            .collect();
        let (mean, sd) = ensemble_stats(&ens)?;

        let mu_s = seasonal_location(&cfg.location, t, mean);
        let sigma_s = seasonal_logscale(&cfg.log_scale, t, sd).exp();
        if let Some(g) = &cfg.garch {
            if i > 0 {
                garch_var = g.step(garch_var, prev_rho_sq);
            }
        }
        let sigma_g = garch_var.sqrt();
        let ar_mean = {
            let mut acc = eta;
            for (j, tau) in cfg.ar.tau().iter().enumerate() {
                acc += tau * (hist[p - 1 - j] - eta);
            }
            acc
        };
        let innovation = sigma_g * normal();
        let (y, mu, sigma, state) = match cfg.error_process {
            ErrorProcess::Deseasonalized => {
                let eps = sigma_s * innovation;
                let r = ar_mean + eps;
                prev_rho_sq = innovation * innovation;
                (mu_s + r, mu_s + ar_mean, sigma_s * sigma_g, r)
            }
            ErrorProcess::Standardized => {
                let z = ar_mean + innovation;
                prev_rho_sq = innovation * innovation;
                (
                    mu_s + sigma_s * z,
                    mu_s + sigma_s * ar_mean,
                    sigma_s * sigma_g,
                    z,
                )
            }
        };
        if p > 0 {
            hist.remove(0);
            hist.push(state);
        }

        if i >= BURN_IN {
            let date = cfg.start + Duration::days((i - BURN_IN) as i64);
            dates.push(date);
            obs.push(Some(y));
            members.push(ens);
            truth.push(TruthRow {
                date,
                mu,
                sigma,
                mu_seasonal: mu_s,
                sigma_seasonal: sigma_s,
            });
        }
    }
    let series = StationSeries::new(cfg.station_id.clone(), cfg.lead_time_h, dates, obs, members)?;
    Ok((series, truth))
}
