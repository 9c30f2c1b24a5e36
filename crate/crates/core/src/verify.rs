//! Comparative verification: score tables, Diebold-Mariano tests with
//! Benjamini-Hochberg control, PIT histograms and residual dependence.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::Serialize;

use crate::scoring::{summarize, CaseScore, ScoreSummary};
use crate::special::{kolmogorov_sf, norm_cdf, norm_sf};
use crate::timeseries::ljung_box;
use crate::{Error, Result};

/// Direction of a Diebold-Mariano test on losses `a` and `b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Alternative {
    /// `a` has the lower expected loss.
    ABetter,
    /// `b` has the lower expected loss.
    BBetter,
    TwoSided,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DmResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// Smallest series length accepted by [`dm_test`].
pub const DM_MIN_LEN: usize = 10;

/// Diebold-Mariano test on the loss differential `a - b`.
///
/// The long-run variance uses a Bartlett kernel with `floor(n^(1/3))` lags;
/// p-values come from the standard normal.
pub fn dm_test(a: &[f64], b: &[f64], alternative: Alternative) -> Result<DmResult> {
    if a.len() != b.len() {
        return Err(Error::Alignment(format!(
            "score series differ in length ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if n < DM_MIN_LEN {
        return Err(Error::HistoryTooShort {
            needed: DM_MIN_LEN,
            got: n,
        });
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    if d.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite score in DM test".into()));
    }
    let nf = n as f64;
    let mean = d.iter().sum::<f64>() / nf;
    let lags = (nf.cbrt().floor() as usize).min(n - 1);
    let gamma = |k: usize| -> f64 {
        d[k..]
            .iter()
            .zip(&d[..n - k])
            .map(|(x, y)| (x - mean) * (y - mean))
            .sum::<f64>()
            / nf
    };
    let mut lrv = gamma(0);
    for k in 1..=lags {
        lrv += 2.0 * (1.0 - k as f64 / (lags as f64 + 1.0)) * gamma(k);
    }
    let scale = d.iter().map(|v| v * v).sum::<f64>() / nf;
    if !(lrv > 1e-14 * scale) {
        return Err(Error::DegenerateDifferential);
    }
    let statistic = mean / (lrv / nf).sqrt();
    let p_value = match alternative {
        Alternative::ABetter => norm_cdf(statistic),
        Alternative::BBetter => norm_sf(statistic),
        Alternative::TwoSided => (2.0 * norm_sf(statistic.abs())).min(1.0),
    };
    Ok(DmResult { statistic, p_value })
}

/// Benjamini-Hochberg step-up procedure. Returns a rejection flag per input
/// p-value, in input order. NaN p-values are never rejected.
pub fn benjamini_hochberg(p_values: &[f64], alpha: f64) -> Vec<bool> {
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    let key = |i: usize| {
        let p = p_values[i];
        if p.is_nan() {
            f64::INFINITY
        } else {
            p
        }
    };
    order.sort_by(|&i, &j| key(i).total_cmp(&key(j)));
    let cutoff = (1..=m)
        .rev()
        .find(|&r| key(order[r - 1]) <= r as f64 * alpha / m as f64)
        .unwrap_or(0);
    let mut out = vec![false; m];
    for &i in &order[..cutoff] {
        out[i] = true;
    }
    out
}

/// One aggregated row of a [`ScoreTable`] plus the per-case CRPS series
/// used for significance testing.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub method: String,
    pub station_id: String,
    pub lead_time_h: u32,
    pub summary: ScoreSummary,
    pub dates: Vec<NaiveDate>,
    pub crps: Vec<f64>,
}

/// Verification scores keyed by (method, station, lead time).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreTable {
    rows: Vec<ScoreRow>,
}

impl ScoreTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a row from per-case scores. Replaces an existing row with the
    /// same key.
    pub fn push(
        &mut self,
        method: &str,
        station_id: &str,
        lead_time_h: u32,
        dates: Vec<NaiveDate>,
        cases: &[CaseScore],
    ) -> Result<()> {
        if dates.len() != cases.len() {
            return Err(Error::Alignment(format!(
                "{method}/{station_id}/{lead_time_h}h: {} dates for {} cases",
                dates.len(),
                cases.len()
            )));
        }
        let summary = summarize(cases)?;
        let row = ScoreRow {
            method: method.to_string(),
            station_id: station_id.to_string(),
            lead_time_h,
            summary,
            dates,
            crps: cases.iter().map(|c| c.crps).collect(),
        };
        match self.rows.iter_mut().find(|r| {
            r.method == row.method
                && r.station_id == row.station_id
                && r.lead_time_h == row.lead_time_h
        }) {
            Some(slot) => *slot = row,
            None => self.rows.push(row),
        }
        Ok(())
    }

    pub fn rows(&self) -> &[ScoreRow] {
        &self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Methods in first-seen order.
    pub fn methods(&self) -> Vec<String> {
        let mut seen = Vec::new();
        for r in &self.rows {
            if !seen.contains(&r.method) {
                seen.push(r.method.clone());
            }
        }
        seen
    }

    pub fn get(&self, method: &str, station_id: &str, lead_time_h: u32) -> Option<&ScoreRow> {
        self.rows.iter().find(|r| {
            r.method == method && r.station_id == station_id && r.lead_time_h == lead_time_h
        })
    }

    /// Case-weighted mean CRPS of a method over all its rows.
    pub fn mean_crps(&self, method: &str) -> Option<f64> {
        let (sum, n) = self
            .rows
            .iter()
            .filter(|r| r.method == method)
            .fold((0.0, 0usize), |(s, n), r| {
                (s + r.crps.iter().sum::<f64>(), n + r.crps.len())
            });
        (n > 0).then(|| sum / n as f64)
    }

    /// Writes one line per row with columns
    /// `method,station,lead_time_h,n,mean_crps,mean_logs,rmse,mean_width,coverage`.
    /// Scores are printed with six decimals; a missing LogS is left empty.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "method",
            "station",
            "lead_time_h",
            "n",
            "mean_crps",
            "mean_logs",
            "rmse",
            "mean_width",
            "coverage",
        ])?;
        for r in &self.rows {
            let s = &r.summary;
            w.write_record([
                r.method.clone(),
                r.station_id.clone(),
                r.lead_time_h.to_string(),
                s.n.to_string(),
                format!("{:.6}", s.mean_crps),
                s.mean_logs.map(|v| format!("{v:.6}")).unwrap_or_default(),
                format!("{:.6}", s.rmse),
                format!("{:.6}", s.mean_width),
                format!("{:.6}", s.coverage),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Percent of (station, lead) cells in which the row method significantly
/// beats the column method.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SignificanceMatrix {
    pub methods: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl SignificanceMatrix {
    pub fn get(&self, better: &str, worse: &str) -> Option<f64> {
        let i = self.methods.iter().position(|m| m == better)?;
        let j = self.methods.iter().position(|m| m == worse)?;
        Some(self.values[i][j])
    }

    /// Square CSV: header `method,<m1>,...`, one row per method.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["method".to_string()];
        header.extend(self.methods.iter().cloned());
        w.write_record(&header)?;
        for (m, row) in self.methods.iter().zip(&self.values) {
            let mut rec = vec![m.clone()];
            rec.extend(row.iter().map(|v| format!("{v:.6}")));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// One-sided DM tests of every ordered method pair in every (station, lead)
/// cell, BH-corrected across the cells of each pair.
///
/// A cell whose loss differential has zero long-run variance counts as not
/// significant.
pub fn significance_matrix(table: &ScoreTable, alpha: f64) -> Result<SignificanceMatrix> {
    let methods = table.methods();
    let cells: BTreeSet<(String, u32)> = table
        .rows()
        .iter()
        .map(|r| (r.station_id.clone(), r.lead_time_h))
        .collect();
    // alignment: every method covers every cell on identical dates
    let mut by_cell: BTreeMap<&(String, u32), Vec<&ScoreRow>> = BTreeMap::new();
    for cell in &cells {
        let mut rows = Vec::with_capacity(methods.len());
        for m in &methods {
            let row = table.get(m, &cell.0, cell.1).ok_or_else(|| {
                Error::Alignment(format!(
                    "{m} has no scores for station {} lead {}h",
                    cell.0, cell.1
                ))
            })?;
            rows.push(row);
        }
        if rows.iter().any(|r| r.dates != rows[0].dates) {
            return Err(Error::Alignment(format!(
                "methods cover different dates for station {} lead {}h",
                cell.0, cell.1
            )));
        }
        by_cell.insert(cell, rows);
    }

    let k = methods.len();
    let pairs: Vec<(usize, usize)> = (0..k)
        .flat_map(|i| (0..k).filter(move |&j| j != i).map(move |j| (i, j)))
        .collect();
    let entries: Vec<((usize, usize), f64)> = pairs
        .par_iter()
        .map(|&(i, j)| -> Result<((usize, usize), f64)> {
            let mut p = Vec::with_capacity(by_cell.len());
            for rows in by_cell.values() {
                match dm_test(&rows[i].crps, &rows[j].crps, Alternative::ABetter) {
                    Ok(r) => p.push(r.p_value),
                    Err(Error::DegenerateDifferential) => p.push(1.0),
                    Err(e) => return Err(e),
                }
            }
            let rejected = benjamini_hochberg(&p, alpha).iter().filter(|r| **r).count();
            let pct = if p.is_empty() {
                0.0
            } else {
                100.0 * rejected as f64 / p.len() as f64
            };
            Ok(((i, j), pct))
        })
        .collect::<Result<_>>()?;

    let mut values = vec![vec![0.0; k]; k];
    for ((i, j), v) in entries {
        values[i][j] = v;
    }
    Ok(SignificanceMatrix { methods, values })
}

/// Percent of stations with significant Ljung-Box dependence for one model
/// and lag, after BH correction across stations.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DependenceRow {
    pub model: String,
    pub lag: usize,
    pub n_stations: usize,
    /// Rejections for the residuals.
    pub plain_pct: f64,
    /// Rejections for the squared residuals.
    pub squared_pct: f64,
}

/// Ljung-Box rejection rates of residual series (one per station) for each
/// model and lag.
pub fn residual_dependence_table(
    residuals: &[(String, Vec<Vec<f64>>)],
    lags: &[usize],
    alpha: f64,
) -> Result<Vec<DependenceRow>> {
    let mut out = Vec::with_capacity(residuals.len() * lags.len());
    for (model, stations) in residuals {
        let squared: Vec<Vec<f64>> = stations
            .iter()
            .map(|s| s.iter().map(|v| v * v).collect())
            .collect();
        for &lag in lags {
            let pct = |series: &[Vec<f64>]| -> Result<f64> {
                let p: Vec<f64> = series
                    .iter()
                    .map(|s| ljung_box(s, lag).map(|r| r.p_value))
                    .collect::<Result<_>>()?;
                let rej = benjamini_hochberg(&p, alpha).iter().filter(|r| **r).count();
                Ok(if p.is_empty() {
                    0.0
                } else {
                    100.0 * rej as f64 / p.len() as f64
                })
            };
            out.push(DependenceRow {
                model: model.clone(),
                lag,
                n_stations: stations.len(),
                plain_pct: pct(stations)?,
                squared_pct: pct(&squared)?,
            });
        }
    }
    Ok(out)
}

/// Columns `model,lag,n_stations,plain_pct,squared_pct`.
pub fn write_dependence_csv<W: Write>(rows: &[DependenceRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["model", "lag", "n_stations", "plain_pct", "squared_pct"])?;
    for r in rows {
        w.write_record([
            r.model.clone(),
            r.lag.to_string(),
            r.n_stations.to_string(),
            format!("{:.6}", r.plain_pct),
            format!("{:.6}", r.squared_pct),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Equal-width PIT histogram with the sample variance of the values.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PitHistogram {
    pub counts: Vec<usize>,
    pub variance: f64,
}

pub fn pit_histogram(values: &[f64], bins: usize) -> Result<PitHistogram> {
    if bins < 2 {
        return Err(Error::InvalidConfig(format!(
            "need at least 2 bins, got {bins}"
        )));
    }
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut counts = vec![0usize; bins];
    for &u in values {
        if !(0.0..=1.0).contains(&u) {
            return Err(Error::InvalidPit(u));
        }
        let b = ((u * bins as f64) as usize).min(bins - 1);
        counts[b] += 1;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let variance = if values.len() < 2 {
        0.0
    } else {
        values.iter().map(|u| (u - mean).powi(2)).sum::<f64>() / (n - 1.0)
    };
    Ok(PitHistogram { counts, variance })
}

/// Counts of verification ranks `1..=m+1` for an `m`-member ensemble.
pub fn rank_histogram(ranks: &[usize], members: usize) -> Result<Vec<usize>> {
    let mut counts = vec![0usize; members + 1];
    for &r in ranks {
        if r == 0 || r > members + 1 {
            return Err(Error::InvalidInput(format!(
                "rank {r} outside 1..={}",
                members + 1
            )));
        }
        counts[r - 1] += 1;
    }
    Ok(counts)
}

/// One-sample Kolmogorov-Smirnov test against U(0, 1). Returns the statistic
/// and its asymptotic p-value with Stephens' small-sample adjustment.
pub fn ks_uniform(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut v = values.to_vec();
    for &u in &v {
        if !(0.0..=1.0).contains(&u) {
            return Err(Error::InvalidPit(u));
        }
    }
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let d = v
        .iter()
        .enumerate()
        .map(|(i, &u)| ((i as f64 + 1.0) / n - u).max(u - i as f64 / n))
        .fold(0.0, f64::max);
    let sn = n.sqrt();
    Ok((d, kolmogorov_sf((sn + 0.12 + 0.11 / sn) * d)))
}
