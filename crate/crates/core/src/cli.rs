//! Command-line runner: `simulate`, `fit`, `predict` and `verify`.
//!
//! Settings come from an optional flat `key = value` file (`--config`) and
//! are overridden by flags. Recognized keys:
//!
//! | key | meaning | default |
//! |-----|---------|---------|
//! | `data` | directory with station CSV files | `data` |
//! | `out` | output directory | `out` |
//! | `models` | comma list of model names | all six |
//! | `lead` | comma list of lead times in hours | all found (simulate: `24`) |
//! | `stations` | comma list of station ids | all found |
//! | `train_start`, `train_end` | training period | 2015-01-01, 2019-12-31 |
//! | `valid_start`, `valid_end` | validation period | 2020-01-01, 2020-12-31 |
//! | `seed` | simulation and randomization seed | 1 |
//! | `max_iter` | optimizer iteration limit | 500 |
//! | `n_stations` | stations to simulate | 3 |
//! | `n_days` | days per simulated series | 2192 |
//! | `members` | ensemble size | 20 |
//! | `sim_start` | first simulated date | 2015-01-01 |
//! | `error_process` | `standardized` or `deseasonalized` | `standardized` |
//! | `ar_tau` | comma list of AR coefficients of the error process | `0.6` |
//! | `garch` | `omega0,omega1,omega2` or `none` | `none` |
//! | `alpha` | significance level | 0.05 |
//! | `lb_lags` | comma list of Ljung-Box lags | `1,2,...,10` |
//!
//! Outputs: `simulate` writes `station_<id>_lead<h>.csv` and
//! `truth_<id>_lead<h>.csv` into the output directory; `fit` writes
//! `models/<model>_<station>_lead<h>.json`; `predict` writes
//! `predictions.csv`; `verify` writes `scores.csv`, `significance.csv`,
//! `pit.csv` and `residual_dependence.csv`.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data or I/O error,
//! 4 numerical failure. Errors are printed as one line starting with
//! `error[E_CONFIG]`, `error[E_DATA]`, `error[E_IO]` or `error[E_NUMERIC]`.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use clap::{Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::{
    read_station_csv, write_station_csv, ErrorProcess, SeriesFilter, StationSeries,
    SyntheticConfig, TruthRow, DEFAULT_IMPUTE_DECAY, DEFAULT_IMPUTE_HALF_WINDOW,
};
use crate::models::{fit, FitSettings, FittedModel, ModelKind};
use crate::scoring::{
    ensemble_nominal_level, score_ensemble, score_gaussian, verification_rank, CaseScore,
    GaussianParams,
};
use crate::timeseries::{ArCoeffs, GarchCoeffs};
use crate::verify::{
    ks_uniform, pit_histogram, residual_dependence_table, significance_matrix,
    write_dependence_csv, ScoreTable,
};
use crate::{Error, Result};

const PIT_BINS: usize = 10;
/// Method name of the unprocessed ensemble in verification outputs.
pub const RAW_METHOD: &str = "raw";

#[derive(Debug, Parser)]
#[command(
    name = "tsemos",
    version,
    about = "Postprocess ensemble temperature forecasts"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    flags: Flags,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write synthetic station series and their true predictive distributions.
    Simulate,
    /// Fit models on the training period.
    Fit,
    /// Forecast the validation period with fitted models.
    Predict,
    /// Score predictions and compare methods.
    Verify,
}

#[derive(Debug, clap::Args)]
struct Flags {
    /// Flat key = value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    data: Option<String>,
    #[arg(long, global = true)]
    out: Option<String>,
    /// Comma-separated model names.
    #[arg(long, global = true)]
    models: Option<String>,
    /// Comma-separated lead times in hours.
    #[arg(long, global = true)]
    lead: Option<String>,
    /// Comma-separated station ids.
    #[arg(long, global = true)]
    stations: Option<String>,
    #[arg(long, global = true)]
    train_start: Option<String>,
    #[arg(long, global = true)]
    train_end: Option<String>,
    #[arg(long, global = true)]
    valid_start: Option<String>,
    #[arg(long, global = true)]
    valid_end: Option<String>,
    #[arg(long, global = true)]
    seed: Option<String>,
    #[arg(long, global = true)]
    max_iter: Option<String>,
}

impl Flags {
    fn overrides(&self) -> Vec<(&'static str, &str)> {
        let pairs = [
            ("data", &self.data),
            ("out", &self.out),
            ("models", &self.models),
            ("lead", &self.lead),
            ("stations", &self.stations),
            ("train_start", &self.train_start),
            ("train_end", &self.train_end),
            ("valid_start", &self.valid_start),
            ("valid_end", &self.valid_end),
            ("seed", &self.seed),
            ("max_iter", &self.max_iter),
        ];
        pairs
            .into_iter()
            .filter_map(|(k, v)| v.as_deref().map(|v| (k, v)))
            .collect()
    }
}

/// Fully resolved run settings.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data: PathBuf,
    pub out: PathBuf,
    pub models: Vec<ModelKind>,
    /// Lead-time filter; empty means every lead found in the data.
    pub leads: Vec<u32>,
    /// Station filter; empty means every station found.
    pub stations: Vec<String>,
    pub train_start: NaiveDate,
    pub train_end: NaiveDate,
    pub valid_start: NaiveDate,
    pub valid_end: NaiveDate,
    pub seed: u64,
    pub max_iter: usize,
    pub n_stations: usize,
    pub n_days: usize,
    pub members: usize,
    pub sim_start: NaiveDate,
    pub error_process: ErrorProcess,
    pub ar_tau: Vec<f64>,
    pub garch: Option<GarchCoeffs>,
    pub alpha: f64,
    pub lb_lags: Vec<usize>,
}

fn date(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).expect("valid date")
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: PathBuf::from("data"),
            out: PathBuf::from("out"),
            models: ModelKind::ALL.to_vec(),
            leads: Vec::new(),
            stations: Vec::new(),
            train_start: date(2015, 1, 1),
            train_end: date(2019, 12, 31),
            valid_start: date(2020, 1, 1),
            valid_end: date(2020, 12, 31),
            seed: 1,
            max_iter: 500,
            n_stations: 3,
            n_days: 2192,
            members: 20,
            sim_start: date(2015, 1, 1),
            error_process: ErrorProcess::Standardized,
            ar_tau: vec![0.6],
            garch: None,
            alpha: 0.05,
            lb_lags: (1..=10).collect(),
        }
    }
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_config_text(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::InvalidConfig(format!("line {}: expected key = value", i + 1)))?;
        out.insert(k.trim().replace('-', "_"), v.trim().to_string());
    }
    Ok(out)
}

fn list<T, F>(v: &str, f: F) -> Result<Vec<T>>
where
    F: Fn(&str) -> Result<T>,
{
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(f)
        .collect()
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("{key}: cannot parse '{v}'")))
}

fn parse_date(key: &str, v: &str) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(v.trim(), "%Y-%m-%d")
        .map_err(|_| Error::InvalidConfig(format!("{key}: '{v}' is not a YYYY-MM-DD date")))
}

impl RunConfig {
    /// Applies `key = value` settings on top of `self`.
    pub fn apply(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "data" => self.data = PathBuf::from(v),
            "out" => self.out = PathBuf::from(v),
            "models" => self.models = list(v, |s| s.parse())?,
            "lead" => self.leads = list(v, |s| num(key, s))?,
            "stations" => self.stations = list(v, |s| Ok(s.to_string()))?,
            "train_start" => self.train_start = parse_date(key, v)?,
            "train_end" => self.train_end = parse_date(key, v)?,
            "valid_start" => self.valid_start = parse_date(key, v)?,
            "valid_end" => self.valid_end = parse_date(key, v)?,
            "seed" => self.seed = num(key, v)?,
            "max_iter" => self.max_iter = num(key, v)?,
            "n_stations" => self.n_stations = num(key, v)?,
            "n_days" => self.n_days = num(key, v)?,
            "members" => self.members = num(key, v)?,
            "sim_start" => self.sim_start = parse_date(key, v)?,
            "error_process" => {
                self.error_process = match v.trim().to_ascii_lowercase().as_str() {
                    "standardized" => ErrorProcess::Standardized,
                    "deseasonalized" => ErrorProcess::Deseasonalized,
                    _ => {
                        return Err(Error::InvalidConfig(format!(
                            "error_process: unknown '{v}'"
                        )))
                    }
                }
            }
            "ar_tau" => self.ar_tau = list(v, |s| num(key, s))?,
            "garch" => {
                self.garch = if v.trim().eq_ignore_ascii_case("none") {
                    None
                } else {
                    let w: Vec<f64> = list(v, |s| num(key, s))?;
                    if w.len() != 3 {
                        return Err(Error::InvalidConfig(
                            "garch: expected omega0,omega1,omega2".into(),
                        ));
                    }
                    Some(
                        GarchCoeffs::new(w[0], w[1], w[2])
                            .map_err(|e| Error::InvalidConfig(format!("garch: {e}")))?,
                    )
                }
            }
            "alpha" => self.alpha = num(key, v)?,
            "lb_lags" => self.lb_lags = list(v, |s| num(key, s))?,
            _ => return Err(Error::InvalidConfig(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.models.is_empty() {
            return fail("at least one model must be selected");
        }
        if self.train_start > self.train_end || self.valid_start > self.valid_end {
            return fail("date ranges must be ordered (start <= end)");
        }
        if self.train_end >= self.valid_start {
            return fail("training period must end before the validation period starts");
        }
        if self.max_iter == 0 {
            return fail("max_iter must be positive");
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return fail("alpha must lie in (0, 1)");
        }
        if self.lb_lags.contains(&0) {
            return fail("Ljung-Box lags must be positive");
        }
        if self.members < 2 || self.n_stations == 0 {
            return fail("need at least two members and one station");
        }
        Ok(())
    }

    fn fit_settings(&self) -> FitSettings {
        let mut s = FitSettings::default();
        s.optimizer.max_iterations = self.max_iter;
        s
    }

    fn filter(&self) -> impl Fn(&StationSeries) -> bool + '_ {
        move |s| {
            (self.stations.is_empty() || self.stations.iter().any(|id| id == s.station_id()))
                && (self.leads.is_empty() || self.leads.contains(&s.lead_time_h()))
        }
    }
}

fn code(e: &Error) -> (&'static str, i32) {
    match e {
        Error::InvalidConfig(_) | Error::InvalidLevel(_) => ("E_CONFIG", 2),
        Error::Io(_) => ("E_IO", 3),
        Error::NumericalFailure(_)
        | Error::DegenerateSeries(_)
        | Error::DegenerateDifferential
        | Error::InvalidStart => ("E_NUMERIC", 4),
        _ => ("E_DATA", 3),
    }
}

fn report(e: &Error) -> i32 {
    let (tag, exit) = code(e);
    let msg = e.to_string().replace(['\n', '\r'], " ");
    eprintln!("error[{tag}]: {msg}");
    exit
}

/// Runs the command line `args` (program name first) and returns the exit
/// code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let msg = e.to_string();
            let first = msg
                .lines()
                .find(|l| !l.trim().is_empty())
                .unwrap_or("invalid arguments");
            let first = first.trim_start_matches("error: ");
            eprintln!("error[E_CONFIG]: {first}");
            return 2;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => report(&e),
    }
}

fn resolve(flags: &Flags) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &flags.config {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::InvalidConfig(format!("cannot read {}: {e}", path.display())))?;
        for (k, v) in parse_config_text(&text)? {
            cfg.apply(&k, &v)?;
        }
    }
    for (k, v) in flags.overrides() {
        cfg.apply(k, v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn execute(cli: &Cli) -> Result<()> {
    let cfg = resolve(&cli.flags)?;
    match cli.command {
        Command::Simulate => cmd_simulate(&cfg).map(|_| ()),
        Command::Fit => cmd_fit(&cfg).map(|_| ()),
        Command::Predict => cmd_predict(&cfg).map(|_| ()),
        Command::Verify => cmd_verify(&cfg),
    }
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(fs::File::create(path)?))
}

/// Synthetic configuration for station `index` and one lead time. Stations
/// differ in climate and spread; longer leads get a less informative
/// ensemble.
pub fn station_config(cfg: &RunConfig, index: usize, lead_time_h: u32) -> Result<SyntheticConfig> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64 + 1);
    let climate_mean = rng.random_range(4.0..14.0);
    let climate_amplitude = rng.random_range(6.0..10.0);
    let spread = rng.random_range(0.7..1.1);
    let k = crate::data::lead_offset_days(lead_time_h) as f64;
    let base = SyntheticConfig::default();
    Ok(SyntheticConfig {
        station_id: format!("S{:03}", index + 1),
        lead_time_h,
        start: cfg.sim_start,
        n_days: cfg.n_days,
        members: cfg.members,
        error_process: cfg.error_process,
        ar: ArCoeffs::new(0.0, cfg.ar_tau.clone())
            .map_err(|e| Error::InvalidConfig(e.to_string()))?,
        garch: cfg.garch,
        climate_mean,
        climate_amplitude,
        anomaly_persistence: base.anomaly_persistence,
        spread: spread * (1.0 + 0.15 * k),
        seed: cfg
            .seed
            .wrapping_mul(1_000_003)
            .wrapping_add(index as u64 * 1009 + lead_time_h as u64),
        ..base
    })
}

fn series_file(dir: &Path, station: &str, lead: u32) -> PathBuf {
    dir.join(format!("station_{station}_lead{lead}.csv"))
}

/// Writes one station file and one truth file per (station, lead). Returns
/// the station file paths.
pub fn cmd_simulate(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let leads = if cfg.leads.is_empty() {
        vec![24]
    } else {
        cfg.leads.clone()
    };
    fs::create_dir_all(&cfg.out)?;
    let mut written = Vec::new();
    for index in 0..cfg.n_stations {
        for &lead in &leads {
            let sc = station_config(cfg, index, lead)?;
            let (series, truth) = crate::data::generate_synthetic(&sc)?;
            let path = series_file(&cfg.out, series.station_id(), lead);
            let mut w = create(&path)?;
            write_station_csv(&series, &mut w)?;
            w.flush()?;
            let mut tw = create(
                &cfg.out
                    .join(format!("truth_{}_lead{lead}.csv", series.station_id())),
            )?;
            write_truth_csv(series.station_id(), lead, &truth, &mut tw)?;
            tw.flush()?;
            written.push(path);
        }
    }
    eprintln!(
        "simulate: wrote {} series to {}",
        written.len(),
        cfg.out.display()
    );
    Ok(written)
}

/// Columns `station_id,date,lead_time_h,mu,sigma,mu_seasonal,sigma_seasonal`.
pub fn write_truth_csv<W: Write>(
    station: &str,
    lead: u32,
    truth: &[TruthRow],
    writer: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "station_id",
        "date",
        "lead_time_h",
        "mu",
        "sigma",
        "mu_seasonal",
        "sigma_seasonal",
    ])?;
    for r in truth {
        w.write_record([
            station.to_string(),
            r.date.to_string(),
            lead.to_string(),
            format!("{:.6}", r.mu),
            format!("{:.6}", r.sigma),
            format!("{:.6}", r.mu_seasonal),
            format!("{:.6}", r.sigma_seasonal),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Loads every `*.csv` station file in the data directory (truth files
/// excluded), sorted by station and lead.
pub fn load_series(cfg: &RunConfig) -> Result<Vec<StationSeries>> {
    let entries = fs::read_dir(&cfg.data).map_err(|e| {
        Error::MissingObservations(format!(
            "cannot read data directory {}: {e}",
            cfg.data.display()
        ))
    })?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().is_some_and(|x| x == "csv")
                && p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("station_"))
        })
        .collect();
    paths.sort();
    let keep = cfg.filter();
    let mut out = Vec::new();
    for p in paths {
        let f = fs::File::open(&p)?;
        let series = read_station_csv(f, &SeriesFilter::default()).map_err(|e| match e {
            Error::Parse { row, msg } => Error::Parse {
                row,
                msg: format!("{}: {msg}", p.display()),
            },
            other => other,
        })?;
        out.extend(series.into_iter().filter(|s| keep(s)));
    }
    out.sort_by(|a, b| (a.station_id(), a.lead_time_h()).cmp(&(b.station_id(), b.lead_time_h())));
    if out.is_empty() {
        return Err(Error::MissingObservations(format!(
            "no station series match the filters in {}",
            cfg.data.display()
        )));
    }
    Ok(out)
}

fn model_file(dir: &Path, kind: ModelKind, station: &str, lead: u32) -> PathBuf {
    dir.join("models")
        .join(format!("{kind}_{station}_lead{lead}.json"))
}

fn tuple_err(kind: ModelKind, s: &StationSeries, e: Error) -> Error {
    let tag = format!(
        "{kind} station {} lead {}h",
        s.station_id(),
        s.lead_time_h()
    );
    match e {
        Error::NumericalFailure(m) => Error::NumericalFailure(format!("{tag}: {m}")),
        Error::InvalidInput(m) => Error::InvalidInput(format!("{tag}: {m}")),
        Error::MissingObservations(m) => Error::MissingObservations(format!("{tag}: {m}")),
        Error::Io(_) | Error::InvalidConfig(_) => e,
        other => Error::InvalidInput(format!("{tag}: {other}")),
    }
}

/// Gap-filled copy of a series; the original missing flags are kept by the
/// caller for verification.
fn filled(s: &StationSeries) -> Result<StationSeries> {
    if s.is_complete() {
        Ok(s.clone())
    } else {
        s.impute(DEFAULT_IMPUTE_HALF_WINDOW, DEFAULT_IMPUTE_DECAY)
    }
}

/// Fits every selected model on every series. Returns the fitted models in
/// (station, lead, model) order.
pub fn cmd_fit(cfg: &RunConfig) -> Result<Vec<FittedModel>> {
    let series = load_series(cfg)?;
    let settings = cfg.fit_settings();
    let mut training = Vec::with_capacity(series.len());
    for s in &series {
        let train = filled(s)
            .and_then(|f| f.slice(cfg.train_start, cfg.train_end))
            .map_err(|e| {
                Error::MissingObservations(format!(
                    "station {} lead {}h training data: {e}",
                    s.station_id(),
                    s.lead_time_h()
                ))
            })?;
        training.push(train);
    }
    let tuples: Vec<(usize, ModelKind)> = (0..series.len())
        .flat_map(|i| cfg.models.iter().map(move |k| (i, *k)))
        .collect();
    let fitted: Vec<FittedModel> = tuples
        .par_iter()
        .map(|&(i, kind)| {
            fit(kind, &training[i], &settings).map_err(|e| tuple_err(kind, &training[i], e))
        })
        .collect::<Result<_>>()?;

    let mut warnings = 0usize;
    for m in &fitted {
        warnings += m.meta.warnings.len();
        let path = model_file(&cfg.out, m.kind, &m.meta.station_id, m.meta.lead_time_h);
        let mut w = create(&path)?;
        w.write_all(m.to_json()?.as_bytes())?;
        w.write_all(b"\n")?;
        w.flush()?;
    }
    eprintln!(
        "fit: {} models written to {}, {} not converged, {} warnings",
        fitted.len(),
        cfg.out.join("models").display(),
        fitted.iter().filter(|m| !m.meta.converged).count(),
        warnings
    );
    Ok(fitted)
}

fn load_model(cfg: &RunConfig, kind: ModelKind, s: &StationSeries) -> Result<FittedModel> {
    let path = model_file(&cfg.out, kind, s.station_id(), s.lead_time_h());
    let text = fs::read_to_string(&path).map_err(|e| {
        Error::MissingObservations(format!("cannot read fitted model {}: {e}", path.display()))
    })?;
    let m = FittedModel::from_json(&text)?;
    if m.kind != kind
        || m.meta.station_id != s.station_id()
        || m.meta.lead_time_h != s.lead_time_h()
    {
        return Err(Error::InvalidInput(format!(
            "{} does not match {kind} station {} lead {}h",
            path.display(),
            s.station_id(),
            s.lead_time_h()
        )));
    }
    Ok(m)
}

/// One line of `predictions.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRow {
    pub date: NaiveDate,
    pub station_id: String,
    pub lead_time_h: u32,
    pub model: ModelKind,
    pub mu: f64,
    pub sigma: f64,
}

/// Forecasts the validation period with every selected fitted model and
/// writes `predictions.csv` (`date,station,lead_time_h,model,mu,sigma`).
pub fn cmd_predict(cfg: &RunConfig) -> Result<Vec<PredictionRow>> {
    let series = load_series(cfg)?;
    let tuples: Vec<(usize, ModelKind)> = (0..series.len())
        .flat_map(|i| cfg.models.iter().map(move |k| (i, *k)))
        .collect();
    let blocks: Vec<Vec<PredictionRow>> = tuples
        .par_iter()
        .map(|&(i, kind)| -> Result<Vec<PredictionRow>> {
            let s = &series[i];
            let model = load_model(cfg, kind, s)?;
            let full = filled(s).map_err(|e| tuple_err(kind, s, e))?;
            let fc = model
                .predict(&full, cfg.valid_start, cfg.valid_end)
                .map_err(|e| tuple_err(kind, s, e))?;
            Ok(fc
                .into_iter()
                .map(|f| PredictionRow {
                    date: f.date,
                    station_id: s.station_id().to_string(),
                    lead_time_h: s.lead_time_h(),
                    model: kind,
                    mu: f.params.mu(),
                    sigma: f.params.sigma(),
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let rows: Vec<PredictionRow> = blocks.into_iter().flatten().collect();

    let mut w = csv::Writer::from_writer(create(&cfg.out.join("predictions.csv"))?);
    w.write_record(["date", "station", "lead_time_h", "model", "mu", "sigma"])?;
    for r in &rows {
        w.write_record([
            r.date.to_string(),
            r.station_id.clone(),
            r.lead_time_h.to_string(),
            r.model.to_string(),
            format!("{:.6}", r.mu),
            format!("{:.6}", r.sigma),
        ])?;
    }
    w.flush()?;
    eprintln!(
        "predict: {} rows written to {}",
        rows.len(),
        cfg.out.join("predictions.csv").display()
    );
    Ok(rows)
}

/// Reads `predictions.csv` as written by [`cmd_predict`].
pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRow>> {
    let f = fs::File::open(path)
        .map_err(|e| Error::MissingObservations(format!("cannot read {}: {e}", path.display())))?;
    let mut r = csv::Reader::from_reader(f);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != ["date", "station", "lead_time_h", "model", "mu", "sigma"] {
        return Err(Error::Parse {
            row: 1,
            msg: format!("unexpected predictions header {header:?}"),
        });
    }
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let row = i + 2;
        let bad = |m: String| Error::Parse { row, msg: m };
        let f = |j: usize| -> Result<f64> {
            rec[j]
                .parse()
                .map_err(|_| bad(format!("cannot parse '{}'", &rec[j])))
        };
        out.push(PredictionRow {
            date: NaiveDate::parse_from_str(&rec[0], "%Y-%m-%d").map_err(|e| bad(e.to_string()))?,
            station_id: rec[1].to_string(),
            lead_time_h: rec[2]
                .parse()
                .map_err(|_| bad(format!("bad lead '{}'", &rec[2])))?,
            model: rec[3]
                .parse()
                .map_err(|_| bad(format!("unknown model '{}'", &rec[3])))?,
            mu: f(4)?,
            sigma: f(5)?,
        });
    }
    Ok(out)
}

/// Scores predictions and the raw ensemble on validation days with an
/// observation, then writes the comparison tables.
pub fn cmd_verify(cfg: &RunConfig) -> Result<()> {
    let series = load_series(cfg)?;
    let preds = read_predictions(&cfg.out.join("predictions.csv"))?;
    let mut grouped: BTreeMap<(String, u32, ModelKind), Vec<&PredictionRow>> = BTreeMap::new();
    for p in &preds {
        if cfg.models.contains(&p.model) {
            grouped
                .entry((p.station_id.clone(), p.lead_time_h, p.model))
                .or_default()
                .push(p);
        }
    }

    let mut table = ScoreTable::new();
    let mut pit_rows: Vec<(String, String, u32, Vec<f64>)> = Vec::new();
    for s in &series {
        let lo = s.index_of(cfg.valid_start);
        let hi = s.index_of(cfg.valid_end);
        let (Some(lo), Some(hi)) = (lo, hi) else {
            return Err(Error::Alignment(format!(
                "station {} lead {}h does not cover the validation period",
                s.station_id(),
                s.lead_time_h()
            )));
        };
        let days: Vec<usize> = (lo..=hi).filter(|&i| s.obs()[i].is_some()).collect();
        if days.is_empty() {
            return Err(Error::MissingObservations(format!(
                "station {} lead {}h has no validation observations",
                s.station_id(),
                s.lead_time_h()
            )));
        }
        let dates: Vec<NaiveDate> = days.iter().map(|&i| s.dates()[i]).collect();
        let level = ensemble_nominal_level(s.n_members());

        // raw ensemble, with randomized PIT from verification ranks
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut raw = Vec::with_capacity(days.len());
        let mut raw_pit = Vec::with_capacity(days.len());
        for &i in &days {
            let y = s.obs()[i].expect("observed day");
            raw.push(score_ensemble(&s.members()[i], y)?);
            let rank = verification_rank(&s.members()[i], y, &mut rng);
            let v: f64 = rng.random();
            raw_pit.push((rank as f64 - 1.0 + v) / (s.n_members() as f64 + 1.0));
        }
        table.push(
            RAW_METHOD,
            s.station_id(),
            s.lead_time_h(),
            dates.clone(),
            &raw,
        )?;
        pit_rows.push((
            RAW_METHOD.into(),
            s.station_id().into(),
            s.lead_time_h(),
            raw_pit,
        ));

        for &kind in &cfg.models {
            let Some(rows) = grouped.get(&(s.station_id().to_string(), s.lead_time_h(), kind))
            else {
                return Err(Error::Alignment(format!(
                    "no predictions for {kind} station {} lead {}h",
                    s.station_id(),
                    s.lead_time_h()
                )));
            };
            let by_date: BTreeMap<NaiveDate, &PredictionRow> =
                rows.iter().map(|r| (r.date, *r)).collect();
            let mut cases: Vec<CaseScore> = Vec::with_capacity(days.len());
            for (&i, d) in days.iter().zip(&dates) {
                let p = by_date.get(d).ok_or_else(|| {
                    Error::Alignment(format!(
                        "{kind} station {} lead {}h: no prediction for {d}",
                        s.station_id(),
                        s.lead_time_h()
                    ))
                })?;
                let g = GaussianParams::new(p.mu, p.sigma)?;
                cases.push(score_gaussian(g, s.obs()[i].expect("observed day"), level)?);
            }
            let pit: Vec<f64> = cases.iter().filter_map(|c| c.pit).collect();
            table.push(
                kind.name(),
                s.station_id(),
                s.lead_time_h(),
                dates.clone(),
                &cases,
            )?;
            pit_rows.push((
                kind.name().into(),
                s.station_id().into(),
                s.lead_time_h(),
                pit,
            ));
        }
    }

    let mut w = create(&cfg.out.join("scores.csv"))?;
    table.write_csv(&mut w)?;
    w.flush()?;

    let matrix = significance_matrix(&table, cfg.alpha)?;
    let mut w = create(&cfg.out.join("significance.csv"))?;
    matrix.write_csv(&mut w)?;
    w.flush()?;

    let mut w = csv::Writer::from_writer(create(&cfg.out.join("pit.csv"))?);
    let mut header: Vec<String> = [
        "method",
        "station",
        "lead_time_h",
        "n",
        "pit_variance",
        "ks_pvalue",
    ]
    .map(String::from)
    .to_vec();
    header.extend((1..=PIT_BINS).map(|b| format!("bin{b}")));
    w.write_record(&header)?;
    for (method, station, lead, pit) in &pit_rows {
        let h = pit_histogram(pit, PIT_BINS)?;
        let (_, ks_p) = ks_uniform(pit)?;
        let mut rec = vec![
            method.clone(),
            station.clone(),
            lead.to_string(),
            pit.len().to_string(),
            format!("{:.6}", h.variance),
            format!("{ks_p:.6}"),
        ];
        rec.extend(h.counts.iter().map(|c| c.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;

    // residual dependence of the fitted models on their training periods
    let mut residuals = Vec::new();
    for &kind in &cfg.models {
        let per_series: Vec<Vec<f64>> = series
            .par_iter()
            .map(|s| -> Result<Vec<f64>> {
                let model = load_model(cfg, kind, s)?;
                let train = filled(s)
                    .and_then(|f| f.slice(model.meta.train_start, model.meta.train_end))
                    .map_err(|e| tuple_err(kind, s, e))?;
                Ok(model
                    .training_residuals(&train)
                    .map_err(|e| tuple_err(kind, s, e))?
                    .standardized)
            })
            .collect::<Result<_>>()?;
        residuals.push((kind.name().to_string(), per_series));
    }
    let dep = residual_dependence_table(&residuals, &cfg.lb_lags, cfg.alpha)?;
    let mut w = create(&cfg.out.join("residual_dependence.csv"))?;
    write_dependence_csv(&dep, &mut w)?;
    w.flush()?;

    let mut summary: Vec<(String, f64)> = table
        .methods()
        .into_iter()
        .filter_map(|m| table.mean_crps(&m).map(|c| (m, c)))
        .collect();
    summary.sort_by(|a, b| a.1.total_cmp(&b.1));
    for (m, c) in summary {
        eprintln!("verify: {m:<16} mean CRPS {c:.4}");
    }
    Ok(())
}
