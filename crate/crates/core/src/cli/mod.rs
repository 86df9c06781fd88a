//! Command-line surface: stream ingestion, configuration files, and the
//! subcommands that tie detection, calibration, simulation, preprocessing,
//! and life prediction together.
//!
//! Streams are CSV with header `t,s1,...,sN`; the time column is mandatory
//! and must be strictly increasing. Detectors consume rows in order, so `t`
//! acts as a guard against silently dropped frames rather than as the
//! recursion clock. All outputs are UTF-8, and every run is a pure function
//! of its inputs and the resolved seed, byte for byte.
//!
//! Exit codes: 0 success (for `detect`, an alarm), 1 stream exhausted with
//! no alarm, 2 input or validation error.

use crate::calibration::{arl_approx, solve_threshold, CalibrationInput, CalibrationTarget};
use crate::detectors::{AdaptiveParams, DetectorConfig};
use crate::model::{ObservationFrame, ScenarioSpec, SensorModel};
use crate::montecarlo::{
    arl_trial_reports, cpe_trial_reports, edd_trial_reports, Procedure, SummaryStats, TrialReport,
};
use crate::preprocess::{build_whitener, detrend_linear, WhitenTransform};
use crate::prognostics::{extract_features, fit_ttf_model, predict_life, relative_error};
use crate::{Error, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use serde::Deserialize;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

/// Environment variable consulted for the seed when neither the command
/// line nor the config file provides one.
pub const SEED_ENV_VAR: &str = "SLOPEWATCH_SEED";

#[derive(Parser, Debug)]
#[command(
    name = "slopewatch",
    version,
    about = "Streaming multi-sensor slope-change detection"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Monitor a recorded stream and report the first alarm.
    Detect(DetectArgs),
    /// Analytic threshold/run-length calibration.
    Calibrate(CalibrateArgs),
    /// Monte Carlo run-length, delay, and estimation studies.
    Simulate(SimulateArgs),
    /// Decorrelate a stream with a known covariance.
    Whiten(WhitenArgs),
    /// Remove per-sensor linear trends fitted on an in-control prefix.
    Detrend(DetrendArgs),
    /// Fit and apply the residual-life model on run-to-failure streams.
    Prognose(PrognoseArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum DetectorKind {
    /// Mixture likelihood ratio over unknown slopes.
    Glr,
    /// Mixture detector at fixed nominal rates.
    Cusum,
    /// Mixture with per-sensor weights learned online.
    Adaptive,
    /// Mean-shift analogue of the mixture detector.
    MeanShift,
    /// One chart per sensor, alarm on the first crossing.
    Multichart,
}

/// Detector selection shared by `detect` and `simulate`.
#[derive(Args, Debug)]
struct DetectorArgs {
    #[arg(long, value_enum, default_value_t = DetectorKind::Glr)]
    detector: DetectorKind,

    /// Prior fraction of affected sensors; defaults to 0.3 (1.0 after
    /// whitening, where the mixture reduction no longer applies).
    #[arg(long)]
    p0: Option<f64>,

    /// Number of retained candidate change points.
    #[arg(long, default_value_t = 200)]
    window: usize,

    /// Alarm threshold; per-sensor for the multichart detector.
    #[arg(long)]
    threshold: f64,

    /// Nominal standardized drift rates for cusum/multichart; one value is
    /// broadcast to every sensor.
    #[arg(long, value_delimiter = ',')]
    rates: Option<Vec<f64>>,

    #[arg(long, default_value_t = 1.0)]
    adaptive_alpha: f64,

    #[arg(long, default_value_t = 1.0)]
    adaptive_beta: f64,

    /// Indicator cutoff for the adaptive weights.
    #[arg(long, default_value_t = 2.0)]
    adaptive_cutoff: f64,
}

#[derive(Args, Debug)]
struct DetectArgs {
    /// Stream CSV with header t,s1,...,sN.
    #[arg(long)]
    input: PathBuf,

    /// Sensor model file (keys: mu, sigma); defaults to zero mean, unit
    /// scale at the stream's width.
    #[arg(long)]
    model: Option<PathBuf>,

    /// Known covariance CSV (N rows x N columns, no header); when given,
    /// frames are whitened before detection.
    #[arg(long)]
    cov: Option<PathBuf>,

    #[command(flatten)]
    detector: DetectorArgs,

    /// Write a JSON-lines statistic trace (one record per frame) here.
    #[arg(long)]
    trace: Option<PathBuf>,

    /// Alarm record destination; stdout when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CalibrateArgs {
    #[arg(long)]
    n_sensors: usize,

    #[arg(long, default_value_t = 0.3)]
    p0: f64,

    #[arg(long, default_value_t = 200)]
    window: usize,

    /// Target average run length; solves for the threshold.
    #[arg(long, conflicts_with = "threshold")]
    arl: Option<f64>,

    /// Threshold; reports the run length it attains.
    #[arg(long)]
    threshold: Option<f64>,

    /// Record destination; stdout when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Metric {
    /// Mean run length under in-control streams (scenario without kappa).
    Arl,
    /// Mean detection delay for a change at time zero.
    Edd,
    /// Mean squared change-point estimation error (kappa >= 1).
    Cpe,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Scenario file (keys: n_sensors, horizon, kappa, affected, rates,
    /// cov_path, seed).
    #[arg(long)]
    config: PathBuf,

    #[arg(long, value_enum)]
    metric: Metric,

    /// Sensor model file; defaults to zero mean, unit scale.
    #[arg(long)]
    model: Option<PathBuf>,

    #[command(flatten)]
    detector: DetectorArgs,

    #[arg(long, default_value_t = 200)]
    trials: usize,

    /// Master seed; falls back to the scenario file, then $SLOPEWATCH_SEED,
    /// then 0.
    #[arg(long)]
    seed: Option<u64>,

    /// Write per-trial JSON-lines records here.
    #[arg(long)]
    per_trial: Option<PathBuf>,

    /// Summary CSV destination; stdout when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct WhitenArgs {
    /// Covariance CSV, N rows x N columns, no header.
    #[arg(long)]
    cov: PathBuf,

    /// Mean vector; zeros when omitted.
    #[arg(long, value_delimiter = ',')]
    mu: Option<Vec<f64>>,

    #[arg(long)]
    input: PathBuf,

    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DetrendArgs {
    #[arg(long)]
    input: PathBuf,

    /// Number of leading in-control frames the per-sensor lines are fitted
    /// on.
    #[arg(long)]
    fit_horizon: usize,

    /// Residual stream destination; stdout when omitted.
    #[arg(long)]
    output: Option<PathBuf>,

    /// Write the fitted sensor model (mu, sigma, intercept, slope) here.
    #[arg(long)]
    model_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PrognoseArgs {
    /// Directory of run-to-failure training streams (*.csv).
    #[arg(long)]
    train: PathBuf,

    /// Directory of test streams to predict on.
    #[arg(long)]
    test: PathBuf,

    /// Scale of the log location-normal life distribution.
    #[arg(long, default_value_t = 0.5)]
    eta: f64,

    #[arg(long)]
    threshold: f64,

    #[arg(long, default_value_t = 0.3)]
    p0: f64,

    #[arg(long, default_value_t = 200)]
    window: usize,

    /// Sensor model file shared by all systems; defaults to zero mean,
    /// unit scale.
    #[arg(long)]
    model: Option<PathBuf>,

    /// Prediction CSV destination; stdout when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
}

/// Outcome of a subcommand, mapped to the process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    /// Work completed; for `detect`, an alarm was raised.
    Done,
    /// The stream ended without an alarm.
    NoAlarm,
}

/// Runs a parsed command line and maps the outcome to an exit code:
/// 0 done/alarm, 1 no alarm, 2 error (reported as one line on stderr).
pub fn run(cli: Cli) -> i32 {
    match dispatch(cli) {
        Ok(Outcome::Done) => 0,
        Ok(Outcome::NoAlarm) => 1,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn dispatch(cli: Cli) -> Result<Outcome> {
    match cli.command {
        Command::Detect(args) => run_detect(&args),
        Command::Calibrate(args) => run_calibrate(&args).map(|_| Outcome::Done),
        Command::Simulate(args) => run_simulate(&args).map(|_| Outcome::Done),
        Command::Whiten(args) => run_whiten(&args).map(|_| Outcome::Done),
        Command::Detrend(args) => run_detrend(&args).map(|_| Outcome::Done),
        Command::Prognose(args) => run_prognose(&args).map(|_| Outcome::Done),
    }
}

// ---------------------------------------------------------------------------
// Configuration files

#[derive(Deserialize, Debug)]
struct ModelFile {
    mu: Vec<f64>,
    sigma: Vec<f64>,
}

fn load_model(path: &Path) -> Result<SensorModel> {
    let text = fs::read_to_string(path)?;
    let file: ModelFile =
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    SensorModel::new(file.mu, file.sigma)
}

#[derive(Deserialize, Debug)]
struct ScenarioFile {
    n_sensors: usize,
    horizon: u64,
    kappa: Option<u64>,
    /// 1-based sensor indices.
    affected: Option<Vec<usize>>,
    rates: Option<Vec<f64>>,
    /// Covariance CSV path, resolved relative to the scenario file.
    cov_path: Option<String>,
    seed: Option<u64>,
}

fn load_scenario(path: &Path) -> Result<(ScenarioSpec, Option<u64>)> {
    let text = fs::read_to_string(path)?;
    let file: ScenarioFile =
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let affected = file
        .affected
        .unwrap_or_default()
        .iter()
        .map(|&ix| {
            if ix == 0 {
                Err(Error::Config("affected sensors are numbered from 1".into()))
            } else {
                Ok(ix - 1)
            }
        })
        .collect::<Result<Vec<usize>>>()?;
    let cov = match &file.cov_path {
        Some(rel) => {
            let base = path.parent().unwrap_or_else(|| Path::new("."));
            Some(load_covariance(&base.join(rel), file.n_sensors)?)
        }
        None => None,
    };
    let spec = ScenarioSpec {
        n_sensors: file.n_sensors,
        kappa: file.kappa,
        affected,
        rates: file.rates.unwrap_or_default(),
        cov,
        horizon: file.horizon,
    };
    spec.validate()?;
    Ok((spec, file.seed))
}

fn load_covariance(path: &Path, n: usize) -> Result<DMatrix<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)?;
    let mut entries = Vec::with_capacity(n * n);
    let mut rows = 0usize;
    for (ix, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != n {
            return Err(Error::CovarianceShape {
                expected: n,
                rows: ix + 1,
                cols: record.len(),
            });
        }
        for field in record.iter() {
            entries.push(parse_float(field, ix + 1)?);
        }
        rows += 1;
    }
    if rows != n {
        return Err(Error::CovarianceShape {
            expected: n,
            rows,
            cols: n,
        });
    }
    Ok(DMatrix::from_row_slice(n, n, &entries))
}

fn parse_float(field: &str, row: usize) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|_| Error::MalformedRow {
            row,
            msg: format!("not a number: {field:?}"),
        })
}

fn resolve_seed(cli_seed: Option<u64>, config_seed: Option<u64>) -> Result<u64> {
    if let Some(s) = cli_seed {
        return Ok(s);
    }
    if let Some(s) = config_seed {
        return Ok(s);
    }
    match std::env::var(SEED_ENV_VAR) {
        Ok(text) => text.parse::<u64>().map_err(|_| {
            Error::Config(format!(
                "{SEED_ENV_VAR} must be an unsigned integer, got {text:?}"
            ))
        }),
        Err(_) => Ok(0),
    }
}

// ---------------------------------------------------------------------------
// Stream CSV

/// A parsed stream: timestamps and frames, one row each.
#[derive(Debug)]
pub struct Stream {
    pub times: Vec<u64>,
    pub frames: Vec<Vec<f64>>,
    pub n_sensors: usize,
}

/// Reads a stream CSV, enforcing the `t,s1,...,sN` header and strictly
/// increasing times. Row numbers in errors count data rows from 1.
pub fn read_stream(path: &Path) -> Result<Stream> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    if headers.len() < 2 || headers.get(0) != Some("t") {
        return Err(Error::Config(format!(
            "{}: stream header must be t,s1,...,sN",
            path.display()
        )));
    }
    for (ix, name) in headers.iter().skip(1).enumerate() {
        let expected = format!("s{}", ix + 1);
        if name != expected {
            return Err(Error::Config(format!(
                "{}: sensor column {} is named {name:?}, expected {expected:?}",
                path.display(),
                ix + 1
            )));
        }
    }
    let n_sensors = headers.len() - 1;
    let mut times = Vec::new();
    let mut frames = Vec::new();
    let mut last_t: Option<u64> = None;
    for (ix, record) in reader.records().enumerate() {
        let row = ix + 1;
        let record = record?;
        if record.len() != headers.len() {
            return Err(Error::MalformedRow {
                row,
                msg: format!("expected {} fields, got {}", headers.len(), record.len()),
            });
        }
        let t: u64 = record[0].trim().parse().map_err(|_| Error::MalformedRow {
            row,
            msg: format!("time is not an unsigned integer: {:?}", &record[0]),
        })?;
        if let Some(prev) = last_t {
            if t <= prev {
                return Err(Error::MalformedRow {
                    row,
                    msg: format!("time must be strictly increasing ({prev} then {t})"),
                });
            }
        }
        last_t = Some(t);
        let mut values = Vec::with_capacity(n_sensors);
        for field in record.iter().skip(1) {
            values.push(parse_float(field, row)?);
        }
        times.push(t);
        frames.push(values);
    }
    if times.is_empty() {
        return Err(Error::Config(format!(
            "{}: stream has no data rows",
            path.display()
        )));
    }
    Ok(Stream {
        times,
        frames,
        n_sensors,
    })
}

fn write_stream(out: &mut dyn Write, times: &[u64], frames: &[Vec<f64>]) -> Result<()> {
    let n = frames.first().map_or(0, Vec::len);
    write!(out, "t")?;
    for ix in 1..=n {
        write!(out, ",s{ix}")?;
    }
    writeln!(out)?;
    for (t, frame) in times.iter().zip(frames) {
        write!(out, "{t}")?;
        for v in frame {
            write!(out, ",{v}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

fn open_output(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(fs::File::create(p)?),
        None => Box::new(io::stdout().lock()),
    })
}

// ---------------------------------------------------------------------------
// Detector construction

fn resolved_rates(args: &DetectorArgs, n: usize) -> Result<Vec<f64>> {
    match &args.rates {
        Some(r) if r.len() == 1 => Ok(vec![r[0]; n]),
        Some(r) if r.len() == n => Ok(r.clone()),
        Some(r) => Err(Error::DimensionMismatch {
            expected: n,
            got: r.len(),
        }),
        None => Err(Error::MissingNominalRates),
    }
}

fn build_procedure(args: &DetectorArgs, n: usize, default_p0: f64) -> Result<Procedure> {
    let p0 = args.p0.unwrap_or(default_p0);
    let config = DetectorConfig::new(p0, args.window, args.threshold)?;
    Ok(match args.detector {
        DetectorKind::Glr => Procedure::MixtureGlr(config),
        DetectorKind::MeanShift => Procedure::MeanShift(config),
        DetectorKind::Cusum => {
            Procedure::MixtureCusum(config.with_nominal_rates(resolved_rates(args, n)?))
        }
        DetectorKind::Adaptive => Procedure::Adaptive(config.with_adaptive(AdaptiveParams {
            alpha: args.adaptive_alpha,
            beta: args.adaptive_beta,
            cutoff: args.adaptive_cutoff,
        })?),
        DetectorKind::Multichart => Procedure::Multichart {
            thresholds: vec![args.threshold; n],
            rates: resolved_rates(args, n)?,
            window: args.window,
        },
    })
}

// ---------------------------------------------------------------------------
// detect

fn run_detect(args: &DetectArgs) -> Result<Outcome> {
    let stream = read_stream(&args.input)?;
    let n = stream.n_sensors;
    let model = match &args.model {
        Some(path) => load_model(path)?,
        None => SensorModel::standard(n),
    };
    if model.n_sensors() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: model.n_sensors(),
        });
    }
    let whitener: Option<WhitenTransform> = match &args.cov {
        Some(path) => {
            let cov = load_covariance(path, n)?;
            Some(build_whitener(&cov, model.mu())?)
        }
        None => None,
    };
    // Whitened residuals are unit-scale by construction, where the mixture
    // prior loses its meaning; default to the plain likelihood ratio there
    // but let an explicit choice stand.
    let default_p0 = if whitener.is_some() { 1.0 } else { 0.3 };
    if whitener.is_some() && args.detector.p0.is_some_and(|p0| p0 < 1.0) {
        eprintln!("note: whitened streams are usually monitored with --p0 1");
    }
    let scoring_model = if whitener.is_some() {
        SensorModel::standard(n)
    } else {
        model.clone()
    };
    let procedure = build_procedure(&args.detector, n, default_p0)?;
    let mut monitor = procedure.monitor(n)?;

    let mut trace_out: Option<Box<dyn Write>> = match &args.trace {
        Some(p) => Some(Box::new(fs::File::create(p)?)),
        None => None,
    };

    let mut alarm_row: Option<usize> = None;
    for (ix, (t, frame)) in stream.times.iter().zip(&stream.frames).enumerate() {
        let z = match &whitener {
            Some(w) => {
                w.whiten(&ObservationFrame {
                    t: *t,
                    values: frame.clone(),
                })?
                .values
            }
            None => model.standardize(&ObservationFrame {
                t: *t,
                values: frame.clone(),
            })?,
        };
        let alarmed = monitor.step(&z)?;
        if let Some(out) = trace_out.as_mut() {
            let status = monitor.status()?;
            writeln!(
                out,
                "{{\"t\":{t},\"statistic\":{}}}",
                json_f64(status.statistic)
            )?;
        }
        if alarmed {
            alarm_row = Some(ix);
            break;
        }
    }

    match alarm_row {
        Some(ix) => {
            let status = monitor.status()?;
            let result = monitor.result(&scoring_model)?;
            let mut out = open_output(&args.output)?;
            let c_hat = result
                .c_hat
                .iter()
                .map(|v| json_f64(*v))
                .collect::<Vec<_>>()
                .join(",");
            writeln!(
                out,
                "{{\"stop_time\":{},\"t\":{},\"k_hat\":{},\"statistic\":{},\"c_hat\":[{c_hat}]}}",
                result.stop_time,
                stream.times[ix],
                result.k_hat,
                json_f64(status.statistic),
            )?;
            out.flush()?;
            Ok(Outcome::Done)
        }
        None => {
            eprintln!(
                "no alarm in {} frames (threshold {})",
                stream.frames.len(),
                args.detector.threshold
            );
            Ok(Outcome::NoAlarm)
        }
    }
}

/// Formats a float for JSON output: finite values via the shortest
/// round-trip representation, non-finite ones as null.
fn json_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else {
        "null".to_string()
    }
}

// ---------------------------------------------------------------------------
// calibrate

fn run_calibrate(args: &CalibrateArgs) -> Result<()> {
    let (threshold, result) = match (args.arl, args.threshold) {
        (Some(target), None) => {
            let input = CalibrationInput {
                n_sensors: args.n_sensors,
                p0: args.p0,
                w: args.window,
                target: CalibrationTarget::RunLength(target),
            };
            let b = solve_threshold(&input)?;
            let at_b = arl_approx(&CalibrationInput {
                target: CalibrationTarget::Threshold(b),
                ..input
            })?;
            (b, at_b)
        }
        (None, Some(b)) => {
            let input = CalibrationInput {
                n_sensors: args.n_sensors,
                p0: args.p0,
                w: args.window,
                target: CalibrationTarget::Threshold(b),
            };
            (b, arl_approx(&input)?)
        }
        _ => {
            return Err(Error::Config(
                "calibrate needs exactly one of --arl or --threshold".into(),
            ))
        }
    };
    let mut out = open_output(&args.output)?;
    writeln!(
        out,
        "{{\"threshold\":{},\"theta\":{},\"psi\":{},\"psi_dot\":{},\"psi_ddot\":{},\"gamma_coef\":{},\"h_factor\":{},\"arl\":{}}}",
        json_f64(threshold),
        json_f64(result.theta),
        json_f64(result.psi),
        json_f64(result.psi_dot),
        json_f64(result.psi_ddot),
        json_f64(result.gamma_coef),
        json_f64(result.h_factor),
        json_f64(result.arl),
    )?;
    out.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// simulate

fn run_simulate(args: &SimulateArgs) -> Result<()> {
    let config_bytes = fs::read(&args.config)?;
    let (scenario, file_seed) = load_scenario(&args.config)?;
    let seed = resolve_seed(args.seed, file_seed)?;
    let model = match &args.model {
        Some(path) => load_model(path)?,
        None => SensorModel::standard(scenario.n_sensors),
    };
    if model.n_sensors() != scenario.n_sensors {
        return Err(Error::DimensionMismatch {
            expected: scenario.n_sensors,
            got: model.n_sensors(),
        });
    }
    let procedure = build_procedure(&args.detector, scenario.n_sensors, 0.3)?;

    let (reports, summary, metric_name) = match args.metric {
        Metric::Arl => {
            if scenario.kappa.is_some() {
                return Err(Error::InvalidScenario(
                    "run-length scenarios must not set kappa".into(),
                ));
            }
            let reports =
                arl_trial_reports(&procedure, &model, args.trials, scenario.horizon, seed)?;
            let summary = summarize_stop_times_public(&reports);
            (reports, summary, "arl")
        }
        Metric::Edd => {
            let reports = edd_trial_reports(&procedure, &scenario, &model, args.trials, seed)?;
            let summary = summarize_stop_times_public(&reports);
            (reports, summary, "edd")
        }
        Metric::Cpe => {
            let kappa = scenario.kappa.unwrap_or(0);
            let reports = cpe_trial_reports(&procedure, &scenario, &model, args.trials, seed)?;
            let errors: Vec<f64> = reports
                .iter()
                .filter(|r| r.alarmed_before_cap)
                .filter_map(|r| r.k_hat)
                .map(|k| {
                    let err = k as f64 - kappa as f64;
                    err * err
                })
                .collect();
            let censored = reports.len() - errors.len();
            let summary = if errors.is_empty() {
                SummaryStats {
                    mean: f64::NAN,
                    standard_error: 0.0,
                    trial_count: 0,
                    censored_count: censored,
                }
            } else {
                SummaryStats::from_values(&errors, censored)
            };
            (reports, summary, "cpe")
        }
    };

    if let Some(path) = &args.per_trial {
        let mut out = fs::File::create(path)?;
        write_trial_log(&mut out, &reports)?;
    }

    let mut out = open_output(&args.output)?;
    writeln!(out, "config_hash,metric,mean,stderr,trials,censored")?;
    writeln!(
        out,
        "{:016x},{},{},{},{},{}",
        fnv1a64(&config_bytes),
        metric_name,
        summary.mean,
        summary.standard_error,
        summary.trial_count,
        summary.censored_count,
    )?;
    out.flush()?;
    Ok(())
}

fn summarize_stop_times_public(reports: &[TrialReport]) -> SummaryStats {
    let values: Vec<f64> = reports.iter().map(|r| r.stop_time as f64).collect();
    let censored = reports.iter().filter(|r| !r.alarmed_before_cap).count();
    SummaryStats::from_values(&values, censored)
}

fn write_trial_log(out: &mut dyn Write, reports: &[TrialReport]) -> Result<()> {
    for (ix, r) in reports.iter().enumerate() {
        let k_hat = match r.k_hat {
            Some(k) => k.to_string(),
            None => "null".to_string(),
        };
        writeln!(
            out,
            "{{\"trial\":{ix},\"seed\":{},\"stop_time\":{},\"alarmed\":{},\"k_hat\":{k_hat}}}",
            r.seed, r.stop_time, r.alarmed_before_cap,
        )?;
    }
    Ok(())
}

/// 64-bit FNV-1a over the raw config bytes; stable across platforms and
/// releases, unlike the std hasher.
fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

// ---------------------------------------------------------------------------
// whiten / detrend

fn run_whiten(args: &WhitenArgs) -> Result<()> {
    let stream = read_stream(&args.input)?;
    let n = stream.n_sensors;
    let cov = load_covariance(&args.cov, n)?;
    let mu = match &args.mu {
        Some(m) => m.clone(),
        None => vec![0.0; n],
    };
    let transform = build_whitener(&cov, &mu)?;
    let whitened: Vec<Vec<f64>> = stream
        .times
        .iter()
        .zip(&stream.frames)
        .map(|(t, frame)| {
            Ok(transform
                .whiten(&ObservationFrame {
                    t: *t,
                    values: frame.clone(),
                })?
                .values)
        })
        .collect::<Result<_>>()?;
    let mut out = open_output(&args.output)?;
    write_stream(&mut out, &stream.times, &whitened)?;
    out.flush()?;
    Ok(())
}

fn run_detrend(args: &DetrendArgs) -> Result<()> {
    let stream = read_stream(&args.input)?;
    // Rows are treated as equally spaced; the fit and the residuals use the
    // row index as the time axis, while the original timestamps are carried
    // through to the output.
    let detrender = detrend_linear(&stream.frames, args.fit_horizon)?;
    let residuals: Vec<Vec<f64>> = stream
        .frames
        .iter()
        .enumerate()
        .map(|(ix, frame)| detrender.residuals(ix as u64 + 1, frame))
        .collect::<Result<_>>()?;
    if let Some(path) = &args.model_out {
        let mut out = fs::File::create(path)?;
        write_model_file(
            &mut out,
            detrender.sigma(),
            detrender.intercepts(),
            detrender.slopes(),
        )?;
    }
    let mut out = open_output(&args.output)?;
    write_stream(&mut out, &stream.times, &residuals)?;
    out.flush()?;
    Ok(())
}

fn write_model_file(
    out: &mut dyn Write,
    sigma: &[f64],
    intercept: &[f64],
    slope: &[f64],
) -> Result<()> {
    let join = |vals: &[f64]| {
        vals.iter()
            .map(|v| {
                // Keep whole numbers as float literals so the file parses
                // back with float-typed fields.
                if v.fract() == 0.0 && v.is_finite() {
                    format!("{v:.1}")
                } else {
                    format!("{v}")
                }
            })
            .collect::<Vec<_>>()
            .join(", ")
    };
    writeln!(out, "mu = [{}]", join(&vec![0.0; sigma.len()]))?;
    writeln!(out, "sigma = [{}]", join(sigma))?;
    writeln!(out, "intercept = [{}]", join(intercept))?;
    writeln!(out, "slope = [{}]", join(slope))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// prognose

fn run_prognose(args: &PrognoseArgs) -> Result<()> {
    let config = DetectorConfig::new(args.p0, args.window, args.threshold)?;
    let train_paths = csv_files_in(&args.train)?;
    let test_paths = csv_files_in(&args.test)?;
    if train_paths.is_empty() {
        return Err(Error::NoTrainingSystems);
    }

    let mut model: Option<SensorModel> = match &args.model {
        Some(path) => Some(load_model(path)?),
        None => None,
    };

    let mut features = Vec::new();
    let mut unresolved_train = 0usize;
    for path in &train_paths {
        let stream = read_stream(path)?;
        let m = model
            .get_or_insert_with(|| SensorModel::standard(stream.n_sensors))
            .clone();
        match extract_features(&stream.frames, &m, &config) {
            Ok(mut f) => {
                // Run-to-failure stream: the system fails at the last row,
                // so the observed post-onset life is the remaining frames.
                f.ttf = Some(stream.frames.len() as f64 - f.k_hat as f64);
                features.push(f);
            }
            Err(Error::NoAlarm { .. }) => unresolved_train += 1,
            Err(e) => return Err(e),
        }
    }
    let fitted = fit_ttf_model(&features, args.eta)?;
    eprintln!(
        "fitted on {} of {} training systems ({unresolved_train} unresolved)",
        features.len(),
        train_paths.len(),
    );

    let mut out = open_output(&args.output)?;
    writeln!(
        out,
        "system,status,k_hat,predicted_life,actual_life,relative_error"
    )?;
    for path in &test_paths {
        let stream = read_stream(path)?;
        let m = model
            .get_or_insert_with(|| SensorModel::standard(stream.n_sensors))
            .clone();
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let actual = stream.frames.len() as f64;
        match extract_features(&stream.frames, &m, &config) {
            Ok(f) => {
                let predicted = predict_life(&f, &fitted)?;
                let rel = relative_error(predicted, actual)?;
                writeln!(
                    out,
                    "{name},resolved,{},{predicted},{actual},{rel}",
                    f.k_hat
                )?;
            }
            Err(Error::NoAlarm { .. }) => {
                writeln!(out, "{name},unresolved,,,{actual},")?;
            }
            Err(e) => return Err(e),
        }
    }
    out.flush()?;
    Ok(())
}

fn csv_files_in(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "csv"))
        .collect();
    paths.sort();
    Ok(paths)
}

// ---------------------------------------------------------------------------
// Series emission

/// One point of plot data; `stderr` is genuinely optional, not zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesPoint {
    pub x: f64,
    pub y: f64,
    pub stderr: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeriesFormat {
    Csv,
    JsonLines,
}

/// Writes plot data either as CSV (`x,y,stderr`, missing stderr left
/// empty) or JSON-lines. Output is bit-stable for fixed inputs.
pub fn emit_series(
    points: &[SeriesPoint],
    format: SeriesFormat,
    out: &mut dyn Write,
) -> Result<()> {
    if points.is_empty() {
        return Err(Error::Config("series is empty".into()));
    }
    match format {
        SeriesFormat::Csv => {
            writeln!(out, "x,y,stderr")?;
            for p in points {
                match p.stderr {
                    Some(se) => writeln!(out, "{},{},{}", p.x, p.y, se)?,
                    None => writeln!(out, "{},{},", p.x, p.y)?,
                }
            }
        }
        SeriesFormat::JsonLines => {
            for p in points {
                let se = match p.stderr {
                    Some(se) => json_f64(se),
                    None => "null".to_string(),
                };
                writeln!(
                    out,
                    "{{\"x\":{},\"y\":{},\"stderr\":{se}}}",
                    json_f64(p.x),
                    json_f64(p.y),
                )?;
            }
        }
    }
    Ok(())
}
