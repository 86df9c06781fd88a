//! Monte Carlo harness for run-length and detection-delay studies.
//!
//! Trials are embarrassingly parallel. Each trial derives its own seed from
//! the master seed and the trial index, builds a fresh monitor, and streams
//! frames until the alarm or the cap. Results are reduced in trial-index
//! order, so a given master seed produces identical summaries regardless of
//! the worker count.
//!
//! The same master seed reused across threshold values makes every trial's
//! stopping time a nondecreasing function of the threshold; the threshold
//! search exploits that by bisecting on a deterministic, monotone sample
//! mean instead of chasing independent noisy estimates.

use crate::detectors::monitor::{
    AdaptiveMonitor, MeanShiftMonitor, MixtureCusumMonitor, MixtureGlrMonitor, Monitor,
    MultichartMonitor,
};
use crate::detectors::DetectorConfig;
use crate::model::{generate_scenario, mix_seed, ScenarioSpec, SensorModel};
use crate::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;

/// A stopping rule plus everything needed to instantiate it fresh per trial.
#[derive(Debug, Clone)]
pub enum Procedure {
    MixtureGlr(DetectorConfig),
    MixtureCusum(DetectorConfig),
    Adaptive(DetectorConfig),
    MeanShift(DetectorConfig),
    Multichart {
        thresholds: Vec<f64>,
        /// Standardized nominal rates, one per sensor.
        rates: Vec<f64>,
        window: usize,
    },
}

impl Procedure {
    pub fn monitor(&self, n_sensors: usize) -> Result<Box<dyn Monitor>> {
        Ok(match self {
            Self::MixtureGlr(c) => Box::new(MixtureGlrMonitor::new(c.clone(), n_sensors)?),
            Self::MixtureCusum(c) => Box::new(MixtureCusumMonitor::new(c.clone(), n_sensors)?),
            Self::Adaptive(c) => Box::new(AdaptiveMonitor::new(c.clone(), n_sensors)?),
            Self::MeanShift(c) => Box::new(MeanShiftMonitor::new(c.clone(), n_sensors)?),
            Self::Multichart {
                thresholds,
                rates,
                window,
            } => Box::new(MultichartMonitor::new(
                thresholds.clone(),
                rates.clone(),
                *window,
            )?),
        })
    }

    /// Common alarm threshold; for the multi-chart this is the shared
    /// per-sensor threshold (all charts use the same one here).
    pub fn threshold(&self) -> f64 {
        match self {
            Self::MixtureGlr(c)
            | Self::MixtureCusum(c)
            | Self::Adaptive(c)
            | Self::MeanShift(c) => c.threshold,
            Self::Multichart { thresholds, .. } => thresholds[0],
        }
    }

    /// Same procedure with the alarm threshold replaced.
    pub fn with_threshold(&self, b: f64) -> Self {
        let mut next = self.clone();
        match &mut next {
            Self::MixtureGlr(c)
            | Self::MixtureCusum(c)
            | Self::Adaptive(c)
            | Self::MeanShift(c) => {
                c.threshold = b;
            }
            Self::Multichart { thresholds, .. } => thresholds.iter_mut().for_each(|h| *h = b),
        }
        next
    }
}

/// One simulated run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialReport {
    pub seed: u64,
    pub stop_time: u64,
    pub k_hat: Option<u64>,
    pub alarmed_before_cap: bool,
}

/// Mean and spread of a per-trial quantity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SummaryStats {
    pub mean: f64,
    pub standard_error: f64,
    pub trial_count: usize,
    pub censored_count: usize,
}

impl SummaryStats {
    /// Sample mean and standard error of `values`; `censored_count` rides
    /// along for reporting.
    pub fn from_values(values: &[f64], censored_count: usize) -> Self {
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let standard_error = if n > 1 {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        Self {
            mean,
            standard_error,
            trial_count: n,
            censored_count,
        }
    }
}

fn run_trial(
    procedure: &Procedure,
    spec: &ScenarioSpec,
    model: &SensorModel,
    trial_seed: u64,
    want_k_hat: bool,
) -> Result<TrialReport> {
    let mut stream = generate_scenario(spec, model, trial_seed)?;
    let mut monitor = procedure.monitor(spec.n_sensors)?;
    let mut raw = vec![0.0; spec.n_sensors];
    let mut z = vec![0.0; spec.n_sensors];
    while let Some(t) = stream.fill_next(&mut raw) {
        model.standardize_into(&raw, &mut z)?;
        if monitor.step(&z)? {
            let k_hat = if want_k_hat {
                Some(monitor.result(model)?.k_hat)
            } else {
                None
            };
            return Ok(TrialReport {
                seed: trial_seed,
                stop_time: t,
                k_hat,
                alarmed_before_cap: true,
            });
        }
    }
    Ok(TrialReport {
        seed: trial_seed,
        stop_time: spec.horizon,
        k_hat: None,
        alarmed_before_cap: false,
    })
}

fn run_trials(
    procedure: &Procedure,
    spec_for_trial: impl Fn(u64) -> Result<ScenarioSpec> + Sync,
    model: &SensorModel,
    trials: usize,
    master_seed: u64,
    want_k_hat: bool,
) -> Result<Vec<TrialReport>> {
    (0..trials as u64)
        .into_par_iter()
        .map(|trial| {
            let trial_seed = mix_seed(master_seed, trial);
            let spec = spec_for_trial(trial_seed)?;
            run_trial(procedure, &spec, model, trial_seed, want_k_hat)
        })
        .collect()
}

fn summarize_stop_times(reports: &[TrialReport]) -> SummaryStats {
    let values: Vec<f64> = reports.iter().map(|r| r.stop_time as f64).collect();
    let censored = reports.iter().filter(|r| !r.alarmed_before_cap).count();
    SummaryStats::from_values(&values, censored)
}

/// Mean run length under in-control streams.
///
/// Censored trials (no alarm before `cap`) enter the mean at the cap and
/// are counted, which biases the mean downward; callers watch
/// `censored_count` and raise the cap when it matters.
pub fn simulate_arl(
    procedure: &Procedure,
    model: &SensorModel,
    trials: usize,
    cap: u64,
    master_seed: u64,
) -> Result<SummaryStats> {
    Ok(summarize_stop_times(&arl_trial_reports(
        procedure,
        model,
        trials,
        cap,
        master_seed,
    )?))
}

/// Per-trial run lengths behind `simulate_arl`, for callers that log or
/// post-process individual trials.
pub fn arl_trial_reports(
    procedure: &Procedure,
    model: &SensorModel,
    trials: usize,
    cap: u64,
    master_seed: u64,
) -> Result<Vec<TrialReport>> {
    if trials == 0 {
        return Err(Error::NonPositive {
            what: "trial count",
            value: 0.0,
        });
    }
    let spec = ScenarioSpec::null(model.n_sensors(), cap);
    run_trials(
        procedure,
        |_| Ok(spec.clone()),
        model,
        trials,
        master_seed,
        false,
    )
}

/// Redraws the affected subset uniformly without replacement, preserving
/// the template's affected count and rate list (rates are reassigned to the
/// drawn sensors in index order).
fn redraw_affected(template: &ScenarioSpec, trial_seed: u64) -> ScenarioSpec {
    let count = template.affected.len();
    let mut spec = template.clone();
    if count == 0 {
        return spec;
    }
    let mut rng = ChaCha12Rng::seed_from_u64(trial_seed);
    rng.set_stream(template.n_sensors as u64);
    let mut drawn = rand::seq::index::sample(&mut rng, template.n_sensors, count).into_vec();
    drawn.sort_unstable();
    spec.affected = drawn;
    spec
}

/// Mean detection delay for a change at the initial time; the affected
/// subset is re-drawn per trial.
pub fn simulate_edd(
    procedure: &Procedure,
    scenario: &ScenarioSpec,
    model: &SensorModel,
    trials: usize,
    master_seed: u64,
) -> Result<SummaryStats> {
    Ok(summarize_stop_times(&edd_trial_reports(
        procedure,
        scenario,
        model,
        trials,
        master_seed,
    )?))
}

/// Per-trial delays behind `simulate_edd`.
pub fn edd_trial_reports(
    procedure: &Procedure,
    scenario: &ScenarioSpec,
    model: &SensorModel,
    trials: usize,
    master_seed: u64,
) -> Result<Vec<TrialReport>> {
    scenario.validate()?;
    if scenario.kappa != Some(0) {
        return Err(Error::InvalidScenario(
            "detection-delay scenarios place the change at time zero".into(),
        ));
    }
    run_trials(
        procedure,
        |trial_seed| Ok(redraw_affected(scenario, trial_seed)),
        model,
        trials,
        master_seed,
        false,
    )
}

/// Per-trial alarms with change-point estimates for a mid-stream change;
/// the affected subset is re-drawn per trial exactly as in
/// `simulate_cpe_mse`, so a single-procedure caller sees the same streams.
pub fn cpe_trial_reports(
    procedure: &Procedure,
    scenario: &ScenarioSpec,
    model: &SensorModel,
    trials: usize,
    master_seed: u64,
) -> Result<Vec<TrialReport>> {
    scenario.validate()?;
    if !matches!(scenario.kappa, Some(k) if k >= 1) {
        return Err(Error::InvalidScenario(
            "change-point estimation needs kappa >= 1".into(),
        ));
    }
    run_trials(
        procedure,
        |trial_seed| Ok(redraw_affected(scenario, trial_seed)),
        model,
        trials,
        master_seed,
        true,
    )
}

/// Per-procedure change-point estimation error on a common set of streams.
///
/// Every procedure sees the same frames trial for trial; the summary is the
/// mean of `(k_hat - kappa)^2` over that procedure's alarmed trials, with
/// unalarmed trials counted as censored and excluded from the mean.
pub fn simulate_cpe_mse(
    procedures: &[Procedure],
    scenario: &ScenarioSpec,
    model: &SensorModel,
    trials: usize,
    master_seed: u64,
) -> Result<Vec<SummaryStats>> {
    scenario.validate()?;
    let kappa = match scenario.kappa {
        Some(k) if k >= 1 => k,
        _ => {
            return Err(Error::InvalidScenario(
                "change-point estimation needs kappa >= 1".into(),
            ))
        }
    };
    let per_trial: Vec<Vec<Option<f64>>> = (0..trials as u64)
        .into_par_iter()
        .map(|trial| -> Result<Vec<Option<f64>>> {
            let trial_seed = mix_seed(master_seed, trial);
            let spec = redraw_affected(scenario, trial_seed);
            // Materialize the stream once so every procedure reads the
            // same frames.
            let mut stream = generate_scenario(&spec, model, trial_seed)?;
            let n = spec.n_sensors;
            let mut raw = vec![0.0; n];
            let mut frames: Vec<f64> = Vec::with_capacity(spec.horizon as usize * n);
            while stream.fill_next(&mut raw).is_some() {
                frames.extend_from_slice(&raw);
            }
            let mut z = vec![0.0; n];
            procedures
                .iter()
                .map(|procedure| -> Result<Option<f64>> {
                    let mut monitor = procedure.monitor(n)?;
                    for frame in frames.chunks_exact(n) {
                        model.standardize_into(frame, &mut z)?;
                        if monitor.step(&z)? {
                            let k_hat = monitor.result(model)?.k_hat;
                            let err = k_hat as f64 - kappa as f64;
                            return Ok(Some(err * err));
                        }
                    }
                    Ok(None)
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    Ok((0..procedures.len())
        .map(|j| {
            let errors: Vec<f64> = per_trial.iter().filter_map(|row| row[j]).collect();
            let censored = trials - errors.len();
            if errors.is_empty() {
                SummaryStats {
                    mean: f64::NAN,
                    standard_error: 0.0,
                    trial_count: 0,
                    censored_count: censored,
                }
            } else {
                SummaryStats::from_values(&errors, censored)
            }
        })
        .collect())
}

/// One row of the fixed-versus-adaptive detection-delay table.
#[derive(Debug, Clone, Copy)]
pub struct AdaptiveComparison {
    pub rate: f64,
    pub fixed: SummaryStats,
    pub adaptive: SummaryStats,
}

/// Detection delays of the fixed-weight and adaptive procedures over a
/// grid of drift rates, paired through common random numbers.
#[allow(clippy::too_many_arguments)]
pub fn compare_adaptive(
    fixed: &DetectorConfig,
    adaptive: &DetectorConfig,
    n_sensors: usize,
    affected_count: usize,
    rate_grid: &[f64],
    trials: usize,
    cap: u64,
    master_seed: u64,
) -> Result<Vec<AdaptiveComparison>> {
    let model = SensorModel::standard(n_sensors);
    rate_grid
        .iter()
        .map(|&rate| {
            let scenario = ScenarioSpec {
                n_sensors,
                kappa: Some(0),
                affected: (0..affected_count).collect(),
                rates: vec![rate; affected_count],
                cov: None,
                horizon: cap,
            };
            let fixed_stats = simulate_edd(
                &Procedure::MixtureGlr(fixed.clone()),
                &scenario,
                &model,
                trials,
                master_seed,
            )?;
            let adaptive_stats = simulate_edd(
                &Procedure::Adaptive(adaptive.clone()),
                &scenario,
                &model,
                trials,
                master_seed,
            )?;
            Ok(AdaptiveComparison {
                rate,
                fixed: fixed_stats,
                adaptive: adaptive_stats,
            })
        })
        .collect()
}

/// Controls for the simulated threshold search.
#[derive(Debug, Clone, Copy)]
pub struct ThresholdSearch {
    pub target_arl: f64,
    pub trials: usize,
    /// Relative tolerance on the simulated mean run length.
    pub tolerance: f64,
    pub max_rounds: usize,
    pub cap: u64,
}

impl ThresholdSearch {
    pub fn new(target_arl: f64) -> Self {
        Self {
            target_arl,
            trials: 200,
            tolerance: 0.05,
            max_rounds: 12,
            cap: (20.0 * target_arl) as u64,
        }
    }
}

/// Finds the threshold whose simulated mean run length hits the target.
///
/// The procedure's own threshold seeds the search (the analytic solution is
/// a good seed for the mixture rules). All evaluations reuse the master
/// seed, so the objective is deterministic and nondecreasing in `b`;
/// log-linear interpolation inside a maintained bracket then converges in a
/// few rounds. Returns the matched threshold and its run-length summary.
pub fn match_threshold(
    procedure: &Procedure,
    model: &SensorModel,
    search: &ThresholdSearch,
    master_seed: u64,
) -> Result<(f64, SummaryStats)> {
    if search.target_arl < 100.0 {
        return Err(Error::RunLengthTargetTooSmall {
            target: search.target_arl,
            min: 100.0,
        });
    }
    let target = search.target_arl;
    let eval = |b: f64| -> Result<SummaryStats> {
        simulate_arl(
            &procedure.with_threshold(b),
            model,
            search.trials,
            search.cap,
            master_seed,
        )
    };

    let mut b = procedure.threshold();
    let mut stats = eval(b)?;
    let mut low: Option<(f64, f64)> = None; // (b, ln mean) with mean < target
    let mut high: Option<(f64, f64)> = None;
    for _ in 0..search.max_rounds {
        let ratio = stats.mean / target;
        if (ratio - 1.0).abs() <= search.tolerance {
            return Ok((b, stats));
        }
        if stats.mean < target {
            low = Some((b, stats.mean.ln()));
        } else {
            high = Some((b, stats.mean.ln()));
        }
        b = match (low, high) {
            // Log-linear interpolation between the bracket ends.
            (Some((bl, ll)), Some((bh, lh))) => {
                let f = (target.ln() - ll) / (lh - ll);
                let next = bl + f * (bh - bl);
                // Keep strictly inside the bracket to guarantee progress.
                next.clamp(bl + 1e-3 * (bh - bl), bh - 1e-3 * (bh - bl))
            }
            // No bracket yet: walk in the needed direction. Run lengths
            // grow roughly exponentially in b, so fixed strides find the
            // other side quickly.
            (Some((bl, _)), None) => bl + 3.0,
            (None, Some((bh, _))) => bh - 3.0,
            (None, None) => unreachable!("every evaluation lands on one side"),
        };
        stats = eval(b)?;
    }
    Err(Error::ThresholdSearchFailed {
        target,
        last: stats.mean,
    })
}

/// [`match_threshold`] over a set of procedures.
pub fn match_thresholds(
    procedures: &[Procedure],
    model: &SensorModel,
    search: &ThresholdSearch,
    master_seed: u64,
) -> Result<Vec<(f64, SummaryStats)>> {
    procedures
        .iter()
        .map(|p| match_threshold(p, model, search, master_seed))
        .collect()
}
