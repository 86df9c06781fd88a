//! Streaming monitors: one detector bound to its own window state, with a
//! pruned alarm check for simulation-scale runs.
//!
//! The exact statistic costs one `exp` per sensor per retained candidate
//! per step. Under the null nearly every candidate sits far below the
//! threshold, so the mixture monitors first bound each candidate's score by
//! the piecewise-linear envelope and evaluate the exact score only when the
//! bound reaches the threshold. The envelope dominates the score, so a
//! candidate skipped by the bound cannot alarm, and a candidate that does
//! trigger is re-checked with the same exact kernel the reference `step_*`
//! functions use. Stopping times on the two routes are therefore identical,
//! which the tests assert stream for stream.
//!
//! A monitor freezes at its alarm: further `step` calls return `true`
//! without advancing, keeping the alarm-time state available for
//! [`Monitor::result`].

use super::{
    adaptive_scan, cusum_scan, estimate_changepoint, glr_scan, mixture_score,
    mixture_score_per_sensor, multichart_argmax, multichart_margins, update_adaptive,
    AdaptiveParams, AdaptiveState, DetectionResult, DetectorConfig, DetectorStatus, Majorant,
};
use crate::model::SensorModel;
use crate::window::{Weighting, WindowState};
use crate::{Error, Result};

/// A stopping rule consuming standardized residual frames.
pub trait Monitor {
    /// Absorbs one frame; `true` from the alarm step onward.
    fn step(&mut self, z: &[f64]) -> Result<bool>;

    /// Frames absorbed so far.
    fn t(&self) -> u64;

    /// Exact statistic at the current state (full candidate scan).
    fn status(&self) -> Result<DetectorStatus>;

    /// Change-point estimate and per-sensor summaries; errors until the
    /// alarm has fired.
    fn result(&self, model: &SensorModel) -> Result<DetectionResult>;
}

/// Bound-then-exact alarm check for a mixture statistic with a common
/// mixture weight. Sound because every envelope term is nonnegative and
/// dominates its score term.
fn pruned_alarm(state: &WindowState, threshold: f64, majorant: &Majorant, p0: f64) -> bool {
    let t = state.t();
    let norms = state.norms();
    let omp0 = 1.0 - p0;
    for (k, row) in state.slot_rows() {
        let inv2a = 0.5 / norms[(t - k - 1) as usize];
        let mut ub = 0.0;
        for &wv in row {
            ub += majorant.eval(wv * wv * inv2a);
            if ub >= threshold {
                break;
            }
        }
        if ub >= threshold && mixture_score(row, inv2a, p0, omp0) >= threshold {
            return true;
        }
    }
    false
}

/// Mixture GLR monitor (slope score, estimated rates).
pub struct MixtureGlrMonitor {
    config: DetectorConfig,
    state: WindowState,
    majorant: Majorant,
    alarmed: bool,
}

impl MixtureGlrMonitor {
    pub fn new(config: DetectorConfig, n_sensors: usize) -> Result<Self> {
        let state = WindowState::new(n_sensors, config.window, Weighting::Slope)?;
        let majorant = Majorant::new(config.p0);
        Ok(Self {
            config,
            state,
            majorant,
            alarmed: false,
        })
    }

    pub fn state(&self) -> &WindowState {
        &self.state
    }
}

impl Monitor for MixtureGlrMonitor {
    fn step(&mut self, z: &[f64]) -> Result<bool> {
        if self.alarmed {
            return Ok(true);
        }
        self.state.advance(z)?;
        self.alarmed = pruned_alarm(
            &self.state,
            self.config.threshold,
            &self.majorant,
            self.config.p0,
        );
        Ok(self.alarmed)
    }

    fn t(&self) -> u64 {
        self.state.t()
    }

    fn status(&self) -> Result<DetectorStatus> {
        let (stat, _) = glr_scan(&self.config, &self.state)?;
        Ok(DetectorStatus::evaluate(
            self.state.t(),
            stat,
            self.config.threshold,
        ))
    }

    fn result(&self, model: &SensorModel) -> Result<DetectionResult> {
        estimate_changepoint(&self.config, &self.state, model)
    }
}

/// Mean-shift mixture monitor (level score); the baseline statistic with
/// the same mixture envelope, so the same pruning applies.
pub struct MeanShiftMonitor {
    config: DetectorConfig,
    state: WindowState,
    majorant: Majorant,
    alarmed: bool,
}

impl MeanShiftMonitor {
    pub fn new(config: DetectorConfig, n_sensors: usize) -> Result<Self> {
        let state = WindowState::new(n_sensors, config.window, Weighting::Level)?;
        let majorant = Majorant::new(config.p0);
        Ok(Self {
            config,
            state,
            majorant,
            alarmed: false,
        })
    }
}

impl Monitor for MeanShiftMonitor {
    fn step(&mut self, z: &[f64]) -> Result<bool> {
        if self.alarmed {
            return Ok(true);
        }
        self.state.advance(z)?;
        self.alarmed = pruned_alarm(
            &self.state,
            self.config.threshold,
            &self.majorant,
            self.config.p0,
        );
        Ok(self.alarmed)
    }

    fn t(&self) -> u64 {
        self.state.t()
    }

    fn status(&self) -> Result<DetectorStatus> {
        let (stat, _) = glr_scan(&self.config, &self.state)?;
        Ok(DetectorStatus::evaluate(
            self.state.t(),
            stat,
            self.config.threshold,
        ))
    }

    fn result(&self, model: &SensorModel) -> Result<DetectionResult> {
        estimate_changepoint(&self.config, &self.state, model)
    }
}

/// Adaptive mixture monitor: per-sensor mixture weights driven by the
/// indicator state, with one envelope per weight value.
pub struct AdaptiveMonitor {
    config: DetectorConfig,
    params: AdaptiveParams,
    state: WindowState,
    adaptive: AdaptiveState,
    majorants: [Majorant; 2],
    alarmed: bool,
}

impl AdaptiveMonitor {
    pub fn new(config: DetectorConfig, n_sensors: usize) -> Result<Self> {
        let params = config
            .adaptive
            .ok_or_else(|| Error::Config("adaptive parameters not set".into()))?;
        if !(params.alpha > 0.0) || !(params.beta > 0.0) {
            return Err(Error::NonPositive {
                what: "Beta prior parameter",
                value: params.alpha.min(params.beta),
            });
        }
        let state = WindowState::new(n_sensors, config.window, Weighting::Slope)?;
        let adaptive = AdaptiveState::new(n_sensors, &params);
        let denom = params.alpha + params.beta + 1.0;
        let majorants = [
            Majorant::new(params.alpha / denom),
            Majorant::new((params.alpha + 1.0) / denom),
        ];
        Ok(Self {
            config,
            params,
            state,
            adaptive,
            majorants,
            alarmed: false,
        })
    }

    pub fn adaptive_state(&self) -> &AdaptiveState {
        &self.adaptive
    }
}

impl Monitor for AdaptiveMonitor {
    fn step(&mut self, z: &[f64]) -> Result<bool> {
        if self.alarmed {
            return Ok(true);
        }
        self.state.advance(z)?;
        update_adaptive(&self.state, &mut self.adaptive, &self.params);
        let b = self.config.threshold;
        let t = self.state.t();
        let norms = self.state.norms();
        let s = &self.adaptive.s;
        let rho = &self.adaptive.rho;
        for (k, row) in self.state.slot_rows() {
            let inv2a = 0.5 / norms[(t - k - 1) as usize];
            let mut ub = 0.0;
            for (i, &wv) in row.iter().enumerate() {
                ub += self.majorants[s[i] as usize].eval(wv * wv * inv2a);
                if ub >= b {
                    break;
                }
            }
            if ub >= b && mixture_score_per_sensor(row, inv2a, rho) >= b {
                self.alarmed = true;
                break;
            }
        }
        Ok(self.alarmed)
    }

    fn t(&self) -> u64 {
        self.state.t()
    }

    fn status(&self) -> Result<DetectorStatus> {
        let (stat, _) = adaptive_scan(&self.state, &self.adaptive.rho)?;
        Ok(DetectorStatus::evaluate(
            self.state.t(),
            stat,
            self.config.threshold,
        ))
    }

    fn result(&self, model: &SensorModel) -> Result<DetectionResult> {
        let (stat, k_hat) = adaptive_scan(&self.state, &self.adaptive.rho)?;
        if stat < self.config.threshold {
            return Err(Error::NotAlarmed);
        }
        Ok(DetectionResult {
            stop_time: self.state.t(),
            k_hat,
            c_hat: self.state.slope_mle(k_hat, model)?,
            per_sensor_u: self.state.u_stat(k_hat)?,
        })
    }
}

/// Mixture CUSUM monitor at fixed standardized nominal rates. Scores are
/// cheap relative to the GLR (no per-candidate argmax) and this detector
/// only runs in small comparisons, so every step is exact.
pub struct MixtureCusumMonitor {
    config: DetectorConfig,
    rates: Vec<f64>,
    state: WindowState,
    alarmed: bool,
}

impl MixtureCusumMonitor {
    pub fn new(config: DetectorConfig, n_sensors: usize) -> Result<Self> {
        let rates = config
            .nominal_rates
            .clone()
            .ok_or(Error::MissingNominalRates)?;
        if rates.len() != n_sensors {
            return Err(Error::DimensionMismatch {
                expected: n_sensors,
                got: rates.len(),
            });
        }
        let state = WindowState::new(n_sensors, config.window, Weighting::Slope)?;
        Ok(Self {
            config,
            rates,
            state,
            alarmed: false,
        })
    }
}

impl Monitor for MixtureCusumMonitor {
    fn step(&mut self, z: &[f64]) -> Result<bool> {
        if self.alarmed {
            return Ok(true);
        }
        self.state.advance(z)?;
        let (stat, _) = cusum_scan(&self.state, &self.rates, self.config.p0)?;
        self.alarmed = stat >= self.config.threshold;
        Ok(self.alarmed)
    }

    fn t(&self) -> u64 {
        self.state.t()
    }

    fn status(&self) -> Result<DetectorStatus> {
        let (stat, _) = cusum_scan(&self.state, &self.rates, self.config.p0)?;
        Ok(DetectorStatus::evaluate(
            self.state.t(),
            stat,
            self.config.threshold,
        ))
    }

    fn result(&self, model: &SensorModel) -> Result<DetectionResult> {
        let (stat, k_hat) = cusum_scan(&self.state, &self.rates, self.config.p0)?;
        if stat < self.config.threshold {
            return Err(Error::NotAlarmed);
        }
        Ok(DetectionResult {
            stop_time: self.state.t(),
            k_hat,
            c_hat: self.state.slope_mle(k_hat, model)?,
            per_sensor_u: self.state.u_stat(k_hat)?,
        })
    }
}

/// Multi-chart CUSUM monitor: per-sensor charts, each against its own
/// threshold. Exponential-free, so every step is exact.
pub struct MultichartMonitor {
    thresholds: Vec<f64>,
    rates: Vec<f64>,
    state: WindowState,
    scratch: Vec<f64>,
    alarmed: bool,
}

impl MultichartMonitor {
    pub fn new(thresholds: Vec<f64>, rates: Vec<f64>, window: usize) -> Result<Self> {
        if thresholds.is_empty() || thresholds.len() != rates.len() {
            return Err(Error::DimensionMismatch {
                expected: thresholds.len().max(1),
                got: rates.len(),
            });
        }
        let state = WindowState::new(thresholds.len(), window, Weighting::Slope)?;
        let scratch = vec![0.0; thresholds.len()];
        Ok(Self {
            thresholds,
            rates,
            state,
            scratch,
            alarmed: false,
        })
    }
}

impl Monitor for MultichartMonitor {
    fn step(&mut self, z: &[f64]) -> Result<bool> {
        if self.alarmed {
            return Ok(true);
        }
        self.state.advance(z)?;
        let (margin, _) = multichart_margins(
            &self.state,
            &self.rates,
            &self.thresholds,
            &mut self.scratch,
        )?;
        self.alarmed = margin >= 0.0;
        Ok(self.alarmed)
    }

    fn t(&self) -> u64 {
        self.state.t()
    }

    fn status(&self) -> Result<DetectorStatus> {
        let mut scratch = self.scratch.clone();
        let (margin, _) =
            multichart_margins(&self.state, &self.rates, &self.thresholds, &mut scratch)?;
        Ok(DetectorStatus::evaluate(self.state.t(), margin, 0.0))
    }

    fn result(&self, model: &SensorModel) -> Result<DetectionResult> {
        let mut scratch = self.scratch.clone();
        let (margin, sensor) =
            multichart_margins(&self.state, &self.rates, &self.thresholds, &mut scratch)?;
        if margin < 0.0 {
            return Err(Error::NotAlarmed);
        }
        let (_, k_hat) = multichart_argmax(&self.state, self.rates[sensor], sensor)?;
        Ok(DetectionResult {
            stop_time: self.state.t(),
            k_hat,
            c_hat: self.state.slope_mle(k_hat, model)?,
            per_sensor_u: self.state.u_stat(k_hat)?,
        })
    }
}
