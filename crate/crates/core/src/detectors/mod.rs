//! Stopping rules built on the windowed statistics.
//!
//! All detectors share the same shape: advance the [`WindowState`], score
//! every retained candidate change point `k`, take the max, and alarm when
//! it crosses a threshold. They differ only in the per-candidate score:
//!
//! * mixture GLR: `sum_n log(1 - p0 + p0 exp(U_{n,k,t}^2 / 2))`, drift rate
//!   estimated per sensor;
//! * mixture CUSUM: same shape with the exact log-likelihood ratio
//!   `l_n(k, t, delta_n)` at nominal rates in place of `U^2 / 2`;
//! * adaptive mixture: `p0` replaced per sensor by the posterior mean of a
//!   Beta prior driven by the indicator `max_k U_{n,k,t} > a`;
//! * multi-chart CUSUM: per-sensor max of `l_n`, alarm when any single
//!   sensor crosses its own threshold;
//! * mean-shift mixture: mixture GLR with the level-shift score
//!   `(t - k)^{-1/2} sum z` in place of the slope score.
//!
//! The `step_*` functions are the reference implementations: they evaluate
//! the exact statistic at every step. The [`monitor`] module wraps them in
//! alarm-equivalent fast paths for Monte Carlo use.

pub mod monitor;

use crate::model::SensorModel;
use crate::window::{check_p0, mix_g_from_q, Weighting, WindowState};
use crate::{Error, Result};

/// Parameters shared by the mixture-family detectors.
#[derive(Debug, Clone)]
pub struct DetectorConfig {
    /// Assumed fraction of affected sensors, in (0, 1].
    pub p0: f64,
    /// Number of retained candidate change points.
    pub window: usize,
    /// Alarm threshold in log-likelihood units.
    pub threshold: f64,
    /// Standardized nominal post-change rates `delta_n / sigma_n`, required
    /// by the CUSUM variants only.
    pub nominal_rates: Option<Vec<f64>>,
    /// Present only for the adaptive procedure.
    pub adaptive: Option<AdaptiveParams>,
}

#[derive(Debug, Clone, Copy)]
pub struct AdaptiveParams {
    /// Beta prior parameters; both positive.
    pub alpha: f64,
    pub beta: f64,
    /// Indicator cutoff on the signed per-sensor statistic `U`.
    pub cutoff: f64,
}

impl DetectorConfig {
    pub fn new(p0: f64, window: usize, threshold: f64) -> Result<Self> {
        check_p0(p0)?;
        if window == 0 {
            return Err(Error::EmptyWindow);
        }
        if threshold.is_nan() {
            return Err(Error::NonPositive {
                what: "non-NaN threshold",
                value: threshold,
            });
        }
        Ok(Self {
            p0,
            window,
            threshold,
            nominal_rates: None,
            adaptive: None,
        })
    }

    pub fn with_nominal_rates(mut self, rates: Vec<f64>) -> Self {
        self.nominal_rates = Some(rates);
        self
    }

    pub fn with_adaptive(mut self, params: AdaptiveParams) -> Result<Self> {
        if !(params.alpha > 0.0) || !(params.beta > 0.0) {
            return Err(Error::NonPositive {
                what: "Beta prior parameter",
                value: params.alpha.min(params.beta),
            });
        }
        self.adaptive = Some(params);
        Ok(self)
    }

    fn rates(&self) -> Result<&[f64]> {
        self.nominal_rates
            .as_deref()
            .ok_or(Error::MissingNominalRates)
    }
}

/// Snapshot of a detector after one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorStatus {
    pub t: u64,
    pub statistic: f64,
    pub alarmed: bool,
}

impl DetectorStatus {
    fn evaluate(t: u64, statistic: f64, threshold: f64) -> Self {
        Self {
            t,
            statistic,
            alarmed: statistic >= threshold,
        }
    }
}

/// What the detector believes at the alarm: when the change happened, how
/// fast each sensor is drifting, and how loud each sensor's evidence is.
#[derive(Debug, Clone)]
pub struct DetectionResult {
    pub stop_time: u64,
    /// Maximizing candidate; earliest one on ties.
    pub k_hat: u64,
    /// Per-sensor post-change parameter estimates at `(k_hat, T)`, in raw
    /// units: drift rates for the slope detectors, mean shifts for the
    /// mean-shift baseline.
    pub c_hat: Vec<f64>,
    pub per_sensor_u: Vec<f64>,
}

/// Per-sensor state of the adaptive procedure.
///
/// `rho[n] = (s[n] + alpha) / (alpha + beta + 1)` is the posterior mean of
/// the mixture weight given the one-sample indicator `s[n]`; it stays inside
/// (0, 1) for any positive prior parameters.
#[derive(Debug, Clone)]
pub struct AdaptiveState {
    pub s: Vec<bool>,
    pub rho: Vec<f64>,
}

impl AdaptiveState {
    pub fn new(n_sensors: usize, params: &AdaptiveParams) -> Self {
        let rho0 = params.alpha / (params.alpha + params.beta + 1.0);
        Self {
            s: vec![false; n_sensors],
            rho: vec![rho0; n_sensors],
        }
    }
}

/// Piecewise-linear upper envelope of `q -> log(1 - p + p e^q)` on `q >= 0`.
///
/// Four chords plus a unit-slope tail. Chords of a convex function dominate
/// it on their own segment, and `g(q) - q` is decreasing, so the tail line
/// `q + g(Q) - Q` dominates beyond the last breakpoint; taking the max of
/// all five lines therefore dominates `g` everywhere. Evaluating the
/// envelope needs no `exp`, which is what makes the pruned monitors cheap.
#[derive(Debug, Clone)]
pub(crate) struct Majorant {
    alpha: [f64; 5],
    beta: [f64; 5],
}

const MAJORANT_BREAKS: [f64; 4] = [0.5, 1.5, 3.5, 8.0];

impl Majorant {
    pub(crate) fn new(p: f64) -> Self {
        let mut alpha = [0.0; 5];
        let mut beta = [0.0; 5];
        let mut q0 = 0.0;
        let mut g0 = 0.0;
        for (j, &q1) in MAJORANT_BREAKS.iter().enumerate() {
            let g1 = mix_g_from_q(q1, p);
            beta[j] = (g1 - g0) / (q1 - q0);
            alpha[j] = g0 - beta[j] * q0;
            q0 = q1;
            g0 = g1;
        }
        beta[4] = 1.0;
        alpha[4] = g0 - q0;
        Self { alpha, beta }
    }

    #[inline]
    pub(crate) fn eval(&self, q: f64) -> f64 {
        let mut m = self.alpha[0] + self.beta[0] * q;
        for j in 1..5 {
            m = m.max(self.alpha[j] + self.beta[j] * q);
        }
        m
    }
}

/// `sum_n log(1 - p0 + p0 exp(q_n))` with `q_n = W_n^2 * inv2a`.
///
/// Factors are all >= 1, so the running product only grows; it is folded
/// into the log accumulator before it can overflow. Oversized exponents
/// switch to the exact log-space form.
#[inline]
pub(crate) fn mixture_score(row: &[f64], inv2a: f64, p0: f64, one_minus_p0: f64) -> f64 {
    let mut acc = 0.0;
    let mut prod = 1.0_f64;
    for &wv in row {
        let q = wv * wv * inv2a;
        if q <= 500.0 {
            prod *= one_minus_p0 + p0 * q.exp();
            if prod > 1e280 {
                acc += prod.ln();
                prod = 1.0;
            }
        } else {
            acc += q + (p0 + one_minus_p0 * (-q).exp()).ln();
        }
    }
    acc + prod.ln()
}

/// Mixture score with a separate weight per sensor (adaptive procedure).
#[inline]
pub(crate) fn mixture_score_per_sensor(row: &[f64], inv2a: f64, rho: &[f64]) -> f64 {
    let mut acc = 0.0;
    let mut prod = 1.0_f64;
    for (&wv, &r) in row.iter().zip(rho) {
        let q = wv * wv * inv2a;
        if q <= 500.0 {
            prod *= (1.0 - r) + r * q.exp();
            if prod > 1e280 {
                acc += prod.ln();
                prod = 1.0;
            }
        } else {
            acc += q + (r + (1.0 - r) * (-q).exp()).ln();
        }
    }
    acc + prod.ln()
}

/// Mixture score over the exact nominal-rate log-likelihood ratios
/// `l_n = d_n W_n - d_n^2 A_tau / 2`; these can be negative, so the factors
/// can fall below 1 and the result below 0.
fn cusum_score(row: &[f64], a_tau: f64, rates: &[f64], p0: f64, one_minus_p0: f64) -> f64 {
    let mut acc = 0.0;
    for (&wv, &d) in row.iter().zip(rates) {
        let ell = d * wv - 0.5 * d * d * a_tau;
        acc += if ell.abs() <= 500.0 {
            (p0 * f64::exp_m1(ell)).ln_1p()
        } else if ell > 0.0 {
            ell + (p0 + one_minus_p0 * (-ell).exp()).ln()
        } else if p0 < 1.0 {
            // exp(ell) is negligible next to 1 - p0.
            (-p0).ln_1p()
        } else {
            ell
        };
    }
    acc
}

/// Max-over-candidates scan; returns (statistic, maximizer), ties to the
/// earliest candidate. `score(k, tau, row)` evaluates one candidate.
fn scan_candidates<F: FnMut(u64, u64, &[f64]) -> f64>(
    state: &WindowState,
    mut score: F,
) -> Result<(f64, u64)> {
    if state.t() == 0 {
        return Err(Error::NoCandidates);
    }
    let t = state.t();
    let mut best = f64::NEG_INFINITY;
    let mut best_k = u64::MAX;
    for (k, row) in state.slot_rows() {
        let s = score(k, t - k, row);
        if s > best || (s == best && k < best_k) {
            best = s;
            best_k = k;
        }
    }
    Ok((best, best_k))
}

/// One step of the windowed mixture GLR detector: absorbs a standardized
/// frame and reports the exact max-over-candidates statistic.
pub fn step_mixture_glr(
    config: &DetectorConfig,
    state: &mut WindowState,
    z: &[f64],
) -> Result<DetectorStatus> {
    state.advance(z)?;
    let (stat, _) = glr_scan(config, state)?;
    Ok(DetectorStatus::evaluate(state.t(), stat, config.threshold))
}

fn glr_scan(config: &DetectorConfig, state: &WindowState) -> Result<(f64, u64)> {
    let p0 = config.p0;
    let omp0 = 1.0 - p0;
    let norms = state.norms();
    scan_candidates(state, |_, tau, row| {
        let inv2a = 0.5 / norms[(tau - 1) as usize];
        mixture_score(row, inv2a, p0, omp0)
    })
}

/// One step of the windowed mixture CUSUM detector at the configured
/// standardized nominal rates.
pub fn step_mixture_cusum(
    config: &DetectorConfig,
    state: &mut WindowState,
    z: &[f64],
) -> Result<DetectorStatus> {
    let rates = config.rates()?;
    if rates.len() != state.n_sensors() {
        return Err(Error::DimensionMismatch {
            expected: state.n_sensors(),
            got: rates.len(),
        });
    }
    state.advance(z)?;
    let (stat, _) = cusum_scan(state, rates, config.p0)?;
    Ok(DetectorStatus::evaluate(state.t(), stat, config.threshold))
}

pub(crate) fn cusum_scan(state: &WindowState, rates: &[f64], p0: f64) -> Result<(f64, u64)> {
    let omp0 = 1.0 - p0;
    let norms = state.norms();
    scan_candidates(state, |_, tau, row| {
        cusum_score(row, norms[(tau - 1) as usize], rates, p0, omp0)
    })
}

/// One step of the adaptive mixture detector; updates the per-sensor
/// indicators and posterior means in `adaptive` before scoring.
pub fn step_adaptive(
    config: &DetectorConfig,
    state: &mut WindowState,
    adaptive: &mut AdaptiveState,
    z: &[f64],
) -> Result<DetectorStatus> {
    let params = config
        .adaptive
        .ok_or_else(|| Error::Config("adaptive parameters not set".into()))?;
    state.advance(z)?;
    update_adaptive(state, adaptive, &params);
    let (stat, _) = adaptive_scan(state, &adaptive.rho)?;
    Ok(DetectorStatus::evaluate(state.t(), stat, config.threshold))
}

pub(crate) fn adaptive_scan(state: &WindowState, rho: &[f64]) -> Result<(f64, u64)> {
    let norms = state.norms();
    scan_candidates(state, |_, tau, row| {
        let inv2a = 0.5 / norms[(tau - 1) as usize];
        mixture_score_per_sensor(row, inv2a, rho)
    })
}

/// Refreshes `s[n] = 1{max_k U_{n,k,t} > a}` (signed statistic, strict
/// inequality) and the posterior means.
pub(crate) fn update_adaptive(
    state: &WindowState,
    adaptive: &mut AdaptiveState,
    params: &AdaptiveParams,
) {
    let t = state.t();
    let norms = state.norms();
    for s in adaptive.s.iter_mut() {
        *s = false;
    }
    let mut max_u = vec![f64::NEG_INFINITY; state.n_sensors()];
    for (k, row) in state.slot_rows() {
        let inv_sqrt = 1.0 / norms[(t - k - 1) as usize].sqrt();
        for (m, &wv) in max_u.iter_mut().zip(row) {
            let u = wv * inv_sqrt;
            if u > *m {
                *m = u;
            }
        }
    }
    let denom = params.alpha + params.beta + 1.0;
    for i in 0..adaptive.s.len() {
        adaptive.s[i] = max_u[i] > params.cutoff;
        adaptive.rho[i] = (adaptive.s[i] as u8 as f64 + params.alpha) / denom;
    }
}

/// One step of the multi-chart CUSUM baseline: per-sensor windowed CUSUM
/// statistics, alarm as soon as any sensor crosses its own threshold.
///
/// The reported statistic is the margin `max_n (stat_n - threshold_n)`, so
/// the alarm condition reads `statistic >= 0`.
pub fn step_multichart_cusum(
    thresholds: &[f64],
    rates: &[f64],
    state: &mut WindowState,
    z: &[f64],
) -> Result<DetectorStatus> {
    if thresholds.len() != state.n_sensors() || rates.len() != state.n_sensors() {
        return Err(Error::DimensionMismatch {
            expected: state.n_sensors(),
            got: thresholds.len().min(rates.len()),
        });
    }
    state.advance(z)?;
    let mut scratch = vec![0.0; state.n_sensors()];
    let (margin, _) = multichart_margins(state, rates, thresholds, &mut scratch)?;
    Ok(DetectorStatus::evaluate(state.t(), margin, 0.0))
}

/// Per-sensor windowed CUSUM maxima minus per-sensor thresholds; returns
/// the best margin and the sensor attaining it (lowest index on ties).
/// `scratch` only needs the right length; contents are overwritten.
pub(crate) fn multichart_margins(
    state: &WindowState,
    rates: &[f64],
    thresholds: &[f64],
    scratch: &mut [f64],
) -> Result<(f64, usize)> {
    if state.t() == 0 {
        return Err(Error::NoCandidates);
    }
    let t = state.t();
    let norms = state.norms();
    scratch.fill(f64::NEG_INFINITY);
    for (k, row) in state.slot_rows() {
        let a_tau = norms[(t - k - 1) as usize];
        for i in 0..row.len() {
            let d = rates[i];
            let ell = d * row[i] - 0.5 * d * d * a_tau;
            if ell > scratch[i] {
                scratch[i] = ell;
            }
        }
    }
    let mut margin = f64::NEG_INFINITY;
    let mut sensor = 0;
    for (i, (s, h)) in scratch.iter().zip(thresholds).enumerate() {
        let m = s - h;
        if m > margin {
            margin = m;
            sensor = i;
        }
    }
    Ok((margin, sensor))
}

/// Maximizer of one sensor's windowed CUSUM statistic, earliest on ties.
pub(crate) fn multichart_argmax(
    state: &WindowState,
    rate: f64,
    sensor: usize,
) -> Result<(f64, u64)> {
    let norms = state.norms();
    scan_candidates(state, |_, tau, row| {
        rate * row[sensor] - 0.5 * rate * rate * norms[(tau - 1) as usize]
    })
}

/// One step of the mean-shift mixture baseline. The state must use level
/// weighting; the score is the mixture of `(S_{n,k,t})^2 / (2 tau)` with
/// `S` the plain residual sum.
pub fn step_meanshift_mixture(
    config: &DetectorConfig,
    state: &mut WindowState,
    z: &[f64],
) -> Result<DetectorStatus> {
    if state.weighting() != Weighting::Level {
        return Err(Error::Config(
            "mean-shift detector needs level weighting".into(),
        ));
    }
    state.advance(z)?;
    let (stat, _) = glr_scan(config, state)?;
    Ok(DetectorStatus::evaluate(state.t(), stat, config.threshold))
}

/// Change-point estimate at the alarm: the candidate maximizing the mixture
/// statistic (earliest on ties), with per-sensor parameter estimates.
///
/// Works for the slope detectors (slope-weighted state, drift-rate
/// estimates) and the mean-shift baseline (level-weighted state, mean-shift
/// estimates `sigma * S / tau`). Fails unless the current statistic is at or
/// above the configured threshold.
pub fn estimate_changepoint(
    config: &DetectorConfig,
    state: &WindowState,
    model: &SensorModel,
) -> Result<DetectionResult> {
    let (stat, k_hat) = glr_scan(config, state)?;
    if stat < config.threshold {
        return Err(Error::NotAlarmed);
    }
    let per_sensor_u = state.u_stat(k_hat)?;
    let c_hat = match state.weighting() {
        Weighting::Slope => state.slope_mle(k_hat, model)?,
        Weighting::Level => {
            let tau = (state.t() - k_hat) as f64;
            state
                .row(k_hat)?
                .iter()
                .zip(model.sigma())
                .map(|(s, sigma)| sigma * s / tau)
                .collect()
        }
    };
    Ok(DetectionResult {
        stop_time: state.t(),
        k_hat,
        c_hat,
        per_sensor_u,
    })
}
