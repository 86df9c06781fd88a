//! Analytic run-length calibration for the mixture detector.
//!
//! Under the in-control law every per-sensor score `g(Z)` is an independent
//! copy of `log(1 - p0 + p0 * exp(Z^2 / 2))` with `Z` standard normal. A
//! change-of-measure argument turns the false-alarm rate of the windowed
//! detector into a boundary-crossing probability for the sum of `N` such
//! scores, giving a closed-form approximation to the average run length
//! (ARL):
//!
//! ```text
//! ARL(b) = H(N, theta) / integral_{y_lo}^{y_hi} y * nu(y * sqrt(gamma))^2 dy
//! H(N, theta) = theta * sqrt(2 pi psi''(theta)) / (gamma^2 * sqrt(N))
//!               * exp(N * (theta * psi'(theta) - psi(theta)))
//! ```
//!
//! where `psi(theta) = log E[exp(theta g(Z))]`, `theta` solves
//! `psi'(theta) = b / N`, `gamma(theta) = theta^2 / 2 *
//! E[g'(Z)^2 exp(theta g(Z) - psi)]`, `nu` is the discrete-overshoot
//! correction, and the integration limits `sqrt(2N / sqrt(4w/3))` to
//! `sqrt(2N / sqrt(4/3))` account for the window of candidate ages.
//! Everything reduces to one-dimensional Gaussian quadrature plus bisection,
//! so calibrating a threshold takes milliseconds.
//!
//! The delay side is covered by an upper bound on the expected detection
//! delay (EDD) that scales like the cube root of the threshold,
//! `((b - |A| log p0 - (N - |A|) E[g(Z)]) / (Delta^2 / 6))^(1/3)`, with
//! `Delta^2` the total signal-to-noise ratio of the affected set `A`.

use crate::quad::{
    integrate, normal_cdf, normal_cdf_centered, normal_expect, normal_pdf, FRAC_1_SQRT_2PI,
    NORMAL_CUTOFF,
};
use crate::window::{check_p0, mix_g_from_q};
use crate::{Error, Result};

/// Shared parameters of the analytic calibration.
#[derive(Debug, Clone)]
pub struct CalibrationInput {
    pub n_sensors: usize,
    pub p0: f64,
    pub w: usize,
    pub target: CalibrationTarget,
}

#[derive(Debug, Clone, Copy)]
pub enum CalibrationTarget {
    /// Detector threshold `b`; calibrate the resulting ARL.
    Threshold(f64),
    /// Target ARL; calibrate the threshold that attains it.
    RunLength(f64),
}

impl CalibrationInput {
    fn validate(&self) -> Result<()> {
        if self.n_sensors == 0 {
            return Err(Error::DimensionMismatch {
                expected: 1,
                got: 0,
            });
        }
        check_p0(self.p0)?;
        if self.w == 0 {
            return Err(Error::EmptyWindow);
        }
        let v = match self.target {
            CalibrationTarget::Threshold(b) => b,
            CalibrationTarget::RunLength(g) => g,
        };
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::NonPositive {
                what: "calibration target",
                value: v,
            });
        }
        Ok(())
    }

    fn threshold(&self) -> Result<f64> {
        match self.target {
            CalibrationTarget::Threshold(b) => Ok(b),
            CalibrationTarget::RunLength(_) => Err(Error::Config(
                "ARL evaluation needs a threshold target".into(),
            )),
        }
    }
}

/// Intermediate quantities of the ARL approximation, kept around because
/// they double as diagnostics and as seeds for Monte Carlo refinement.
#[derive(Debug, Clone, Copy)]
pub struct CalibrationResult {
    pub theta: f64,
    pub psi: f64,
    pub psi_dot: f64,
    pub psi_ddot: f64,
    pub gamma_coef: f64,
    pub h_factor: f64,
    pub arl: f64,
}

/// Inputs of the detection-delay bound.
#[derive(Debug, Clone, Copy)]
pub struct EddInput {
    pub b: f64,
    pub n_sensors: usize,
    pub p0: f64,
    /// Total signal-to-noise ratio of the affected set:
    /// `sum_{n in A} c_n^2 / sigma_n^2`.
    pub delta_sq: f64,
    pub affected_count: usize,
    pub w: usize,
}

impl EddInput {
    fn validate(&self) -> Result<()> {
        check_p0(self.p0)?;
        if !(self.delta_sq > 0.0) {
            return Err(Error::NonPositive {
                what: "signal-to-noise ratio delta^2",
                value: self.delta_sq,
            });
        }
        if self.affected_count == 0 {
            return Err(Error::NoAffectedSensors);
        }
        if self.affected_count > self.n_sensors {
            return Err(Error::DimensionMismatch {
                expected: self.n_sensors,
                got: self.affected_count,
            });
        }
        if !(self.b > 0.0) {
            return Err(Error::NonPositive {
                what: "threshold",
                value: self.b,
            });
        }
        Ok(())
    }
}

fn check_theta(theta: f64) -> Result<()> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(Error::ThetaOutOfRange(theta));
    }
    Ok(())
}

fn g(x: f64, p0: f64) -> f64 {
    mix_g_from_q(0.5 * x * x, p0)
}

/// d/dx of the score: `p0 x e^{x^2/2} / (1 - p0 + p0 e^{x^2/2})`, evaluated
/// as `x p0 / ((1 - p0) e^{-x^2/2} + p0)` so large `x` cannot overflow.
fn g_dot(x: f64, p0: f64) -> f64 {
    let q = 0.5 * x * x;
    x * p0 / ((1.0 - p0) * (-q).exp() + p0)
}

/// Expected score of an unaffected sensor, `E[g(Z)]`.
pub fn expected_g(p0: f64) -> Result<f64> {
    check_p0(p0)?;
    Ok(normal_expect(|x| g(x, p0)))
}

/// `E[h(Z) exp(theta g(Z) - shift)]`. The integrand decays only like
/// `exp(-(1 - theta) x^2 / 2)`, so substituting `y = sqrt(1 - theta) x`
/// restores a unit decay scale and the fixed [-12, 12] range keeps the
/// relative truncation error below 1e-30 for every tilt in (0, 1).
///
/// The exponent is assembled as `theta * excess - y^2/2 - shift` with
/// `excess = g(x) - x^2/2 = log(p0 + (1 - p0) e^{-x^2/2})`, which is bounded
/// in `[log p0, 0]`. The naive form `theta g(x) - x^2/2` subtracts two
/// numbers of size `x^2/2` (up to ~1e8 near theta = 1) whose rounding jitter
/// dwarfs the quadrature tolerance and stalls the adaptive refinement; here
/// every term stays O(y^2), so the integrand is smooth to machine precision
/// at any tilt.
fn tilted_expect(theta: f64, p0: f64, shift: f64, h: impl Fn(f64, f64) -> f64) -> f64 {
    let s = (1.0 - theta).sqrt();
    integrate(
        |y| {
            let x = y / s;
            let q = 0.5 * x * x;
            let excess = (p0 + (1.0 - p0) * (-q).exp()).ln();
            let exponent = theta * excess - 0.5 * y * y - shift;
            h(x, q + excess) * exponent.exp() * FRAC_1_SQRT_2PI / s
        },
        -NORMAL_CUTOFF,
        NORMAL_CUTOFF,
        1e-11,
        1e-14,
    )
}

/// Cumulant generating function of the score and its first two derivatives,
/// computed as exactly tilted moments (never finite differences):
/// `psi' = E[g e^{theta g - psi}]`, `psi'' = E[g^2 e^{theta g - psi}] - psi'^2`.
pub fn psi_and_derivatives(theta: f64, p0: f64) -> Result<(f64, f64, f64)> {
    check_theta(theta)?;
    check_p0(p0)?;
    let m0 = tilted_expect(theta, p0, 0.0, |_, _| 1.0);
    let psi = m0.ln();
    let m1 = tilted_expect(theta, p0, psi, |_, gv| gv);
    let m2 = tilted_expect(theta, p0, psi, |_, gv| gv * gv);
    Ok((psi, m1, m2 - m1 * m1))
}

fn psi_dot_only(theta: f64, p0: f64) -> f64 {
    let m0 = tilted_expect(theta, p0, 0.0, |_, _| 1.0);
    tilted_expect(theta, p0, 0.0, |_, gv| gv) / m0
}

const THETA_LO: f64 = 1e-6;
const THETA_HI: f64 = 1.0 - 1e-6;

/// Solves `psi'(theta) = b / N` for the tilt parameter by bisection on the
/// strictly increasing `psi'`.
pub fn solve_theta(b: f64, n_sensors: usize, p0: f64) -> Result<f64> {
    check_p0(p0)?;
    if n_sensors == 0 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            got: 0,
        });
    }
    let target = b / n_sensors as f64;
    let mut lo = THETA_LO;
    let mut hi = THETA_HI;
    let f_lo = psi_dot_only(lo, p0);
    let f_hi = psi_dot_only(hi, p0);
    if target < f_lo || target > f_hi {
        return Err(Error::DriftNotAttainable(target));
    }
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        let f_mid = psi_dot_only(mid, p0);
        if (f_mid - target).abs() < 1e-11 {
            return Ok(mid);
        }
        if f_mid < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Second-order constant `gamma(theta) = theta^2 / 2 *
/// E[g'(Z)^2 exp(theta g(Z) - psi(theta))]`.
pub fn gamma_coef(theta: f64, p0: f64) -> Result<f64> {
    check_theta(theta)?;
    check_p0(p0)?;
    let psi = tilted_expect(theta, p0, 0.0, |_, _| 1.0).ln();
    let m = tilted_expect(theta, p0, psi, |x, _| {
        let gd = g_dot(x, p0);
        gd * gd
    });
    Ok(0.5 * theta * theta * m)
}

/// Discrete-renewal overshoot correction, via the rational approximation
/// `nu(x) = (2/x) (Phi(x/2) - 1/2) / ((x/2) Phi(x/2) + phi(x/2))`.
///
/// Evaluated through `erf` so the numerator keeps full relative accuracy as
/// `x -> 0+`, where the limit is 1.
pub fn nu_approx(x: f64) -> Result<f64> {
    if !(x > 0.0) {
        return Err(Error::NonPositive {
            what: "overshoot argument",
            value: x,
        });
    }
    Ok(nu_unchecked(x))
}

fn nu_unchecked(x: f64) -> f64 {
    let h = 0.5 * x;
    let num = (2.0 / x) * normal_cdf_centered(h);
    let den = h * normal_cdf(h) + normal_pdf(h);
    num / den
}

fn arl_from_theta(theta: f64, input: &CalibrationInput) -> Result<CalibrationResult> {
    let n = input.n_sensors as f64;
    let (psi, psi_dot, psi_ddot) = psi_and_derivatives(theta, input.p0)?;
    if !(psi_ddot > 0.0) {
        return Err(Error::Config(format!(
            "cumulant second derivative not positive at theta={theta}"
        )));
    }
    let gamma = gamma_coef(theta, input.p0)?;
    let h_factor = theta * (2.0 * std::f64::consts::PI * psi_ddot).sqrt()
        / (gamma * gamma * n.sqrt())
        * (n * (theta * psi_dot - psi)).exp();
    let y_lo = (2.0 * n / (4.0 * input.w as f64 / 3.0).sqrt()).sqrt();
    let y_hi = (2.0 * n / (4.0 / 3.0_f64).sqrt()).sqrt();
    let sqrt_gamma = gamma.sqrt();
    let integral = integrate(
        |y| {
            let nv = nu_unchecked(y * sqrt_gamma);
            y * nv * nv
        },
        y_lo,
        y_hi,
        1e-8,
        1e-300,
    );
    let arl = h_factor / integral;
    Ok(CalibrationResult {
        theta,
        psi,
        psi_dot,
        psi_ddot,
        gamma_coef: gamma,
        h_factor,
        arl,
    })
}

/// Closed-form ARL approximation at a given threshold.
pub fn arl_approx(input: &CalibrationInput) -> Result<CalibrationResult> {
    input.validate()?;
    let b = input.threshold()?;
    let theta = solve_theta(b, input.n_sensors, input.p0)?;
    arl_from_theta(theta, input)
}

/// Threshold attaining a target ARL, by bisection in the tilt parameter
/// (equivalently, on the monotone `arl_approx`); the returned threshold is
/// `N * psi'(theta)` at the accepted tilt.
pub fn solve_threshold(input: &CalibrationInput) -> Result<f64> {
    input.validate()?;
    let target = match input.target {
        CalibrationTarget::RunLength(g) => g,
        CalibrationTarget::Threshold(_) => {
            return Err(Error::Config(
                "threshold search needs a run-length target".into(),
            ))
        }
    };
    if target < 100.0 {
        return Err(Error::RunLengthTargetTooSmall { target, min: 100.0 });
    }
    let mut lo = THETA_LO;
    let mut hi = THETA_HI;
    let arl_hi = arl_from_theta(hi, input)?.arl;
    if !(arl_hi >= target) {
        return Err(Error::ThresholdSearchFailed {
            target,
            last: arl_hi,
        });
    }
    let mut best = None;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let res = arl_from_theta(mid, input)?;
        if (res.arl - target).abs() / target < 1e-6 {
            best = Some(res);
            break;
        }
        if res.arl < target {
            lo = mid;
        } else {
            hi = mid;
        }
        best = Some(res);
        if hi - lo < 1e-14 {
            break;
        }
    }
    let res = best.expect("at least one bisection step");
    if (res.arl - target).abs() / target > 1e-4 {
        return Err(Error::ThresholdSearchFailed {
            target,
            last: res.arl,
        });
    }
    Ok(input.n_sensors as f64 * res.psi_dot)
}

/// Upper bound on the expected detection delay:
/// `((b - |A| log p0 - (N - |A|) E[g(Z)]) / (Delta^2 / 6))^(1/3)`.
///
/// Only valid when the window is long enough to contain the whole detection
/// transient, `w > (6 b / Delta^2)^(1/3)`; a violation is reported, never
/// ignored.
pub fn edd_bound(input: &EddInput) -> Result<f64> {
    input.validate()?;
    let min_w = (6.0 * input.b / input.delta_sq).cbrt();
    if (input.w as f64) <= min_w {
        return Err(Error::WindowTooShortForBound { w: input.w, min_w });
    }
    let eg = expected_g(input.p0)?;
    let unaffected = (input.n_sensors - input.affected_count) as f64;
    let numerator = input.b - input.affected_count as f64 * input.p0.ln() - unaffected * eg;
    if !(numerator > 0.0) {
        return Err(Error::NonPositive {
            what: "delay bound numerator",
            value: numerator,
        });
    }
    Ok((numerator / (input.delta_sq / 6.0)).cbrt())
}

/// Variant of the delay bound whose sparsity term is `N log p0` instead of
/// `|A| log p0`; both forms appear in print and are exposed separately so
/// each can be tested against the other.
pub fn first_order_edd(
    b: f64,
    n_sensors: usize,
    p0: f64,
    delta_sq: f64,
    affected_count: usize,
    w: usize,
) -> Result<f64> {
    let input = EddInput {
        b,
        n_sensors,
        p0,
        delta_sq,
        affected_count,
        w,
    };
    input.validate()?;
    let min_w = (6.0 * b / delta_sq).cbrt();
    if (w as f64) <= min_w {
        return Err(Error::WindowTooShortForBound { w, min_w });
    }
    let eg = expected_g(p0)?;
    let unaffected = (n_sensors - affected_count) as f64;
    let numerator = b - n_sensors as f64 * p0.ln() - unaffected * eg;
    if !(numerator > 0.0) {
        return Err(Error::NonPositive {
            what: "delay bound numerator",
            value: numerator,
        });
    }
    Ok((numerator / (delta_sq / 6.0)).cbrt())
}

/// Closed-form lower bound on the threshold that guarantees ARL at least
/// `gamma` for the windowed multi-sensor chart:
/// `N/2 - 4 log(1 - (1 - 1/gamma)^(1/w))`.
pub fn conservative_threshold(gamma: f64, n_sensors: usize, w: usize) -> Result<f64> {
    if !(gamma > 1.0) {
        return Err(Error::RunLengthTargetTooSmall {
            target: gamma,
            min: 1.0,
        });
    }
    if w == 0 {
        return Err(Error::EmptyWindow);
    }
    // 1 - (1 - 1/gamma)^(1/w) via expm1/ln_1p keeps ~16 digits even when
    // gamma is huge and the direct subtraction would cancel.
    let inner = -f64::exp_m1(f64::ln_1p(-1.0 / gamma) / w as f64);
    Ok(n_sensors as f64 / 2.0 - 4.0 * inner.ln())
}
