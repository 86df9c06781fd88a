//! Windowed per-sensor change-point statistics.
//!
//! For a candidate change point `k` and current time `t`, each sensor keeps
//! the weighted residual sum
//!
//! ```text
//! slope:  W[n,k,t] = sum_{i=k+1..t} (i - k) * z[n,i]
//! level:  W[n,k,t] = sum_{i=k+1..t}           z[n,i]
//! ```
//!
//! The slope weighting scores a linear drift starting right after `k`; the
//! level weighting scores a mean shift and backs the mean-shift baseline
//! detector. Both satisfy a one-term update per step, so a sliding window of
//! `w` candidates costs `O(w * n_sensors)` per frame and nothing is ever
//! recomputed from raw history.
//!
//! With `A_tau = tau (tau + 1)(2 tau + 1) / 6` (slope) or `tau` (level) as
//! the weight normalizer, `U = W / sqrt(A_tau)` is standard normal under the
//! in-control law, and the per-sensor generalized likelihood ratio for a
//! drift over `(k, t]` collapses to `U^2 / 2`.

use crate::model::SensorModel;
use crate::{Error, Result};

/// Per-step weight pattern of the candidate statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Weighting {
    /// Weight `i - k`: evidence for a linear drift after `k`.
    Slope,
    /// Weight `1`: evidence for a level shift after `k`.
    Level,
}

/// Normalizer of the slope weights: `sum_{j=1..tau} j^2`.
pub fn a_tau(tau: u64) -> Result<f64> {
    if tau == 0 {
        return Err(Error::ZeroTau);
    }
    let t = tau as u128;
    Ok((t * (t + 1) * (2 * t + 1) / 6) as f64)
}

/// `log(1 - p0 + p0 * exp(x^2 / 2))`: the soft-threshold score a sensor with
/// standardized statistic `x` contributes to the mixture detector.
///
/// Monotone even function of `x`, zero at zero, asymptotically
/// `x^2 / 2 + log(p0)`. Evaluated in log space once `x^2 / 2 > 500` so large
/// inputs cannot overflow.
pub fn soft_threshold_g(x: f64, p0: f64) -> Result<f64> {
    check_p0(p0)?;
    Ok(mix_g_from_q(0.5 * x * x, p0))
}

pub(crate) fn check_p0(p0: f64) -> Result<()> {
    if !(p0 > 0.0 && p0 <= 1.0) {
        return Err(Error::MixtureWeightOutOfRange(p0));
    }
    Ok(())
}

/// Same score as [`soft_threshold_g`] parameterized by `q = x^2 / 2`.
#[inline]
pub(crate) fn mix_g_from_q(q: f64, p0: f64) -> f64 {
    if q <= 500.0 {
        (p0 * f64::exp_m1(q)).ln_1p()
    } else {
        q + (p0 + (1.0 - p0) * f64::exp(-q)).ln()
    }
}

/// Sliding window of weighted residual sums over the retained candidate
/// change points.
///
/// After `t` frames the retained candidates are `k in [max(0, t - w), t - 1]`,
/// stored in a ring keyed by `k % w` so eviction is an overwrite. All rows
/// advance with one fused multiply-add per sensor.
#[derive(Debug, Clone)]
pub struct WindowState {
    n_sensors: usize,
    w: usize,
    weighting: Weighting,
    t: u64,
    /// Slot-major weighted sums, `w` rows by `n_sensors` columns.
    wsum: Vec<f64>,
    /// Candidate index living in each slot; valid for slots < active.
    ks: Vec<u64>,
    /// Normalizer per segment length: `norms[tau - 1]`.
    norms: Vec<f64>,
}

impl WindowState {
    pub fn new(n_sensors: usize, w: usize, weighting: Weighting) -> Result<Self> {
        if w == 0 {
            return Err(Error::EmptyWindow);
        }
        if n_sensors == 0 {
            return Err(Error::DimensionMismatch {
                expected: 1,
                got: 0,
            });
        }
        let norms = (1..=w as u64)
            .map(|tau| match weighting {
                Weighting::Slope => a_tau(tau).expect("tau >= 1"),
                Weighting::Level => tau as f64,
            })
            .collect();
        Ok(Self {
            n_sensors,
            w,
            weighting,
            t: 0,
            wsum: vec![0.0; w * n_sensors],
            ks: vec![0; w],
            norms,
        })
    }

    pub fn n_sensors(&self) -> usize {
        self.n_sensors
    }

    pub fn window(&self) -> usize {
        self.w
    }

    pub fn weighting(&self) -> Weighting {
        self.weighting
    }

    /// Number of frames absorbed so far.
    pub fn t(&self) -> u64 {
        self.t
    }

    /// Number of retained candidates: `min(t, w)`.
    pub fn active(&self) -> usize {
        self.t.min(self.w as u64) as usize
    }

    /// Earliest retained candidate.
    pub fn k_min(&self) -> u64 {
        self.t.saturating_sub(self.w as u64)
    }

    pub fn contains(&self, k: u64) -> bool {
        k >= self.k_min() && k < self.t
    }

    /// Retained candidates in increasing order.
    pub fn candidates(&self) -> impl Iterator<Item = u64> + '_ {
        self.k_min()..self.t
    }

    /// Absorbs the standardized residual frame for time `t + 1`.
    ///
    /// Opens the candidate `k = t` with `W = z` and updates every retained
    /// row by `coef(tau) * z`; the candidate older than `w` is evicted by
    /// reusing its slot.
    pub fn advance(&mut self, z: &[f64]) -> Result<()> {
        if z.len() != self.n_sensors {
            return Err(Error::DimensionMismatch {
                expected: self.n_sensors,
                got: z.len(),
            });
        }
        let new_k = self.t;
        self.t += 1;
        let slot = (new_k % self.w as u64) as usize;
        self.ks[slot] = new_k;
        self.wsum[slot * self.n_sensors..(slot + 1) * self.n_sensors].fill(0.0);
        let active = self.active();
        for s in 0..active {
            let coef = match self.weighting {
                Weighting::Slope => (self.t - self.ks[s]) as f64,
                Weighting::Level => 1.0,
            };
            let row = &mut self.wsum[s * self.n_sensors..(s + 1) * self.n_sensors];
            for (wv, &zv) in row.iter_mut().zip(z) {
                *wv += coef * zv;
            }
        }
        Ok(())
    }

    fn slot_of(&self, k: u64) -> Result<usize> {
        if !self.contains(k) {
            if self.t == 0 {
                return Err(Error::NoCandidates);
            }
            return Err(Error::CandidateEvicted {
                k,
                t: self.t,
                w: self.w,
            });
        }
        Ok((k % self.w as u64) as usize)
    }

    /// Weighted sums of all sensors for candidate `k`.
    pub fn row(&self, k: u64) -> Result<&[f64]> {
        let s = self.slot_of(k)?;
        Ok(&self.wsum[s * self.n_sensors..(s + 1) * self.n_sensors])
    }

    /// `W[n, k, t]` for a single sensor.
    pub fn weighted_sum(&self, k: u64, sensor: usize) -> Result<f64> {
        let row = self.row(k)?;
        row.get(sensor).copied().ok_or(Error::DimensionMismatch {
            expected: self.n_sensors,
            got: sensor,
        })
    }

    /// Weight normalizer for segment length `tau`, precomputed at build time.
    pub fn norm(&self, tau: u64) -> Result<f64> {
        if tau == 0 {
            return Err(Error::ZeroTau);
        }
        if tau > self.w as u64 {
            return Err(Error::CandidateEvicted {
                k: self.t.saturating_sub(tau),
                t: self.t,
                w: self.w,
            });
        }
        Ok(self.norms[(tau - 1) as usize])
    }

    pub(crate) fn norms(&self) -> &[f64] {
        &self.norms
    }

    /// Rows in ring order as `(k, per-sensor sums)`; order is unspecified.
    pub(crate) fn slot_rows(&self) -> impl Iterator<Item = (u64, &[f64])> {
        let active = self.active();
        self.ks[..active]
            .iter()
            .zip(self.wsum.chunks_exact(self.n_sensors))
            .map(|(&k, row)| (k, row))
    }

    /// Standardized statistics `U[n] = W[n] / sqrt(norm(tau))`; standard
    /// normal per sensor when the residuals are in control.
    pub fn u_stat(&self, k: u64) -> Result<Vec<f64>> {
        let row = self.row(k)?;
        let norm = self.norm(self.t - k)?;
        let inv = 1.0 / norm.sqrt();
        Ok(row.iter().map(|w| w * inv).collect())
    }

    /// Per-sensor drift-rate estimates for a change at `k`, in raw units:
    /// `c_hat[n] = sigma[n] * W[n] / A_tau`. Requires slope weighting.
    pub fn slope_mle(&self, k: u64, model: &SensorModel) -> Result<Vec<f64>> {
        if self.weighting != Weighting::Slope {
            return Err(Error::Config(
                "slope estimate requires slope weighting".into(),
            ));
        }
        if model.n_sensors() != self.n_sensors {
            return Err(Error::DimensionMismatch {
                expected: self.n_sensors,
                got: model.n_sensors(),
            });
        }
        let row = self.row(k)?;
        let inv_a = 1.0 / self.norm(self.t - k)?;
        Ok(row
            .iter()
            .zip(model.sigma())
            .map(|(w, s)| s * w * inv_a)
            .collect())
    }

    /// Per-sensor log-likelihood ratio of a drift with raw-unit rates
    /// `rates[n]` starting at `k`, against no change:
    /// `d * W - d^2 * A_tau / 2` with `d = rate / sigma`.
    ///
    /// Maximized over the rate this equals `U^2 / 2`, which is the identity
    /// the mixture detector uses.
    pub fn local_loglik(&self, k: u64, rates: &[f64], model: &SensorModel) -> Result<Vec<f64>> {
        if self.weighting != Weighting::Slope {
            return Err(Error::Config(
                "drift log-likelihood requires slope weighting".into(),
            ));
        }
        if rates.len() != self.n_sensors || model.n_sensors() != self.n_sensors {
            return Err(Error::DimensionMismatch {
                expected: self.n_sensors,
                got: rates.len().min(model.n_sensors()),
            });
        }
        let row = self.row(k)?;
        let a = self.norm(self.t - k)?;
        Ok(row
            .iter()
            .zip(rates.iter().zip(model.sigma()))
            .map(|(w, (c, s))| {
                let d = c / s;
                d * w - 0.5 * d * d * a
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn slope_state(zs: &[Vec<f64>], w: usize) -> WindowState {
        let n = zs[0].len();
        let mut st = WindowState::new(n, w, Weighting::Slope).unwrap();
        for z in zs {
            st.advance(z).unwrap();
        }
        st
    }

    #[test]
    fn a_tau_first_values() {
        assert_eq!(a_tau(1).unwrap(), 1.0);
        assert_eq!(a_tau(2).unwrap(), 5.0);
        assert_eq!(a_tau(3).unwrap(), 14.0);
        assert_eq!(a_tau(10).unwrap(), 385.0);
        assert!(a_tau(0).is_err());
    }

    #[test]
    fn u_stat_matches_hand_computation() {
        // z = [1, -1, 2]; k = 1, t = 3: W = 1*(-1) + 2*2 = 3, A_2 = 5.
        let st = slope_state(&[vec![1.0], vec![-1.0], vec![2.0]], 8);
        assert_eq!(st.weighted_sum(1, 0).unwrap(), 3.0);
        assert_relative_eq!(
            st.u_stat(1).unwrap()[0],
            1.3416407864998738,
            epsilon = 1e-15
        );
        // k = 0: W = 1*1 + 2*(-1) + 3*2 = 5, A_3 = 14.
        assert_eq!(st.weighted_sum(0, 0).unwrap(), 5.0);
        assert_relative_eq!(
            st.u_stat(0).unwrap()[0],
            5.0 / 14.0f64.sqrt(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn level_weighting_sums_residuals() {
        let mut st = WindowState::new(1, 8, Weighting::Level).unwrap();
        for z in [1.0, -1.0, 2.0] {
            st.advance(&[z]).unwrap();
        }
        // k = 1: S = -1 + 2 = 1, tau = 2.
        assert_eq!(st.weighted_sum(1, 0).unwrap(), 1.0);
        assert_relative_eq!(
            st.u_stat(1).unwrap()[0],
            0.70710678118654746,
            epsilon = 1e-15
        );
    }

    #[test]
    fn advance_matches_direct_sum_with_eviction() {
        // 2 sensors, w = 5, 23 steps of deterministic pseudo-noise; every
        // retained candidate must equal the from-scratch weighted sum.
        let n = 2;
        let w = 5;
        let mut zs: Vec<Vec<f64>> = Vec::new();
        let mut x = 0.37_f64;
        for _ in 0..23 {
            let mut row = Vec::new();
            for _ in 0..n {
                x = (x * 997.0 + 0.123).sin();
                row.push(x);
            }
            zs.push(row);
        }
        for weighting in [Weighting::Slope, Weighting::Level] {
            let mut st = WindowState::new(n, w, weighting).unwrap();
            for z in &zs {
                st.advance(z).unwrap();
            }
            let t = zs.len() as u64;
            assert_eq!(st.k_min(), t - w as u64);
            for k in st.candidates().collect::<Vec<_>>() {
                for sensor in 0..n {
                    let direct: f64 = (k + 1..=t)
                        .map(|i| {
                            let coef = match weighting {
                                Weighting::Slope => (i - k) as f64,
                                Weighting::Level => 1.0,
                            };
                            coef * zs[(i - 1) as usize][sensor]
                        })
                        .sum();
                    assert_relative_eq!(
                        st.weighted_sum(k, sensor).unwrap(),
                        direct,
                        epsilon = 1e-12,
                        max_relative = 1e-12
                    );
                }
            }
            // Evicted and future candidates are rejected.
            assert!(matches!(
                st.weighted_sum(t - w as u64 - 1, 0),
                Err(Error::CandidateEvicted { .. })
            ));
            assert!(st.weighted_sum(t, 0).is_err());
        }
    }

    #[test]
    fn first_step_has_single_candidate() {
        let mut st = WindowState::new(3, 10, Weighting::Slope).unwrap();
        assert_eq!(st.candidates().count(), 0);
        assert!(matches!(st.row(0), Err(Error::NoCandidates)));
        st.advance(&[0.5, -0.5, 1.0]).unwrap();
        assert_eq!(st.candidates().collect::<Vec<_>>(), vec![0]);
        assert_eq!(st.row(0).unwrap(), &[0.5, -0.5, 1.0]);
    }

    #[test]
    fn soft_threshold_frozen_values() {
        assert_relative_eq!(
            soft_threshold_g(0.5, 0.3).unwrap(),
            0.039167380885033368,
            epsilon = 1e-15
        );
        assert_relative_eq!(
            soft_threshold_g(2.0, 0.3).unwrap(),
            1.0704586103006692,
            epsilon = 1e-15
        );
        assert_relative_eq!(
            soft_threshold_g(3.0, 0.05).unwrap(),
            1.6957727642202687,
            epsilon = 1e-15
        );
        // p0 = 1 reduces to x^2 / 2 exactly.
        assert_relative_eq!(soft_threshold_g(1.0, 1.0).unwrap(), 0.5, epsilon = 1e-15);
        assert_eq!(soft_threshold_g(0.0, 0.3).unwrap(), 0.0);
    }

    #[test]
    fn soft_threshold_large_input_stays_finite() {
        // q = 800 would overflow exp; the log-space branch must give
        // q + ln(p0) to high relative accuracy.
        let g = soft_threshold_g(40.0, 0.3).unwrap();
        assert!(g.is_finite());
        assert_relative_eq!(g, 800.0 - 1.2039728043259361, epsilon = 1e-12);
        // Continuity across the branch at q = 500.
        let lo = soft_threshold_g((2.0 * 499.999_f64).sqrt(), 0.3).unwrap();
        let hi = soft_threshold_g((2.0 * 500.001_f64).sqrt(), 0.3).unwrap();
        assert!((hi - lo).abs() < 1e-2);
        assert!(hi > lo);
    }

    #[test]
    fn soft_threshold_rejects_bad_weight() {
        assert!(soft_threshold_g(1.0, 0.0).is_err());
        assert!(soft_threshold_g(1.0, 1.5).is_err());
        assert!(soft_threshold_g(1.0, -0.2).is_err());
    }

    #[test]
    fn slope_mle_rescales_by_sigma() {
        // z = [1, -1, 2], k = 0: c_hat = sigma * W / A_3 = 2 * 5 / 14.
        let model = SensorModel::new(vec![0.0], vec![2.0]).unwrap();
        let st = slope_state(&[vec![1.0], vec![-1.0], vec![2.0]], 8);
        assert_relative_eq!(
            st.slope_mle(0, &model).unwrap()[0],
            5.0 / 7.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn local_loglik_frozen_value_and_mle_identity() {
        let model = SensorModel::new(vec![0.0], vec![2.0]).unwrap();
        let st = slope_state(&[vec![1.0], vec![-1.0], vec![2.0]], 8);
        // c = 0.4, sigma = 2: (0.2) * 5 - 0.04 * 14 / 2 = 0.72.
        let ell = st.local_loglik(0, &[0.4], &model).unwrap()[0];
        assert_relative_eq!(ell, 0.72, epsilon = 1e-15);
        // At the estimated rate the ratio equals U^2 / 2.
        let c_hat = st.slope_mle(0, &model).unwrap();
        let at_mle = st.local_loglik(0, &c_hat, &model).unwrap()[0];
        let u = st.u_stat(0).unwrap()[0];
        assert_relative_eq!(at_mle, 0.5 * u * u, epsilon = 1e-14);
        // Zero rate gives zero log-likelihood ratio.
        assert_eq!(st.local_loglik(0, &[0.0], &model).unwrap()[0], 0.0);
    }

    #[test]
    fn loglik_needs_slope_weighting() {
        let mut st = WindowState::new(1, 4, Weighting::Level).unwrap();
        st.advance(&[1.0]).unwrap();
        let model = SensorModel::standard(1);
        assert!(st.slope_mle(0, &model).is_err());
        assert!(st.local_loglik(0, &[0.1], &model).is_err());
    }
}
