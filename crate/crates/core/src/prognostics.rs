//! Remaining-life prediction from detected degradation onsets.
//!
//! Each system's stream is monitored until the alarm; the change-point
//! estimate and per-sensor drift rates become regression features for a
//! log location-normal time-to-failure model
//! `P{Y <= y} = Phi((ln y - pi) / eta)` with `pi = beta_0 + sum_n beta_n
//! c_hat_n`. With `eta` fixed, maximum likelihood in `beta` is ordinary
//! least squares of `ln ttf` on the features, and the predicted whole life
//! is the detected onset plus the distribution mean `exp(pi + eta^2 / 2)`.

use crate::detectors::monitor::{MixtureGlrMonitor, Monitor};
use crate::detectors::DetectorConfig;
use crate::model::SensorModel;
use crate::quad::normal_cdf;
use crate::{Error, Result};
use nalgebra::{DMatrix, DVector};

/// Fitted time-to-failure regression.
#[derive(Debug, Clone)]
pub struct PrognosticModel {
    /// Intercept followed by one coefficient per sensor.
    beta: Vec<f64>,
    eta: f64,
}

/// Detection summary of one system, plus its observed time to failure when
/// the outcome is known (training data).
#[derive(Debug, Clone)]
pub struct SystemFeatures {
    pub k_hat: u64,
    pub c_hat: Vec<f64>,
    pub ttf: Option<f64>,
}

impl SystemFeatures {
    pub fn new(k_hat: u64, c_hat: Vec<f64>, ttf: Option<f64>) -> Result<Self> {
        if let Some(y) = ttf {
            if !(y > 0.0) {
                return Err(Error::NonPositive {
                    what: "time to failure",
                    value: y,
                });
            }
        }
        Ok(Self { k_hat, c_hat, ttf })
    }
}

/// Monitors one system's raw frames and returns the alarm-time features.
///
/// Fails with a horizon report when the stream ends without an alarm; such
/// systems are excluded from fitting and counted by the caller.
pub fn extract_features(
    frames: &[Vec<f64>],
    model: &SensorModel,
    config: &DetectorConfig,
) -> Result<SystemFeatures> {
    let n = model.n_sensors();
    let mut monitor = MixtureGlrMonitor::new(config.clone(), n)?;
    let mut z = vec![0.0; n];
    for frame in frames {
        model.standardize_into(frame, &mut z)?;
        if monitor.step(&z)? {
            let r = monitor.result(model)?;
            return SystemFeatures::new(r.k_hat, r.c_hat, None);
        }
    }
    Err(Error::NoAlarm {
        horizon: frames.len() as u64,
    })
}

/// Least-squares fit of `ln ttf` on `(1, c_hat)`; the maximum-likelihood
/// estimate of the regression coefficients at fixed `eta`.
pub fn fit_ttf_model(features: &[SystemFeatures], eta: f64) -> Result<PrognosticModel> {
    if !(eta > 0.0) || !eta.is_finite() {
        return Err(Error::NonPositive {
            what: "scale eta",
            value: eta,
        });
    }
    let resolved: Vec<&SystemFeatures> = features.iter().filter(|f| f.ttf.is_some()).collect();
    let Some(first) = resolved.first() else {
        return Err(Error::NoTrainingSystems);
    };
    let n_sensors = first.c_hat.len();
    let cols = n_sensors + 1;
    if resolved.len() < cols + 1 {
        return Err(Error::NoTrainingSystems);
    }
    for f in &resolved {
        if f.c_hat.len() != n_sensors {
            return Err(Error::DimensionMismatch {
                expected: n_sensors,
                got: f.c_hat.len(),
            });
        }
    }
    let x = DMatrix::from_fn(resolved.len(), cols, |i, j| {
        if j == 0 {
            1.0
        } else {
            resolved[i].c_hat[j - 1]
        }
    });
    let y = DVector::from_iterator(resolved.len(), resolved.iter().map(|f| f.ttf.unwrap().ln()));
    let svd = x.svd(true, true);
    let max_sv = svd.singular_values.iter().fold(0.0_f64, |m, &v| m.max(v));
    let tol = max_sv * 1e-10;
    let rank = svd.singular_values.iter().filter(|&&v| v > tol).count();
    if rank < cols {
        return Err(Error::RankDeficient { rank, cols });
    }
    let beta = svd
        .solve(&y, tol)
        .map_err(|e| Error::Config(format!("least-squares solve failed: {e}")))?;
    Ok(PrognosticModel {
        beta: beta.iter().copied().collect(),
        eta,
    })
}

impl PrognosticModel {
    pub fn from_parts(beta: Vec<f64>, eta: f64) -> Result<Self> {
        if beta.is_empty() {
            return Err(Error::DimensionMismatch {
                expected: 1,
                got: 0,
            });
        }
        if !(eta > 0.0) || !eta.is_finite() {
            return Err(Error::NonPositive {
                what: "scale eta",
                value: eta,
            });
        }
        Ok(Self { beta, eta })
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.beta
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    /// `pi = beta_0 + sum_n beta_n * c_hat_n`.
    pub fn linear_predictor(&self, c_hat: &[f64]) -> Result<f64> {
        if c_hat.len() + 1 != self.beta.len() {
            return Err(Error::DimensionMismatch {
                expected: self.beta.len() - 1,
                got: c_hat.len(),
            });
        }
        Ok(self.beta[0]
            + self.beta[1..]
                .iter()
                .zip(c_hat)
                .map(|(b, c)| b * c)
                .sum::<f64>())
    }

    /// `P{Y <= y}` for the fitted time-to-failure distribution.
    pub fn ttf_cdf(&self, c_hat: &[f64], y: f64) -> Result<f64> {
        if !(y > 0.0) {
            return Err(Error::NonPositive {
                what: "time to failure",
                value: y,
            });
        }
        let pi = self.linear_predictor(c_hat)?;
        Ok(normal_cdf((y.ln() - pi) / self.eta))
    }

    /// Mean time to failure `exp(pi + eta^2 / 2)`.
    pub fn mean_ttf(&self, c_hat: &[f64]) -> Result<f64> {
        let pi = self.linear_predictor(c_hat)?;
        Ok((pi + 0.5 * self.eta * self.eta).exp())
    }
}

/// Predicted whole life: detected onset plus mean time to failure.
pub fn predict_life(features: &SystemFeatures, model: &PrognosticModel) -> Result<f64> {
    Ok(features.k_hat as f64 + model.mean_ttf(&features.c_hat)?)
}

/// `|predicted - actual| / actual`.
pub fn relative_error(predicted: f64, actual: f64) -> Result<f64> {
    if !(actual > 0.0) {
        return Err(Error::NonPositive {
            what: "actual whole life",
            value: actual,
        });
    }
    Ok((predicted - actual).abs() / actual)
}
