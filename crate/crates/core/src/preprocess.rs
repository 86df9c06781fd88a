//! Input conditioning: whitening for correlated sensors, linear detrending
//! for drifting baselines, and first differencing.
//!
//! Whitening maps correlated residuals through the symmetric inverse square
//! root of the known covariance; the detectors then see unit-variance
//! independent noise and should run with mixture weight 1, since a change
//! in any direction touches every whitened coordinate. Differencing is
//! provided only as a baseline: it turns a slope change into a mean shift
//! but doubles the noise variance, which is exactly why the slope statistic
//! exists.

use crate::model::{ObservationFrame, SensorModel};
use crate::{Error, Result};
use nalgebra::{DMatrix, DVector};

/// Linear map taking raw frames to whitened residuals.
#[derive(Debug, Clone)]
pub struct WhitenTransform {
    /// Symmetric inverse square root of the covariance.
    root_inverse: DMatrix<f64>,
    mu: Vec<f64>,
}

/// Builds the whitener from a known covariance and mean.
///
/// The inverse square root comes from the eigendecomposition
/// `cov = Q diag(lambda) Q^T`, so it is symmetric by construction. The
/// covariance must be symmetric and positive definite; "definite" here
/// means the smallest eigenvalue exceeds `1e-10` times the largest.
pub fn build_whitener(cov: &DMatrix<f64>, mu: &[f64]) -> Result<WhitenTransform> {
    let n = mu.len();
    if cov.nrows() != n || cov.ncols() != n {
        return Err(Error::CovarianceShape {
            expected: n,
            rows: cov.nrows(),
            cols: cov.ncols(),
        });
    }
    let scale = cov.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    for i in 0..n {
        for j in (i + 1)..n {
            if (cov[(i, j)] - cov[(j, i)]).abs() > 1e-8 * scale.max(1.0) {
                return Err(Error::Config(format!(
                    "covariance not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    let eigen = cov.clone().symmetric_eigen();
    let max_eig = eigen
        .eigenvalues
        .iter()
        .fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let min_eig = eigen
        .eigenvalues
        .iter()
        .fold(f64::INFINITY, |m, &v| m.min(v));
    if !(min_eig > 1e-10 * max_eig) || !(max_eig > 0.0) {
        return Err(Error::CovarianceNotPositiveDefinite(min_eig));
    }
    let inv_sqrt = DMatrix::from_diagonal(&eigen.eigenvalues.map(|v| 1.0 / v.sqrt()));
    let q = &eigen.eigenvectors;
    let root_inverse = q * inv_sqrt * q.transpose();
    Ok(WhitenTransform {
        root_inverse,
        mu: mu.to_vec(),
    })
}

impl WhitenTransform {
    pub fn n_sensors(&self) -> usize {
        self.mu.len()
    }

    pub fn root_inverse(&self) -> &DMatrix<f64> {
        &self.root_inverse
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    /// Whitened residual of one frame: `root_inverse * (y - mu)`.
    pub fn whiten(&self, frame: &ObservationFrame) -> Result<ObservationFrame> {
        if frame.values.len() != self.mu.len() {
            return Err(Error::DimensionMismatch {
                expected: self.mu.len(),
                got: frame.values.len(),
            });
        }
        let centered = DVector::from_iterator(
            self.mu.len(),
            frame.values.iter().zip(&self.mu).map(|(y, m)| y - m),
        );
        let z = &self.root_inverse * centered;
        Ok(ObservationFrame {
            t: frame.t,
            values: z.iter().copied().collect(),
        })
    }
}

/// Per-sensor least-squares line fitted to an in-control prefix, used to
/// reduce regression-style data to zero-mean residuals.
#[derive(Debug, Clone)]
pub struct LinearDetrender {
    intercept: Vec<f64>,
    slope: Vec<f64>,
    /// Residual standard deviation from the fit; an estimate, not a known
    /// model quantity.
    sigma: Vec<f64>,
}

/// Fits `y = a + b t` per sensor over `t = 1..=fit_horizon`.
///
/// `history` holds one frame per time step in order. Residual standard
/// deviations use the fit residuals with two degrees of freedom spent, so
/// `fit_horizon >= 3` is needed before [`LinearDetrender::model`] works.
pub fn detrend_linear(history: &[Vec<f64>], fit_horizon: usize) -> Result<LinearDetrender> {
    if fit_horizon < 2 {
        return Err(Error::SeriesTooShort {
            need: 2,
            got: fit_horizon,
        });
    }
    if history.len() < fit_horizon {
        return Err(Error::SeriesTooShort {
            need: fit_horizon,
            got: history.len(),
        });
    }
    let n = history[0].len();
    if n == 0 || history.iter().any(|f| f.len() != n) {
        return Err(Error::DimensionMismatch {
            expected: n.max(1),
            got: history
                .iter()
                .map(|f| f.len())
                .find(|&l| l != n)
                .unwrap_or(0),
        });
    }
    let m = fit_horizon as f64;
    let t_mean = (m + 1.0) / 2.0;
    // Sum of squared centered times for 1..=m.
    let sxx = m * (m * m - 1.0) / 12.0;
    let mut intercept = vec![0.0; n];
    let mut slope = vec![0.0; n];
    let mut sigma = vec![0.0; n];
    for sensor in 0..n {
        let mut y_sum = 0.0;
        let mut xy = 0.0;
        for (i, frame) in history[..fit_horizon].iter().enumerate() {
            let t = (i + 1) as f64;
            y_sum += frame[sensor];
            xy += (t - t_mean) * frame[sensor];
        }
        let y_mean = y_sum / m;
        let b = xy / sxx;
        let a = y_mean - b * t_mean;
        let mut rss = 0.0;
        for (i, frame) in history[..fit_horizon].iter().enumerate() {
            let t = (i + 1) as f64;
            let r = frame[sensor] - a - b * t;
            rss += r * r;
        }
        intercept[sensor] = a;
        slope[sensor] = b;
        sigma[sensor] = if fit_horizon > 2 {
            (rss / (m - 2.0)).sqrt()
        } else {
            0.0
        };
    }
    Ok(LinearDetrender {
        intercept,
        slope,
        sigma,
    })
}

impl LinearDetrender {
    pub fn n_sensors(&self) -> usize {
        self.slope.len()
    }

    pub fn slopes(&self) -> &[f64] {
        &self.slope
    }

    pub fn intercepts(&self) -> &[f64] {
        &self.intercept
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    /// Raw residuals `y - a - b t` for the frame at time `t` (1-based).
    pub fn residuals(&self, t: u64, values: &[f64]) -> Result<Vec<f64>> {
        if values.len() != self.slope.len() {
            return Err(Error::DimensionMismatch {
                expected: self.slope.len(),
                got: values.len(),
            });
        }
        let tf = t as f64;
        Ok(values
            .iter()
            .enumerate()
            .map(|(i, y)| y - self.intercept[i] - self.slope[i] * tf)
            .collect())
    }

    /// Zero-mean sensor model with the estimated residual scales, for
    /// standardizing the residual stream. Fails when any scale degenerated
    /// to zero (exact fit or too-short horizon).
    pub fn model(&self) -> Result<SensorModel> {
        SensorModel::new(vec![0.0; self.slope.len()], self.sigma.clone())
    }
}

/// First differences; the mean-shift reduction the slope statistic is
/// designed to beat.
pub fn difference(series: &[f64]) -> Result<Vec<f64>> {
    if series.len() < 2 {
        return Err(Error::SeriesTooShort {
            need: 2,
            got: series.len(),
        });
    }
    Ok(series.windows(2).map(|w| w[1] - w[0]).collect())
}
