//! Gaussian belief over target kinematic states: linear prediction, a single
//! extended-Kalman update against the stacked per-sensor per-path synthetic
//! measurements, and fixed-interval (RTS) smoothing over the window.

use crate::geometry::{
    forward_map, jacobian_state, wrap_angle, GeometryError, PathHeights, SiteConfig,
    SlantMeasurement, UtmState,
};
use nalgebra::{DMatrix, DVector, Matrix3, Matrix4, Vector3, Vector4};
use thiserror::Error;

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum KinematicsError {
    #[error("innovation covariance not invertible")]
    NumericalFailure,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Gaussian kinematic belief.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianState {
    pub mean: UtmState,
    pub cov: Matrix4<f64>,
}

impl GaussianState {
    pub fn new(mean: UtmState, cov: Matrix4<f64>) -> Self {
        Self { mean, cov }
    }
}

/// One synthetic-measurement block of a stacked observation.
#[derive(Debug, Clone, Copy)]
pub struct ObsBlock {
    pub sensor: usize,
    pub path: usize,
    pub y: SlantMeasurement,
    /// Synthetic covariance (measurement noise plus height-induced inflation,
    /// divided by the association detection mass).
    pub r: Matrix3<f64>,
    /// Height-pair mean the block is linearized at.
    pub heights: PathHeights,
}

/// Ordered per-(sensor, path) synthetic measurements of one scan. Blocks
/// cannot be merged further: each carries its own measurement function.
#[derive(Debug, Clone, Default)]
pub struct StackedObservation {
    pub blocks: Vec<ObsBlock>,
}

impl StackedObservation {
    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }
}

/// Linear-Gaussian prediction: mean `F x`, covariance `F P F^T + Q`.
pub fn predict(prior: &GaussianState, f: &Matrix4<f64>, q: &Matrix4<f64>) -> GaussianState {
    let mean = UtmState::from_vector(&(f * prior.mean.as_vector()));
    let cov = symmetrized(f * prior.cov * f.transpose() + q);
    GaussianState { mean, cov }
}

/// Single EKF update against the stacked observation vector with
/// block-diagonal noise. All blocks are linearized at `lin` (the predicted
/// mean when `None`); Joseph-form covariance update keeps the posterior
/// symmetric positive definite.
pub fn update(
    pred: &GaussianState,
    obs: &StackedObservation,
    sites: &[SiteConfig],
    lin: Option<&UtmState>,
) -> Result<GaussianState, KinematicsError> {
    if obs.is_empty() {
        return Ok(*pred);
    }
    let lin = lin.copied().unwrap_or(pred.mean);
    let m = 3 * obs.blocks.len();
    let mut h = DMatrix::<f64>::zeros(m, 4);
    let mut r = DMatrix::<f64>::zeros(m, m);
    let mut innov = DVector::<f64>::zeros(m);
    let shift = pred.mean.as_vector() - lin.as_vector();
    for (b, blk) in obs.blocks.iter().enumerate() {
        let site = &sites[blk.sensor];
        let predicted = forward_map(&lin, site, &blk.heights)?;
        let jac = jacobian_state(&lin, site, &blk.heights)?;
        let mut d = blk.y.as_vector() - predicted.as_vector();
        d[2] = wrap_angle(d[2]);
        let d = d - jac * shift;
        for i in 0..3 {
            innov[3 * b + i] = d[i];
            for j in 0..4 {
                h[(3 * b + i, j)] = jac[(i, j)];
            }
            for j in 0..3 {
                r[(3 * b + i, 3 * b + j)] = blk.r[(i, j)];
            }
        }
    }

    let p = DMatrix::from_iterator(4, 4, pred.cov.iter().copied());
    let s = &h * &p * h.transpose() + &r;
    let chol = s.clone().cholesky().ok_or(KinematicsError::NumericalFailure)?;
    // K = P H^T S^-1, via S^-1 (H P) transposed.
    let k = chol.solve(&(&h * &p)).transpose();
    let mean_vec = pred.mean.as_vector() + Vector4::from_iterator((&k * &innov).iter().copied());
    let a = DMatrix::<f64>::identity(4, 4) - &k * &h;
    let cov = &a * &p * a.transpose() + &k * &r * k.transpose();
    let cov = symmetrized(Matrix4::from_iterator(cov.iter().copied()));
    Ok(GaussianState { mean: UtmState::from_vector(&mean_vec), cov })
}

/// Fixed-interval RTS smoother over a filtered window. The last element is
/// the filtered last element; one-step predictions are recomputed from the
/// filtered sequence with the given dynamics.
pub fn smooth(filtered: &[GaussianState], f: &Matrix4<f64>, q: &Matrix4<f64>) -> Vec<GaussianState> {
    let n = filtered.len();
    if n <= 1 {
        return filtered.to_vec();
    }
    let mut smoothed = filtered.to_vec();
    for t in (0..n - 1).rev() {
        let pred = predict(&filtered[t], f, q);
        let Some(chol) = pred.cov.cholesky() else {
            continue;
        };
        // G = P_t F^T (P_{t+1|t})^-1
        let gain = chol.solve(&(f * filtered[t].cov)).transpose();
        let mean = filtered[t].mean.as_vector()
            + gain * (smoothed[t + 1].mean.as_vector() - pred.mean.as_vector());
        let cov = filtered[t].cov + gain * (smoothed[t + 1].cov - pred.cov) * gain.transpose();
        smoothed[t] = GaussianState {
            mean: UtmState::from_vector(&mean),
            cov: symmetrized(cov),
        };
    }
    smoothed
}

/// Per-block Gaussian log-likelihood of the stacked observation under the
/// linearized predictive distribution `N(h(x), J P J^T + R)`.
pub fn innovation_loglik(
    pred: &GaussianState,
    obs: &StackedObservation,
    sites: &[SiteConfig],
) -> Result<Vec<f64>, KinematicsError> {
    obs.blocks
        .iter()
        .map(|blk| {
            let site = &sites[blk.sensor];
            let predicted = forward_map(&pred.mean, site, &blk.heights)?;
            let jac = jacobian_state(&pred.mean, site, &blk.heights)?;
            let s = jac * pred.cov * jac.transpose() + blk.r;
            let mut d = blk.y.as_vector() - predicted.as_vector();
            d[2] = wrap_angle(d[2]);
            gaussian_logpdf3(&d, &s)
        })
        .collect()
}

/// Log-density of a 3-dimensional zero-mean Gaussian at `delta`.
pub fn gaussian_logpdf3(delta: &Vector3<f64>, cov: &Matrix3<f64>) -> Result<f64, KinematicsError> {
    let chol = cov.cholesky().ok_or(KinematicsError::NumericalFailure)?;
    let ldet = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let maha = delta.dot(&chol.solve(delta));
    Ok(-0.5 * (3.0 * (2.0 * std::f64::consts::PI).ln() + ldet + maha))
}

fn symmetrized(m: Matrix4<f64>) -> Matrix4<f64> {
    (m + m.transpose()) * 0.5
}
