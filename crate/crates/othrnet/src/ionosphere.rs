//! Per-sensor belief over the two ionospheric layer heights (E, F):
//! Kalman prediction, a joint update fusing the ionosonde reading with
//! target-feedback synthetic measurements, and RTS smoothing.
//!
//! The filtered state is the 2-vector of *layer* heights; the four path
//! height pairs are assembled from it by a per-path layer lookup, with the
//! measurement Jacobian composed through that selection map.

use crate::geometry::{
    forward_map, jacobian_heights, wrap_angle, GeometryError, PathHeights, SiteConfig,
    SlantMeasurement, UtmState, HEIGHT_MAX_KM, HEIGHT_MIN_KM,
};
use nalgebra::{Matrix2, Matrix3, SMatrix, Vector2};
use thiserror::Error;

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum IonoError {
    #[error("information matrix not invertible")]
    NumericalFailure,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Gaussian belief over the layer heights `[h_E, h_F]` of one sensor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IonoState {
    pub mean: Vector2<f64>,
    pub cov: Matrix2<f64>,
}

impl IonoState {
    pub fn new(mean: Vector2<f64>, cov: Matrix2<f64>) -> Self {
        Self { mean, cov }
    }
}

/// Layer lookup per propagation path: `(transmit layer, receive layer)`
/// indices into the 2-vector layer state. The two-layer table enumerates
/// EE, EF, FE, FF in that order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathTable {
    pairs: Vec<(usize, usize)>,
}

impl PathTable {
    pub fn two_layer() -> Self {
        Self { pairs: vec![(0, 0), (0, 1), (1, 0), (1, 1)] }
    }

    pub fn n_paths(&self) -> usize {
        self.pairs.len()
    }

    /// Height pair of path `path` under the given layer heights.
    pub fn assemble(&self, layers: &Vector2<f64>, path: usize) -> PathHeights {
        let (t, r) = self.pairs[path];
        PathHeights::new(layers[t], layers[r])
    }

    /// Selection matrix mapping layer heights to `(ht, hr)` of `path`.
    pub fn selection(&self, path: usize) -> Matrix2<f64> {
        let (t, r) = self.pairs[path];
        let mut m = Matrix2::zeros();
        m[(0, t)] = 1.0;
        m[(1, r)] = 1.0;
        m
    }
}

/// One target-feedback block: a synthetic measurement attributed to
/// `(target, path)` with its state-inflated covariance, observed through the
/// height-dependent measurement map at the target mean.
#[derive(Debug, Clone, Copy)]
pub struct HeightFeedback {
    pub y: SlantMeasurement,
    /// `(R + J_x P J_x^T) / (1 - miss)`.
    pub r: Matrix3<f64>,
    pub target_mean: UtmState,
    pub path: usize,
}

/// Linear Gaussian prediction of the layer heights.
pub fn predict_heights(prior: &IonoState, b: &Matrix2<f64>, q: &Matrix2<f64>) -> IonoState {
    IonoState {
        mean: b * prior.mean,
        cov: symmetrized(b * prior.cov * b.transpose() + q),
    }
}

/// Outcome of a height update; `clamped` records whether the posterior mean
/// had to be pulled back into the physical E/F-region bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeightUpdate {
    pub state: IonoState,
    pub clamped: bool,
}

/// Joint EKF update of the layer heights against the ionosonde reading
/// (linear, identity measurement matrix) and every feedback block, all
/// linearized at the predicted mean. Implemented in information form, which
/// is algebraically identical to the stacked-gain update.
pub fn update_heights(
    pred: &IonoState,
    ionosonde: Option<(&Vector2<f64>, &Matrix2<f64>)>,
    feedback: &[HeightFeedback],
    site: &SiteConfig,
    table: &PathTable,
) -> Result<HeightUpdate, IonoError> {
    let mut info = pred
        .cov
        .try_inverse()
        .ok_or(IonoError::NumericalFailure)?;
    let mut rhs = Vector2::zeros();
    if let Some((reading, w)) = ionosonde {
        let wi = w.try_inverse().ok_or(IonoError::NumericalFailure)?;
        info += wi;
        rhs += wi * (reading - pred.mean);
    }
    for fb in feedback {
        let heights = table.assemble(&pred.mean, fb.path);
        let predicted = forward_map(&fb.target_mean, site, &heights)?;
        let jac: SMatrix<f64, 3, 2> =
            jacobian_heights(&fb.target_mean, site, &heights)? * table.selection(fb.path);
        let ri = fb.r.try_inverse().ok_or(IonoError::NumericalFailure)?;
        let mut innov = fb.y.as_vector() - predicted.as_vector();
        innov[2] = wrap_angle(innov[2]);
        info += jac.transpose() * ri * jac;
        rhs += jac.transpose() * ri * innov;
    }
    let cov = symmetrized(info.try_inverse().ok_or(IonoError::NumericalFailure)?);
    let mut mean = pred.mean + cov * rhs;
    let mut clamped = false;
    for i in 0..2 {
        let bounded = mean[i].clamp(HEIGHT_MIN_KM, HEIGHT_MAX_KM);
        if bounded != mean[i] {
            mean[i] = bounded;
            clamped = true;
        }
    }
    Ok(HeightUpdate { state: IonoState { mean, cov }, clamped })
}

/// Fixed-interval RTS smoother over the filtered height window.
pub fn smooth_heights(filtered: &[IonoState], b: &Matrix2<f64>, q: &Matrix2<f64>) -> Vec<IonoState> {
    let n = filtered.len();
    if n <= 1 {
        return filtered.to_vec();
    }
    let mut smoothed = filtered.to_vec();
    for t in (0..n - 1).rev() {
        let pred = predict_heights(&filtered[t], b, q);
        let Some(pinv) = pred.cov.try_inverse() else {
            continue;
        };
        let gain = filtered[t].cov * b.transpose() * pinv;
        let mean = filtered[t].mean + gain * (smoothed[t + 1].mean - pred.mean);
        let cov = filtered[t].cov + gain * (smoothed[t + 1].cov - pred.cov) * gain.transpose();
        smoothed[t] = IonoState { mean, cov: symmetrized(cov) };
    }
    smoothed
}

fn symmetrized(m: Matrix2<f64>) -> Matrix2<f64> {
    (m + m.transpose()) * 0.5
}
