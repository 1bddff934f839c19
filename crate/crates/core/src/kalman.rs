//! Constant-velocity Kalman filter over `(cx, cy, w, h)` and an RTS
//! smoother for finished tracks.
//!
//! State is `(cx, cy, w, h, vcx, vcy, vw, vh)` in pixels and pixels/frame.
//! Process noise is diagonal and scales linearly with the prediction step.

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::error::{MttError, Result};
use crate::model::{BBox, Frame};

pub type Vector8 = SVector<f64, 8>;
pub type Matrix8 = SMatrix<f64, 8, 8>;
pub type Vector4 = SVector<f64, 4>;
pub type Matrix4 = SMatrix<f64, 4, 4>;
type Matrix48 = SMatrix<f64, 4, 8>;

const MIN_SIZE: f64 = 1e-3;
const REGULARIZATION: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KalmanParams {
    pub process_pos_var: f64,
    pub process_vel_var: f64,
    pub meas_var: f64,
    pub init_vel_var: f64,
}

impl Default for KalmanParams {
    fn default() -> Self {
        KalmanParams {
            process_pos_var: 1.0,
            process_vel_var: 0.25,
            meas_var: 1.0,
            init_vel_var: 1e3,
        }
    }
}

impl KalmanParams {
    pub fn noiseless() -> Self {
        KalmanParams {
            process_pos_var: 0.0,
            process_vel_var: 0.0,
            meas_var: 0.0,
            init_vel_var: 1e3,
        }
    }

    fn transition(dt: f64) -> Matrix8 {
        let mut f = Matrix8::identity();
        for i in 0..4 {
            f[(i, i + 4)] = dt;
        }
        f
    }

    fn process_noise(&self, dt: f64) -> Matrix8 {
        let mut q = Matrix8::zeros();
        for i in 0..4 {
            q[(i, i)] = self.process_pos_var * dt;
            q[(i + 4, i + 4)] = self.process_vel_var * dt;
        }
        q
    }

    fn measurement_noise(&self) -> Matrix4 {
        Matrix4::identity() * self.meas_var
    }
}

fn observation() -> Matrix48 {
    let mut h = Matrix48::zeros();
    for i in 0..4 {
        h[(i, i)] = 1.0;
    }
    h
}

pub fn measurement(b: &BBox) -> Vector4 {
    let (cx, cy) = b.center();
    Vector4::new(cx, cy, b.w, b.h)
}

pub fn bbox_of(v: &Vector8) -> BBox {
    BBox::from_center(v[0], v[1], v[2].max(MIN_SIZE), v[3].max(MIN_SIZE))
}

/// Innovation `predicted - observed` and its covariance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Innovation {
    pub residual: Vector4,
    pub cov: Matrix4,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanState {
    pub mean: Vector8,
    pub cov: Matrix8,
}

impl KalmanState {
    /// Zero velocity, position variance equal to the measurement noise.
    pub fn from_box(b: &BBox, p: &KalmanParams) -> Self {
        let z = measurement(b);
        let mut mean = Vector8::zeros();
        mean.fixed_rows_mut::<4>(0).copy_from(&z);
        let mut cov = Matrix8::zeros();
        for i in 0..4 {
            cov[(i, i)] = p.meas_var;
            cov[(i + 4, i + 4)] = p.init_vel_var;
        }
        KalmanState { mean, cov }
    }

    pub fn bbox(&self) -> BBox {
        bbox_of(&self.mean)
    }

    pub fn predict(&self, dt: u32, p: &KalmanParams) -> KalmanState {
        let dt = dt as f64;
        let f = KalmanParams::transition(dt);
        KalmanState {
            mean: f * self.mean,
            cov: f * self.cov * f.transpose() + p.process_noise(dt),
        }
    }

    /// Innovation of `obs` against this (predicted) state, without updating.
    pub fn innovation(&self, obs: &BBox, p: &KalmanParams) -> Innovation {
        let h = observation();
        Innovation {
            residual: h * self.mean - measurement(obs),
            cov: h * self.cov * h.transpose() + p.measurement_noise(),
        }
    }

    /// Standard linear update. A non-PD innovation covariance is
    /// regularized once by `1e-6 I`; if that still fails the update errors.
    pub fn update(&self, obs: &BBox, p: &KalmanParams) -> Result<(KalmanState, Innovation)> {
        if !(obs.w > 0.0 && obs.h > 0.0) {
            return Err(MttError::Numerical("observation with non-positive size".into()));
        }
        let h = observation();
        let mut innov = self.innovation(obs, p);
        let s_inv = match invert_spd(&innov.cov) {
            Some(inv) => inv,
            None => {
                innov.cov += Matrix4::identity() * REGULARIZATION;
                invert_spd(&innov.cov).ok_or_else(|| {
                    MttError::Numerical("innovation covariance is not positive definite".into())
                })?
            }
        };
        let gain = self.cov * h.transpose() * s_inv;
        let mut mean = self.mean - gain * innov.residual;
        mean[2] = mean[2].max(MIN_SIZE);
        mean[3] = mean[3].max(MIN_SIZE);
        let ikh = Matrix8::identity() - gain * h;
        // Joseph form keeps the covariance symmetric PSD.
        let cov = ikh * self.cov * ikh.transpose()
            + gain * p.measurement_noise() * gain.transpose();
        let cov = (cov + cov.transpose()) * 0.5;
        Ok((KalmanState { mean, cov }, innov))
    }
}

pub fn invert_spd(m: &Matrix4) -> Option<Matrix4> {
    m.cholesky().map(|c| c.inverse())
}

/// Smoothed box for every frame in `[first, last]` of the observations.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedBox {
    pub frame: Frame,
    pub bbox: BBox,
    /// `true` for frames without an observation.
    pub interpolated: bool,
}

/// Forward Kalman pass plus backward Rauch-Tung-Striebel pass. `obs` must
/// be sorted by strictly increasing frame. The velocity is initialized
/// from the first two observations.
pub fn rts_smooth(obs: &[(Frame, BBox)], p: &KalmanParams) -> Result<Vec<SmoothedBox>> {
    if obs.is_empty() {
        return Ok(Vec::new());
    }
    if obs.windows(2).any(|w| w[0].0 >= w[1].0) {
        return Err(MttError::Numerical("observations must have increasing frames".into()));
    }
    let first = obs[0].0;
    let last = obs[obs.len() - 1].0;
    if obs.len() == 1 {
        return Ok(vec![SmoothedBox {
            frame: first,
            bbox: obs[0].1,
            interpolated: false,
        }]);
    }

    let mut init = KalmanState::from_box(&obs[0].1, p);
    let gap = (obs[1].0 - obs[0].0) as f64;
    let vel = (measurement(&obs[1].1) - measurement(&obs[0].1)) / gap;
    init.mean.fixed_rows_mut::<4>(4).copy_from(&vel);
    for i in 4..8 {
        init.cov[(i, i)] = 2.0 * p.meas_var / (gap * gap) + p.process_vel_var;
    }

    let n = (last - first + 1) as usize;
    let mut observed: Vec<Option<&BBox>> = vec![None; n];
    for (f, b) in obs {
        observed[(f - first) as usize] = Some(b);
    }

    let mut filtered: Vec<KalmanState> = Vec::with_capacity(n);
    let mut predicted: Vec<KalmanState> = Vec::with_capacity(n);
    let mut state = init;
    for (k, o) in observed.iter().enumerate() {
        let prior = if k == 0 { state.clone() } else { state.predict(1, p) };
        let post = match o {
            Some(b) => prior.update(b, p)?.0,
            None => prior.clone(),
        };
        predicted.push(prior);
        filtered.push(post.clone());
        state = post;
    }

    let f = KalmanParams::transition(1.0);
    let mut smoothed = filtered.clone();
    for k in (0..n - 1).rev() {
        let Some(pinv) = predicted[k + 1].cov.try_inverse() else {
            continue;
        };
        let c = filtered[k].cov * f.transpose() * pinv;
        let mean = filtered[k].mean + c * (smoothed[k + 1].mean - predicted[k + 1].mean);
        let cov = filtered[k].cov + c * (smoothed[k + 1].cov - predicted[k + 1].cov) * c.transpose();
        smoothed[k] = KalmanState { mean, cov };
    }

    Ok(smoothed
        .iter()
        .enumerate()
        .map(|(k, s)| SmoothedBox {
            frame: first + k as Frame,
            bbox: s.bbox(),
            interpolated: observed[k].is_none(),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cv_box(t: f64) -> BBox {
        BBox::from_center(100.0 + 3.0 * t, 50.0 - 1.5 * t, 40.0 + 0.2 * t, 80.0)
    }

    #[test]
    fn predict_moves_mean_by_velocity() {
        let p = KalmanParams::default();
        let mut s = KalmanState::from_box(&BBox::from_center(0.0, 0.0, 10.0, 10.0), &p);
        s.mean[4] = 1.0;
        let one = s.predict(1, &p);
        assert_eq!((one.mean[0], one.mean[1]), (1.0, 0.0));
        let three = s.predict(3, &p);
        assert_eq!(three.mean[0], 3.0);
        assert!(three.cov.trace() > one.cov.trace());
        assert!(one.cov.trace() > s.cov.trace());
    }

    #[test]
    fn update_at_mean_has_zero_innovation() {
        let p = KalmanParams::default();
        let b = BBox::from_center(10.0, 20.0, 30.0, 40.0);
        let s = KalmanState::from_box(&b, &p).predict(1, &p);
        let (_, innov) = s.update(&b, &p).unwrap();
        assert!(innov.residual.norm() < 1e-12);
    }

    #[test]
    fn posterior_covariance_shrinks_on_measured_block() {
        let p = KalmanParams::default();
        let b = BBox::from_center(10.0, 20.0, 30.0, 40.0);
        let prior = KalmanState::from_box(&b, &p).predict(2, &p);
        let (post, _) = prior.update(&BBox::from_center(12.0, 19.0, 30.0, 41.0), &p).unwrap();
        let h = observation();
        let diff = h * prior.cov * h.transpose() - h * post.cov * h.transpose();
        let eig = diff.symmetric_eigen().eigenvalues;
        assert!(eig.iter().all(|&e| e >= -1e-9), "{eig}");
    }

    #[test]
    fn zero_noise_exact_track_converges() {
        let p = KalmanParams::noiseless();
        let mut s = KalmanState::from_box(&cv_box(0.0), &p);
        for t in 1..=20 {
            let (post, innov) = s.predict(1, &p).update(&cv_box(t as f64), &p).unwrap();
            if t > 5 {
                assert!(innov.residual.norm() < 1e-6, "t={t}: {}", innov.residual.norm());
            }
            s = post;
        }
    }

    #[test]
    fn singular_covariance_fails_after_regularization() {
        let p = KalmanParams::noiseless();
        let mut s = KalmanState::from_box(&cv_box(0.0), &p);
        s.cov = -Matrix8::identity();
        assert!(matches!(s.update(&cv_box(1.0), &p), Err(MttError::Numerical(_))));
    }

    #[test]
    fn smoother_single_box_unchanged() {
        let b = BBox::new(1.0, 2.0, 3.0, 4.0);
        let out = rts_smooth(&[(7, b)], &KalmanParams::default()).unwrap();
        assert_eq!(out, vec![SmoothedBox { frame: 7, bbox: b, interpolated: false }]);
    }

    #[test]
    fn smoother_exact_on_cv_track_and_fills_gap() {
        let obs: Vec<(Frame, BBox)> = (1..=20)
            .filter(|&t| t != 9)
            .map(|t| (t, cv_box(t as f64)))
            .collect();
        let out = rts_smooth(&obs, &KalmanParams::default()).unwrap();
        assert_eq!(out.len(), 20);
        for s in &out {
            let truth = cv_box(s.frame as f64);
            let err = (s.bbox.x - truth.x).abs().max((s.bbox.y - truth.y).abs())
                .max((s.bbox.w - truth.w).abs()).max((s.bbox.h - truth.h).abs());
            assert!(err < 1e-6, "frame {} err {err}", s.frame);
            assert_eq!(s.interpolated, s.frame == 9);
        }
    }
}
