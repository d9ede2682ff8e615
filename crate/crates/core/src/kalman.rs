//! Constant-velocity Kalman tracker on LiDAR centroids, used as the baseline.

use nalgebra::{Matrix3, Matrix3x6, Matrix6, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::data_model::{AlignedSample, Point3};
use crate::postprocess::Trajectory;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum KalmanError {
    #[error("predict needs dt > 0, got {0} s")]
    NonPositiveDt(f64),
    #[error("no sample has LiDAR points")]
    NoMeasurements,
    #[error("invalid Kalman config: {0}")]
    Config(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KfConfig {
    /// White-acceleration intensity (m²/s³).
    pub q: f64,
    /// Measurement variance per axis (m²).
    pub r: f64,
    /// Initial velocity variance ((m/s)²); initial position variance is `r`.
    pub init_velocity_var: f64,
}

impl Default for KfConfig {
    fn default() -> Self {
        Self {
            q: 1.0,
            r: 0.25,
            init_velocity_var: 100.0,
        }
    }
}

impl KfConfig {
    pub fn validate(&self) -> Result<(), KalmanError> {
        if !(self.q > 0.0 && self.r > 0.0 && self.init_velocity_var > 0.0) {
            return Err(KalmanError::Config("q, r and init_velocity_var must be positive".into()));
        }
        Ok(())
    }
}

/// State `[p, v]` with covariance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KfState {
    pub x: Vector6<f64>,
    pub p: Matrix6<f64>,
    pub t_ns: i64,
}

impl KfState {
    /// Position from the measurement, zero velocity.
    pub fn init(measurement: Point3, t_ns: i64, cfg: &KfConfig) -> Self {
        let mut x = Vector6::zeros();
        x.fixed_rows_mut::<3>(0).copy_from(&to_vec3(measurement));
        let mut p = Matrix6::zeros();
        for i in 0..3 {
            p[(i, i)] = cfg.r;
            p[(i + 3, i + 3)] = cfg.init_velocity_var;
        }
        Self { x, p, t_ns }
    }

    pub fn position(&self) -> Point3 {
        Point3::new(self.x[0], self.x[1], self.x[2])
    }

    pub fn velocity(&self) -> Point3 {
        Point3::new(self.x[3], self.x[4], self.x[5])
    }
}

fn to_vec3(p: Point3) -> Vector3<f64> {
    Vector3::new(p.x, p.y, p.z)
}

fn symmetrize(m: &Matrix6<f64>) -> Matrix6<f64> {
    (m + m.transpose()) * 0.5
}

/// `p ← p + v·dt` with white-acceleration process noise.
pub fn kf_predict(state: &KfState, dt: f64, cfg: &KfConfig) -> Result<KfState, KalmanError> {
    if !(dt > 0.0) {
        return Err(KalmanError::NonPositiveDt(dt));
    }
    let mut f = Matrix6::identity();
    let mut q = Matrix6::zeros();
    let (q11, q12, q22) = (dt.powi(3) / 3.0, dt.powi(2) / 2.0, dt);
    for i in 0..3 {
        f[(i, i + 3)] = dt;
        q[(i, i)] = cfg.q * q11;
        q[(i, i + 3)] = cfg.q * q12;
        q[(i + 3, i)] = cfg.q * q12;
        q[(i + 3, i + 3)] = cfg.q * q22;
    }
    Ok(KfState {
        x: f * state.x,
        p: symmetrize(&(f * state.p * f.transpose() + q)),
        t_ns: state.t_ns + (dt * 1e9).round() as i64,
    })
}

/// Position-measurement update (Joseph form).
pub fn kf_update(state: &KfState, measurement: Point3, cfg: &KfConfig) -> KfState {
    let mut h = Matrix3x6::zeros();
    for i in 0..3 {
        h[(i, i)] = 1.0;
    }
    let r = Matrix3::identity() * cfg.r;
    let s = h * state.p * h.transpose() + r;
    let s_inv = s.try_inverse().expect("innovation covariance is positive definite");
    let k = state.p * h.transpose() * s_inv;
    let innovation = to_vec3(measurement) - h * state.x;
    let i_kh = Matrix6::identity() - k * h;
    KfState {
        x: state.x + k * innovation,
        p: symmetrize(&(i_kh * state.p * i_kh.transpose() + k * r * k.transpose())),
        t_ns: state.t_ns,
    }
}

/// Filters a time-ordered measurement series. Frames without a measurement
/// are predicted only; frames before the first measurement take its position.
pub fn kf_track_series(
    t_ns: &[i64],
    measurements: &[Option<Point3>],
    cfg: &KfConfig,
) -> Result<Vec<KfState>, KalmanError> {
    cfg.validate()?;
    assert_eq!(t_ns.len(), measurements.len());
    let first = measurements
        .iter()
        .position(|m| m.is_some())
        .ok_or(KalmanError::NoMeasurements)?;
    let init = KfState::init(measurements[first].expect("found"), t_ns[first], cfg);
    let mut out = Vec::with_capacity(t_ns.len());
    for &t in &t_ns[..first] {
        out.push(KfState { t_ns: t, ..init });
    }
    out.push(init);
    let mut state = init;
    for i in first + 1..t_ns.len() {
        let dt = (t_ns[i] - state.t_ns) as f64 * 1e-9;
        state = kf_predict(&state, dt, cfg)?;
        state.t_ns = t_ns[i];
        if let Some(m) = measurements[i] {
            state = kf_update(&state, m, cfg);
        }
        out.push(state);
    }
    Ok(out)
}

/// Tracks the centroid of each sample's valid LiDAR points.
pub fn kf_track(samples: &[AlignedSample], cfg: &KfConfig) -> Result<Trajectory, KalmanError> {
    let t: Vec<i64> = samples.iter().map(|s| s.t_ns).collect();
    let m: Vec<Option<Point3>> = samples
        .iter()
        .map(|s| Point3::centroid(&s.lidar.valid_points()))
        .collect();
    let states = kf_track_series(&t, &m, cfg)?;
    Ok(Trajectory::new(t, states.iter().map(KfState::position).collect())
        .expect("sample timestamps are strictly increasing"))
}
