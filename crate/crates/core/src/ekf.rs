//! Error-state EKF fusing wheel forward speed with IMU attitude and gyro rates.
//!
//! Nominal state: position, orientation, forward speed. Error state (7):
//! `[δp (3), δθ (3, body frame), δv (1)]`. Gyro rates drive the prediction;
//! IMU attitude and wheel speed are measurements. Lateral and vertical body
//! velocities are assumed zero.

use nalgebra::{Matrix3, SMatrix, SVector, UnitQuaternion, Vector3};

use crate::config::EkfConfig;
use crate::error::{Error, Result};
use crate::geometry::{skew, so3_exp, so3_log, ImuSample, Pose, Timestamp, WheelOdomSample};

pub type Cov7 = SMatrix<f64, 7, 7>;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseModel {
    /// Variances per second.
    pub q_attitude: f64,
    pub q_position: f64,
    pub q_speed: f64,
    pub r_attitude: f64,
    pub r_speed: f64,
}

impl From<&EkfConfig> for NoiseModel {
    fn from(c: &EkfConfig) -> Self {
        NoiseModel {
            q_attitude: c.process_attitude.powi(2),
            q_position: c.process_position.powi(2),
            q_speed: c.process_speed.powi(2),
            r_attitude: c.measurement_attitude.powi(2),
            r_speed: c.measurement_speed.powi(2),
        }
    }
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel::from(&EkfConfig::default())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EkfState {
    pub position: Vector3<f64>,
    pub orientation: UnitQuaternion<f64>,
    pub forward_speed: f64,
    pub covariance: Cov7,
}

impl Default for EkfState {
    fn default() -> Self {
        EkfState {
            position: Vector3::zeros(),
            orientation: UnitQuaternion::identity(),
            forward_speed: 0.0,
            covariance: Cov7::identity() * 1e-6,
        }
    }
}

fn symmetrize(p: &mut Cov7) {
    *p = (*p + p.transpose()) * 0.5;
}

fn min_eigenvalue(p: &Cov7) -> f64 {
    p.symmetric_eigenvalues().min()
}

impl EkfState {
    pub fn pose(&self) -> Pose {
        Pose::new(self.orientation, self.position)
    }

    /// Propagates the state by `dt` seconds with body rates `gyro`.
    pub fn predict(&self, gyro: &Vector3<f64>, dt: f64, noise: &NoiseModel) -> Result<EkfState> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::invalid(format!("prediction step dt must be positive, got {dt}")));
        }
        // Heading at mid-interval: exact chord direction on constant-rate arcs.
        let r = (self.orientation * so3_exp(&(gyro * (0.5 * dt)))).to_rotation_matrix().into_inner();
        let v_body = Vector3::new(self.forward_speed, 0.0, 0.0);
        let position = self.position + r * v_body * dt;
        let orientation = self.orientation * so3_exp(&(gyro * dt));

        let mut f = Cov7::identity();
        f.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-r * skew(&v_body) * dt));
        f.fixed_view_mut::<3, 1>(0, 6).copy_from(&(r.column(0) * dt));
        f.fixed_view_mut::<3, 3>(3, 3).copy_from(&so3_exp(&(-gyro * dt)).to_rotation_matrix().into_inner());
        let mut q = Cov7::zeros();
        for i in 0..3 {
            q[(i, i)] = noise.q_position * dt;
            q[(i + 3, i + 3)] = noise.q_attitude * dt;
        }
        q[(6, 6)] = noise.q_speed * dt;
        let mut covariance = f * self.covariance * f.transpose() + q;
        symmetrize(&mut covariance);
        let next = EkfState { position, orientation, forward_speed: self.forward_speed, covariance };
        next.check()?;
        Ok(next)
    }

    /// Attitude measurement update with measurement covariance `r_att`.
    pub fn update_orientation(&self, measured: &UnitQuaternion<f64>, r_att: &Matrix3<f64>) -> Result<EkfState> {
        let innovation = so3_log(&(self.orientation.inverse() * measured));
        let p = &self.covariance;
        // H = [0 I 0]
        let s = p.fixed_view::<3, 3>(3, 3) + r_att;
        let s_inv = s
            .try_inverse()
            .ok_or_else(|| Error::invalid("singular attitude innovation covariance"))?;
        let k: SMatrix<f64, 7, 3> = p.fixed_view::<7, 3>(0, 3) * s_inv;
        let dx: SVector<f64, 7> = k * innovation;
        let mut h = SMatrix::<f64, 3, 7>::zeros();
        h.fixed_view_mut::<3, 3>(0, 3).copy_from(&Matrix3::identity());
        let i_kh = Cov7::identity() - k * h;
        let mut covariance = i_kh * p * i_kh.transpose() + k * r_att * k.transpose();
        symmetrize(&mut covariance);
        let next = self.inject(&dx, covariance);
        next.check()?;
        Ok(next)
    }

    /// Scalar wheel-speed update. A zero variance sets the speed exactly.
    pub fn update_speed(&self, measured: f64, var: f64) -> Result<EkfState> {
        if !(var >= 0.0) || !measured.is_finite() {
            return Err(Error::invalid("speed measurement must be finite with non-negative variance"));
        }
        let p = &self.covariance;
        let s = p[(6, 6)] + var;
        if s <= 0.0 {
            // Both prior and measurement exact: take the measurement.
            let mut next = *self;
            next.forward_speed = measured;
            return Ok(next);
        }
        let k: SVector<f64, 7> = p.column(6) / s;
        let dx = k * (measured - self.forward_speed);
        let mut h = SMatrix::<f64, 1, 7>::zeros();
        h[(0, 6)] = 1.0;
        let i_kh = Cov7::identity() - k * h;
        let mut covariance = i_kh * p * i_kh.transpose() + k * k.transpose() * var;
        symmetrize(&mut covariance);
        let mut next = self.inject(&dx, covariance);
        if var == 0.0 {
            next.forward_speed = measured;
        }
        next.check()?;
        Ok(next)
    }

    fn inject(&self, dx: &SVector<f64, 7>, covariance: Cov7) -> EkfState {
        EkfState {
            position: self.position + dx.fixed_rows::<3>(0),
            orientation: self.orientation * so3_exp(&dx.fixed_rows::<3>(3).into_owned()),
            forward_speed: self.forward_speed + dx[6],
            covariance,
        }
    }

    fn check(&self) -> Result<()> {
        let m = min_eigenvalue(&self.covariance);
        if m < -1e-9 {
            return Err(Error::invalid(format!("EKF covariance lost positive semi-definiteness (λmin = {m})")));
        }
        Ok(())
    }
}

/// Relative motion between two filter states: `prev⁻¹ ∘ curr`.
pub fn prior_delta(prev: &EkfState, curr: &EkfState) -> Pose {
    prev.pose().inverse().compose(&curr.pose())
}

/// Runs the filter over timestamped sensor streams.
///
/// Samples sharing a stamp are applied IMU first, then wheel speed.
#[derive(Clone, Debug)]
pub struct MotionPrior {
    state: EkfState,
    stamp: Option<Timestamp>,
    gyro: Vector3<f64>,
    noise: NoiseModel,
    constant_speed: Option<f64>,
    attitude_initialized: bool,
}

impl MotionPrior {
    pub fn new(cfg: &EkfConfig) -> Self {
        let mut state = EkfState::default();
        if let Some(v) = cfg.constant_speed {
            state.forward_speed = v;
        }
        MotionPrior {
            state,
            stamp: None,
            gyro: Vector3::zeros(),
            noise: NoiseModel::from(cfg),
            constant_speed: cfg.constant_speed,
            attitude_initialized: false,
        }
    }

    pub fn state(&self) -> &EkfState {
        &self.state
    }

    fn advance(&mut self, t: Timestamp) -> Result<()> {
        match self.stamp {
            None => self.stamp = Some(t),
            Some(s) if t.0 > s.0 => {
                self.state = self.state.predict(&self.gyro, t.0 - s.0, &self.noise)?;
                self.stamp = Some(t);
            }
            Some(_) => {}
        }
        Ok(())
    }

    /// Consumes the samples of one frame and predicts up to `until`.
    pub fn process(&mut self, imu: &[ImuSample], odom: &[WheelOdomSample], until: Timestamp) -> Result<&EkfState> {
        let r_att = Matrix3::identity() * self.noise.r_attitude;
        let (mut i, mut j) = (0, 0);
        while i < imu.len() || j < odom.len() {
            let take_imu = match (imu.get(i), odom.get(j)) {
                (Some(a), Some(b)) => a.stamp.0 <= b.stamp.0,
                (Some(_), None) => true,
                _ => false,
            };
            if take_imu {
                let m = &imu[i];
                self.advance(m.stamp)?;
                if self.attitude_initialized {
                    self.state = self.state.update_orientation(&m.orientation, &r_att)?;
                } else {
                    // The first attitude sample sets the heading outright.
                    self.state.orientation = m.orientation;
                    self.state.covariance.fixed_view_mut::<3, 3>(3, 3).copy_from(&r_att);
                    self.attitude_initialized = true;
                }
                self.gyro = m.angular_velocity;
                i += 1;
            } else {
                let m = &odom[j];
                self.advance(m.stamp)?;
                if self.constant_speed.is_none() {
                    self.state = self.state.update_speed(m.forward_velocity, self.noise.r_speed)?;
                }
                j += 1;
            }
        }
        if let Some(v) = self.constant_speed {
            self.state = self.state.update_speed(v, self.noise.r_speed)?;
        }
        self.advance(until)?;
        Ok(&self.state)
    }
}
