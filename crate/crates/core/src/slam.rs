//! SLAM front end: EKF motion prior, scan-to-submap NDT registration and the
//! prior guard.

use crate::config::{EkfConfig, SlamConfig};
use crate::ekf::{prior_delta, EkfState, MotionPrior};
use crate::error::Result;
use crate::geometry::{PointCloud, Pose, Timestamp};
use crate::ingest::SyncedFrame;
use crate::ndt::{preprocess, register, RegistrationResult, Submap};

/// Outcome of one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameEstimate {
    pub index: usize,
    pub stamp: Timestamp,
    /// World ← sensor after registration (or the prior, if guarded).
    pub pose: Pose,
    /// Pose predicted from the previous estimate and the EKF motion.
    pub prior: Pose,
    pub registration: RegistrationResult,
    /// Range-gated, input-filtered scan in the sensor frame.
    pub scan: PointCloud,
    pub inserted: bool,
}

pub struct Frontend {
    cfg: SlamConfig,
    ekf: MotionPrior,
    submap: Submap,
    last_pose: Option<Pose>,
    last_ekf: Option<EkfState>,
    guarded: usize,
}

impl Frontend {
    pub fn new(slam: &SlamConfig, ekf: &EkfConfig) -> Self {
        Frontend {
            cfg: slam.clone(),
            ekf: MotionPrior::new(ekf),
            submap: Submap::new(slam),
            last_pose: None,
            last_ekf: None,
            guarded: 0,
        }
    }

    pub fn submap(&self) -> &Submap {
        &self.submap
    }

    /// Frames whose registration was rejected by the prior guard so far.
    pub fn guarded_frames(&self) -> usize {
        self.guarded
    }

    /// Runs the EKF over the frame's IMU and odometry samples, registers the
    /// scan from the predicted pose and, unless guarded, adds it to the submap.
    pub fn process(&mut self, frame: &SyncedFrame) -> Result<FrameEstimate> {
        let ekf = *self.ekf.process(&frame.imu, &frame.odom, frame.scan.stamp)?;
        let prior = match (&self.last_pose, &self.last_ekf) {
            (Some(p), Some(e)) => p.compose(&prior_delta(e, &ekf)),
            _ => Pose::identity(),
        };
        let scan = preprocess(&frame.scan.cloud, &self.cfg);
        let registration = register(&self.submap, &scan, &prior, &self.cfg);
        let pose = registration.pose;
        let inserted = !registration.rejected_by_guard;
        if inserted {
            self.submap.insert_scan(&scan, &pose);
        } else {
            self.guarded += 1;
            log::debug!("frame {} rejected by the prior guard", frame.index);
        }
        self.last_pose = Some(pose);
        self.last_ekf = Some(ekf);
        Ok(FrameEstimate { index: frame.index, stamp: frame.scan.stamp, pose, prior, registration, scan, inserted })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::LidarScan;
    use crate::ingest::SyncedFrame;
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn frame(index: usize, cloud: PointCloud) -> SyncedFrame {
        SyncedFrame {
            index,
            scan: LidarScan { stamp: Timestamp(index as f64 * 0.1), cloud },
            images: Vec::new(),
            imu: Vec::new(),
            odom: Vec::new(),
        }
    }

    #[test]
    fn corrupted_scans_never_move_far_from_the_prior() {
        let scene = crate::synth::Scene::box_canyon();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let clean = crate::synth::raycast_lidar(&scene, &Pose::from_xyz_yaw(0.0, 0.0, 1.0, 0.0), 16, 900, 60.0, 0.0, &mut rng).cloud;
        let mut fe = Frontend::new(&SlamConfig::default(), &EkfConfig::default());
        let first = fe.process(&frame(0, clean.clone())).unwrap();
        assert_eq!(first.pose, Pose::identity());
        for k in 1..6 {
            let mut pts = clean.points.clone();
            for p in pts.iter_mut() {
                if rng.random_bool(0.5) {
                    *p = Vector3::new(rng.random_range(-30.0..30.0), rng.random_range(-30.0..30.0), rng.random_range(-2.0..5.0));
                }
            }
            let before = fe.submap().len();
            let est = fe.process(&frame(k, PointCloud::new(pts))).unwrap();
            let step = (est.pose.translation() - est.prior.translation()).norm();
            assert!(step <= 0.5 || est.pose == est.prior);
            if est.registration.rejected_by_guard {
                assert_eq!(fe.submap().len(), before);
            }
        }
    }
}
