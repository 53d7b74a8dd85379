//! Deterministic synthetic worlds with exact ground truth.
//!
//! A [`Scene`] of axis-aligned boxes is observed along an analytic planar path
//! by a spinning LiDAR, optional pinhole cameras, an IMU and a wheel-speed
//! sensor. [`generate_dataset`] writes the result in the ingest layout plus a
//! `ground_truth.txt` trajectory sampled at the LiDAR stamps.

mod path;
mod scene;
mod sensors;

use std::fs;
use std::path::Path as FsPath;

use nalgebra::{UnitQuaternion, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::Trajectory;
use crate::geometry::{so3_exp, CameraModel, ImuSample, Pose, Timestamp, WheelOdomSample};
use crate::ingest::{self, DatasetManifest};
use crate::{par, ply};

pub use path::{Path, PathSample, PathSpec};
pub use scene::{ray_box, BoxObject, Ground, Hit, Scene};
pub use sensors::{beam_directions, camera_mount, raycast_lidar, render_camera, ELEVATION_LIMIT_DEG};

/// Gravity reported by the simulated accelerometer, m/s².
pub const GRAVITY: f64 = 9.81;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorRates {
    pub lidar: f64,
    pub camera: f64,
    pub imu: f64,
    pub odom: f64,
}

impl Default for SensorRates {
    fn default() -> Self {
        SensorRates { lidar: 10.0, camera: 2.0, imu: 100.0, odom: 50.0 }
    }
}

/// Standard deviations of the simulated sensor noise.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSpec {
    /// LiDAR range, m.
    pub range: f64,
    /// Gyro rate per axis, rad/s. Also used for the IMU attitude output, rad.
    pub gyro: f64,
    /// Wheel speed, m/s.
    pub odom: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LidarSpec {
    pub beams: usize,
    pub azimuth_steps: usize,
    pub max_range: f64,
}

impl Default for LidarSpec {
    fn default() -> Self {
        LidarSpec { beams: 16, azimuth_steps: 900, max_range: 100.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraSpec {
    pub name: String,
    pub width: u32,
    pub height: u32,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    #[serde(default)]
    pub distortion: [f64; 5],
    /// Viewing direction about the LiDAR `z` axis, degrees from `+x`.
    #[serde(default)]
    pub yaw_deg: f64,
    /// Optical center in the LiDAR frame, m.
    #[serde(default)]
    pub offset: [f64; 3],
}

impl CameraSpec {
    pub fn model(&self) -> CameraModel {
        CameraModel {
            fx: self.fx,
            fy: self.fy,
            cx: self.cx,
            cy: self.cy,
            distortion: self.distortion,
            width: self.width,
            height: self.height,
            t_lidar_camera: camera_mount(self.yaw_deg.to_radians(), Vector3::from(self.offset)),
        }
    }

    /// 320×240 camera with a 90° horizontal field of view and mild barrel
    /// distortion.
    pub fn wide(name: &str, yaw_deg: f64) -> Self {
        CameraSpec {
            name: name.to_string(),
            width: 320,
            height: 240,
            fx: 160.0,
            fy: 160.0,
            cx: 160.0,
            cy: 120.0,
            distortion: [-0.05, 0.01, 0.0005, -0.0005, 0.0],
            yaw_deg,
            offset: [0.0, 0.0, 0.0],
        }
    }
}

/// Motion along a path at constant speed plus the sensor suite observing it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectorySpec {
    pub path: PathSpec,
    /// Forward speed, m/s.
    pub speed: f64,
    /// s
    pub duration: f64,
    /// LiDAR origin above the ground plane, m.
    #[serde(default = "default_height")]
    pub sensor_height: f64,
    #[serde(default)]
    pub rates: SensorRates,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default)]
    pub lidar: LidarSpec,
    #[serde(default)]
    pub cameras: Vec<CameraSpec>,
    #[serde(default)]
    pub seed: u64,
}

fn default_height() -> f64 {
    1.0
}

/// Height of the canyon loop's rectangle so that the filleted loop is 200 m.
fn canyon_loop_height() -> f64 {
    let radius = 5.0;
    (200.0 + radius * (8.0 - 2.0 * std::f64::consts::PI)) / 2.0 - 60.0
}

impl TrajectorySpec {
    /// Closed 200 m loop through [`Scene::box_canyon`] at 2 m/s, starting and
    /// ending at the origin heading `+x`, with the acceptance noise levels and
    /// no cameras.
    pub fn canyon_loop(seed: u64) -> Self {
        let h = canyon_loop_height();
        TrajectorySpec {
            path: PathSpec::Polyline {
                points: vec![[0.0, 0.0], [30.0, 0.0], [30.0, h], [-30.0, h], [-30.0, 0.0]],
                closed: true,
                fillet_radius: 5.0,
            },
            speed: 2.0,
            duration: 100.0,
            sensor_height: 1.0,
            rates: SensorRates { camera: 0.0, ..Default::default() },
            noise: NoiseSpec { range: 0.02, gyro: 0.002, odom: 0.05 },
            lidar: LidarSpec::default(),
            cameras: Vec::new(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let r = &self.rates;
        if !(r.lidar > 0.0 && r.imu > 0.0 && r.odom > 0.0 && r.camera >= 0.0) {
            return Err(Error::invalid("sensor rates must be positive"));
        }
        if !(self.duration > 0.0) {
            return Err(Error::invalid("duration must be positive"));
        }
        if !(self.speed >= 0.0 && self.speed.is_finite()) {
            return Err(Error::invalid("speed must be finite and non-negative"));
        }
        let n = &self.noise;
        if !(n.range >= 0.0 && n.gyro >= 0.0 && n.odom >= 0.0) {
            return Err(Error::invalid("noise levels must be non-negative"));
        }
        if self.lidar.beams == 0 || self.lidar.azimuth_steps == 0 {
            return Err(Error::invalid("lidar needs at least one beam and one azimuth step"));
        }
        if !self.cameras.is_empty() && !(r.camera > 0.0) {
            return Err(Error::invalid("cameras configured with a zero camera rate"));
        }
        for c in &self.cameras {
            c.model().validate()?;
        }
        Path::new(&self.path)?;
        Ok(())
    }

    /// Stamps `k / rate` for every `k` with `k / rate < duration`, or up to
    /// and including `duration` when `inclusive`.
    pub fn stamps(&self, rate: f64, inclusive: bool) -> Vec<Timestamp> {
        let period = 1e9 / rate;
        let end = (self.duration * 1e9).round() as i64;
        let mut out = Vec::new();
        for k in 0.. {
            let ns = (k as f64 * period).round() as i64;
            if ns > end || (!inclusive && ns == end) {
                break;
            }
            out.push(Timestamp::from_nanos(ns));
        }
        out
    }
}

/// Ground-truth motion along a [`TrajectorySpec`].
#[derive(Clone, Debug)]
pub struct Motion {
    path: Path,
    speed: f64,
    height: f64,
}

impl Motion {
    pub fn new(spec: &TrajectorySpec) -> Result<Self> {
        Ok(Motion { path: Path::new(&spec.path)?, speed: spec.speed, height: spec.sensor_height })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn sample(&self, t: f64) -> PathSample {
        self.path.sample(self.speed * t)
    }

    /// World ← LiDAR at time `t` (s).
    pub fn pose(&self, t: f64) -> Pose {
        let s = self.sample(t);
        Pose::from_xyz_yaw(s.position.x, s.position.y, self.height, s.heading)
    }

    /// Body yaw rate, rad/s.
    pub fn yaw_rate(&self, t: f64) -> f64 {
        self.speed * self.sample(t).curvature
    }

    pub fn speed(&self) -> f64 {
        self.speed
    }
}

// Independent deterministic streams per sensor and frame.
fn rng_for(seed: u64, stream: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((stream << 48) ^ index);
    rng
}

const STREAM_LIDAR: u64 = 1;
const STREAM_IMU: u64 = 2;
const STREAM_ODOM: u64 = 3;

fn normal(sigma: f64) -> Normal<f64> {
    Normal::new(0.0, sigma).expect("validated non-negative sigma")
}

/// IMU samples at `rates.imu` over `[0, duration]`.
pub fn simulate_imu(spec: &TrajectorySpec, motion: &Motion) -> Vec<ImuSample> {
    let mut rng = rng_for(spec.seed, STREAM_IMU, 0);
    let n = normal(spec.noise.gyro);
    spec.stamps(spec.rates.imu, true)
        .into_iter()
        .map(|stamp| {
            let t = stamp.secs();
            let pose = motion.pose(t);
            let wz = motion.yaw_rate(t);
            let (gyro, att) = if spec.noise.gyro > 0.0 {
                let g = Vector3::new(n.sample(&mut rng), n.sample(&mut rng), wz + n.sample(&mut rng));
                let e = Vector3::new(n.sample(&mut rng), n.sample(&mut rng), n.sample(&mut rng));
                (g, *pose.rotation() * so3_exp(&e))
            } else {
                (Vector3::new(0.0, 0.0, wz), *pose.rotation())
            };
            ImuSample {
                stamp,
                orientation: UnitQuaternion::new_normalize(*att.quaternion()),
                angular_velocity: gyro,
                linear_acceleration: Vector3::new(0.0, motion.speed() * wz, GRAVITY),
            }
        })
        .collect()
}

pub fn simulate_odom(spec: &TrajectorySpec, motion: &Motion) -> Vec<WheelOdomSample> {
    let mut rng = rng_for(spec.seed, STREAM_ODOM, 0);
    let n = normal(spec.noise.odom);
    spec.stamps(spec.rates.odom, true)
        .into_iter()
        .map(|stamp| {
            let noise = if spec.noise.odom > 0.0 { n.sample(&mut rng) } else { 0.0 };
            WheelOdomSample { stamp, forward_velocity: motion.speed() + noise }
        })
        .collect()
}

/// LiDAR scan `index` of the dataset, in the sensor frame.
pub fn simulate_scan(scene: &Scene, spec: &TrajectorySpec, motion: &Motion, index: usize, stamp: Timestamp) -> crate::LidarScan {
    let mut rng = rng_for(spec.seed, STREAM_LIDAR, index as u64);
    let l = &spec.lidar;
    let mut scan = raycast_lidar(scene, &motion.pose(stamp.secs()), l.beams, l.azimuth_steps, l.max_range, spec.noise.range, &mut rng);
    scan.stamp = stamp;
    scan
}

/// Ground truth at the LiDAR stamps.
pub fn ground_truth(spec: &TrajectorySpec) -> Result<Trajectory> {
    let motion = Motion::new(spec)?;
    Trajectory::from_poses(spec.stamps(spec.rates.lidar, false).into_iter().map(|s| (s, motion.pose(s.secs()))).collect())
}

fn create_dir(p: &FsPath) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

/// Frames simulated per batch; bounds peak memory on long runs.
const BATCH: usize = 32;

/// Writes the full dataset under `out` and returns its manifest.
pub fn generate_dataset(scene: &Scene, spec: &TrajectorySpec, out: &FsPath) -> Result<DatasetManifest> {
    scene.validate()?;
    spec.validate()?;
    let motion = Motion::new(spec)?;
    create_dir(&out.join("lidar"))?;

    let lidar_stamps = spec.stamps(spec.rates.lidar, false);
    for (b, chunk) in lidar_stamps.chunks(BATCH).enumerate() {
        let scans = par::map_range(chunk.len(), |i| simulate_scan(scene, spec, &motion, b * BATCH + i, chunk[i]));
        for scan in scans {
            let path = out.join("lidar").join(format!("{}.ply", scan.stamp.to_file_stem()));
            ply::write_cloud(&scan.cloud, &path)?;
        }
    }

    let imu_path = out.join("imu.csv");
    fs::write(&imu_path, ingest::format_imu_csv(&simulate_imu(spec, &motion))).map_err(|e| Error::io(&imu_path, e))?;
    let odom_path = out.join("odom.csv");
    fs::write(&odom_path, ingest::format_odom_csv(&simulate_odom(spec, &motion))).map_err(|e| Error::io(&odom_path, e))?;

    if !spec.cameras.is_empty() {
        let cam_stamps = spec.stamps(spec.rates.camera, false);
        for cs in &spec.cameras {
            let dir = out.join("cameras").join(&cs.name);
            create_dir(&dir)?;
            let model = cs.model();
            let calib = dir.join("calibration.txt");
            fs::write(&calib, ingest::format_calibration(&model)).map_err(|e| Error::io(&calib, e))?;
            for chunk in cam_stamps.chunks(BATCH) {
                let images = par::map(chunk, |s| render_camera(scene, &motion.pose(s.secs()), &model));
                for (stamp, img) in chunk.iter().zip(images) {
                    ingest::write_png(&img, &dir.join(format!("{}.png", stamp.to_file_stem())))?;
                }
            }
        }
    }

    ground_truth(spec)?.save(&out.join("ground_truth.txt"))?;
    ingest::load_manifest(out)
}

/// Scene and trajectory as read from a synth config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub scene: Scene,
    pub trajectory: TrajectorySpec,
}

impl SynthConfig {
    pub fn canyon_loop(seed: u64) -> Self {
        SynthConfig { scene: Scene::box_canyon(), trajectory: TrajectorySpec::canyon_loop(seed) }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let c: SynthConfig = toml::from_str(text).map_err(|e| Error::invalid(format!("synth config: {e}")))?;
        c.scene.validate()?;
        c.trajectory.validate()?;
        Ok(c)
    }

    pub fn load(path: &FsPath) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        SynthConfig::from_toml_str(&text).map_err(|e| match e {
            Error::Invalid(msg) => Error::format(path, msg),
            e => e,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("synth config serializes")
    }
}
