use nalgebra::{UnitQuaternion, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::geometry::{CameraModel, Image, LidarScan, PointCloud, Pose, Timestamp};
use crate::par;
use crate::synth::scene::Scene;

/// Half the vertical field of view of the simulated spinning LiDAR.
pub const ELEVATION_LIMIT_DEG: f64 = 15.0;

/// Unit beam directions in the sensor frame, azimuth-major.
pub fn beam_directions(beams: usize, azimuth_steps: usize) -> Vec<Vector3<f64>> {
    let lim = ELEVATION_LIMIT_DEG.to_radians();
    let mut dirs = Vec::with_capacity(beams * azimuth_steps);
    for a in 0..azimuth_steps {
        let az = 2.0 * std::f64::consts::PI * a as f64 / azimuth_steps as f64;
        for b in 0..beams {
            let el = if beams == 1 { 0.0 } else { -lim + 2.0 * lim * b as f64 / (beams - 1) as f64 };
            dirs.push(Vector3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin()));
        }
    }
    dirs
}

/// Spinning-LiDAR scan from `pose` (world ← sensor). Returned points are in the
/// sensor frame; misses and noisy ranges beyond `max_range` are dropped.
pub fn raycast_lidar<R: Rng>(
    scene: &Scene,
    pose: &Pose,
    beams: usize,
    azimuth_steps: usize,
    max_range: f64,
    range_sigma: f64,
    rng: &mut R,
) -> LidarScan {
    assert!(beams >= 1, "at least one beam is required");
    let dirs = beam_directions(beams, azimuth_steps);
    let r = pose.rotation_matrix();
    let origin = *pose.translation();
    let hits = par::map(&dirs, |d| scene.cast(&origin, &(r * d)).map(|h| h.distance).filter(|t| *t <= max_range));
    let noise = Normal::new(0.0, range_sigma.max(0.0)).expect("finite range sigma");
    let mut points = Vec::with_capacity(hits.len());
    for (d, hit) in dirs.iter().zip(&hits) {
        let Some(t) = hit else { continue };
        // Drawn only for hits so the noise sequence does not depend on misses elsewhere.
        let range = if range_sigma > 0.0 { t + noise.sample(rng) } else { *t };
        if range > 0.0 && range <= max_range {
            points.push(d * range);
        }
    }
    LidarScan { stamp: Timestamp(0.0), cloud: PointCloud::new(points) }
}

/// Flat-shaded render of `scene` from a camera rigidly attached to the LiDAR
/// at `pose`. Pixel `(u, v)` samples the ray through its center `(u + ½, v + ½)`
/// after inverting the lens distortion; misses are black.
pub fn render_camera(scene: &Scene, pose: &Pose, cam: &CameraModel) -> Image {
    let world_cam = pose.compose(&cam.t_lidar_camera.inverse());
    let r = world_cam.rotation_matrix();
    let origin = *world_cam.translation();
    let (w, h) = (cam.width as usize, cam.height as usize);
    let pixels = par::map_range(w * h, |i| {
        let (u, v) = ((i % w) as f64 + 0.5, (i / w) as f64 + 0.5);
        let (x, y) = cam.undistort_normalized((u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy);
        let d = (r * Vector3::new(x, y, 1.0)).normalize();
        scene.cast(&origin, &d).map_or([0, 0, 0], |hit| hit.color)
    });
    Image { stamp: Timestamp(0.0), width: cam.width, height: cam.height, pixels }
}

/// LiDAR → camera transform for a camera looking along the LiDAR's `+x`
/// rotated by `yaw` about `+z`, with its center at `offset` in the LiDAR frame.
/// Camera axes: `x` right, `y` down, `z` forward.
pub fn camera_mount(yaw: f64, offset: Vector3<f64>) -> Pose {
    // Rows are the camera axes in LiDAR coordinates for yaw = 0.
    let base = nalgebra::Matrix3::new(0.0, -1.0, 0.0, 0.0, 0.0, -1.0, 1.0, 0.0, 0.0);
    let rot = nalgebra::Rotation3::from_matrix_unchecked(base) * nalgebra::Rotation3::from_axis_angle(&Vector3::z_axis(), -yaw);
    let q = UnitQuaternion::from_rotation_matrix(&rot);
    Pose::new(q, -(q * offset))
}
