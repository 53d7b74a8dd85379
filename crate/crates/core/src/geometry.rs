//! Shared geometric and sensor-data types.
//!
//! Every stage of the pipeline trades in [`Pose`] values (SE(3) with a unit
//! quaternion stored with `w >= 0`) and [`PointCloud`]s. Distances are meters,
//! angles radians and stamps seconds, all `f64`.

use std::cmp::Ordering;
use std::fmt;
use std::ops::Mul;

use nalgebra::{Matrix3, Matrix4, Quaternion, UnitQuaternion, Vector3, Vector6};

use crate::error::{Error, Result};

/// 8-bit RGB triplet.
pub type Rgb = [u8; 3];

/// Seconds since the dataset epoch.
#[derive(Clone, Copy, Debug, Default, PartialEq, PartialOrd)]
pub struct Timestamp(pub f64);

impl Timestamp {
    pub fn from_nanos(nanos: i64) -> Self {
        Timestamp(nanos as f64 / 1e9)
    }

    /// Nearest integer nanosecond count.
    pub fn as_nanos(self) -> i64 {
        (self.0 * 1e9).round() as i64
    }

    pub fn secs(self) -> f64 {
        self.0
    }

    /// `<seconds>.<nanos>` with nine fractional digits, the form used in file
    /// names and CSV stamp columns.
    pub fn to_file_stem(self) -> String {
        let ns = self.as_nanos();
        format!("{}.{:09}", ns.div_euclid(1_000_000_000), ns.rem_euclid(1_000_000_000))
    }

    /// Inverse of [`Timestamp::to_file_stem`]; also accepts plain decimal seconds.
    pub fn parse(s: &str) -> Option<Self> {
        let s = s.trim();
        let (sec, frac) = match s.split_once('.') {
            Some((a, b)) => (a, b),
            None => (s, ""),
        };
        if sec.is_empty() || !sec.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        if !frac.bytes().all(|b| b.is_ascii_digit()) || frac.len() > 9 {
            // Longer fractions are not nanosecond stamps; fall back to a float parse.
            return s.parse::<f64>().ok().filter(|v| v.is_finite() && *v >= 0.0).map(Timestamp);
        }
        let sec: i64 = sec.parse().ok()?;
        let mut nanos: i64 = 0;
        for (i, b) in frac.bytes().enumerate() {
            nanos += i64::from(b - b'0') * 10_i64.pow(8 - i as u32);
        }
        Some(Timestamp::from_nanos(sec * 1_000_000_000 + nanos))
    }

    pub fn total_cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_file_stem())
    }
}

/// Rigid transform. `rotation` is kept normalized with a non-negative scalar
/// part, so two poses describing the same transform compare equal bitwise once
/// built through [`Pose::new`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    rotation: UnitQuaternion<f64>,
    translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Pose::identity()
    }
}

// Quaternions already unit to within rounding keep their bits, so values
// written with shortest round-trip formatting read back identically.
fn canonical(q: Quaternion<f64>) -> UnitQuaternion<f64> {
    let q = if q.w < 0.0 { -q } else { q };
    if (q.norm_squared() - 1.0).abs() <= 4.0 * f64::EPSILON {
        UnitQuaternion::new_unchecked(q)
    } else {
        UnitQuaternion::from_quaternion(q)
    }
}

impl Pose {
    pub fn identity() -> Self {
        Pose { rotation: UnitQuaternion::identity(), translation: Vector3::zeros() }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Pose { rotation: canonical(rotation.into_inner()), translation }
    }

    /// Builds a pose from a raw `(w, x, y, z)` quaternion, normalizing it.
    pub fn from_wxyz(w: f64, x: f64, y: f64, z: f64, translation: Vector3<f64>) -> Self {
        Pose { rotation: canonical(Quaternion::new(w, x, y, z)), translation }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Pose { rotation: UnitQuaternion::identity(), translation }
    }

    pub fn from_rotation(rotation: UnitQuaternion<f64>) -> Self {
        Pose::new(rotation, Vector3::zeros())
    }

    /// Planar pose: yaw about +z and a translation.
    pub fn from_xyz_yaw(x: f64, y: f64, z: f64, yaw: f64) -> Self {
        Pose::new(UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw), Vector3::new(x, y, z))
    }

    pub fn rotation(&self) -> &UnitQuaternion<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    /// `(w, x, y, z)` of the canonical quaternion.
    pub fn wxyz(&self) -> [f64; 4] {
        let q = self.rotation.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    pub fn inverse(&self) -> Pose {
        let r = self.rotation.inverse();
        Pose::new(r, -(r * self.translation))
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose::new(self.rotation * other.rotation, self.rotation * other.translation + self.translation)
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation_matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Rotation angle in `[0, π]`.
    pub fn angle(&self) -> f64 {
        so3_log(&self.rotation).norm()
    }

    /// Z-axis component of the ZYX Euler decomposition.
    pub fn yaw(&self) -> f64 {
        self.rotation.euler_angles().2
    }

    /// `(rotation vector, translation)`; inverse of [`Pose::exp`].
    pub fn log(&self) -> Vector6<f64> {
        let w = so3_log(&self.rotation);
        Vector6::new(w.x, w.y, w.z, self.translation.x, self.translation.y, self.translation.z)
    }

    pub fn exp(xi: &Vector6<f64>) -> Pose {
        Pose::new(so3_exp(&Vector3::new(xi[0], xi[1], xi[2])), Vector3::new(xi[3], xi[4], xi[5]))
    }

    /// Linear interpolation of translation and slerp of rotation, `s ∈ [0,1]`.
    pub fn interpolate(&self, other: &Pose, s: f64) -> Pose {
        let delta = self.rotation.inverse() * other.rotation;
        let r = self.rotation * so3_exp(&(so3_log(&delta) * s));
        Pose::new(r, self.translation + (other.translation - self.translation) * s)
    }

    pub fn is_finite(&self) -> bool {
        self.translation.iter().all(|v| v.is_finite())
            && self.rotation.coords.iter().all(|v| v.is_finite())
    }
}

impl Mul for Pose {
    type Output = Pose;
    fn mul(self, rhs: Pose) -> Pose {
        self.compose(&rhs)
    }
}

impl Mul for &Pose {
    type Output = Pose;
    fn mul(self, rhs: &Pose) -> Pose {
        self.compose(rhs)
    }
}

/// Rotation vector of a unit quaternion.
///
/// At exactly π (`w == 0` after canonicalization) the axis sign is chosen so
/// that its first non-zero component is positive.
pub fn so3_log(q: &UnitQuaternion<f64>) -> Vector3<f64> {
    let q = q.quaternion();
    let (mut w, mut v) = (q.w, q.imag());
    if w < 0.0 {
        w = -w;
        v = -v;
    }
    let n = v.norm();
    if n < 1e-10 {
        // atan2(n, w) / n → 1/w as n → 0
        return v * (2.0 / w);
    }
    if w == 0.0 {
        let first = v.iter().copied().find(|c| *c != 0.0).unwrap_or(1.0);
        if first < 0.0 {
            v = -v;
        }
    }
    v * (2.0 * n.atan2(w) / n)
}

pub fn so3_exp(w: &Vector3<f64>) -> UnitQuaternion<f64> {
    let theta = w.norm();
    let half = 0.5 * theta;
    let k = if theta < 1e-8 { 0.5 - theta * theta / 48.0 } else { half.sin() / theta };
    canonical(Quaternion::new(half.cos(), w.x * k, w.y * k, w.z * k))
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Points with optional per-point colors (same length when present).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
    pub colors: Option<Vec<Rgb>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vector3<f64>>) -> Self {
        PointCloud { points, colors: None }
    }

    pub fn with_colors(points: Vec<Vector3<f64>>, colors: Vec<Rgb>) -> Result<Self> {
        if colors.len() != points.len() {
            return Err(Error::invalid(format!(
                "color count {} does not match point count {}",
                colors.len(),
                points.len()
            )));
        }
        Ok(PointCloud { points, colors: Some(colors) })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Drops points with a NaN or infinite coordinate.
    pub fn retain_finite(&mut self) {
        self.retain(|p| p.iter().all(|c| c.is_finite()));
    }

    pub fn retain(&mut self, mut keep: impl FnMut(&Vector3<f64>) -> bool) {
        let mask: Vec<bool> = self.points.iter().map(&mut keep).collect();
        self.retain_mask(&mask);
    }

    pub fn retain_mask(&mut self, mask: &[bool]) {
        let mut i = 0;
        self.points.retain(|_| {
            i += 1;
            mask[i - 1]
        });
        if let Some(colors) = &mut self.colors {
            let mut i = 0;
            colors.retain(|_| {
                i += 1;
                mask[i - 1]
            });
        }
    }

    pub fn centroid(&self) -> Option<Vector3<f64>> {
        if self.points.is_empty() {
            return None;
        }
        let sum = self.points.iter().fold(Vector3::zeros(), |acc, p| acc + p);
        Some(sum / self.points.len() as f64)
    }
}

/// Applies `pose` to every point; colors are carried through unchanged.
pub fn transform_cloud(pose: &Pose, cloud: &PointCloud) -> PointCloud {
    let r = pose.rotation_matrix();
    let t = *pose.translation();
    PointCloud { points: cloud.points.iter().map(|p| r * p + t).collect(), colors: cloud.colors.clone() }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LidarScan {
    pub stamp: Timestamp,
    pub cloud: PointCloud,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImuSample {
    pub stamp: Timestamp,
    pub orientation: UnitQuaternion<f64>,
    pub angular_velocity: Vector3<f64>,
    pub linear_acceleration: Vector3<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WheelOdomSample {
    pub stamp: Timestamp,
    pub forward_velocity: f64,
}

/// Pinhole camera with radial-tangential distortion `[k1, k2, p1, p2, k3]`.
#[derive(Clone, Debug, PartialEq)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub distortion: [f64; 5],
    pub width: u32,
    pub height: u32,
    /// Maps LiDAR-frame coordinates into the camera frame.
    pub t_lidar_camera: Pose,
}

impl CameraModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::invalid("focal lengths must be positive"));
        }
        if !(self.cx > 0.0 && self.cx < f64::from(self.width)) {
            return Err(Error::invalid("cx outside (0, width)"));
        }
        if !(self.cy > 0.0 && self.cy < f64::from(self.height)) {
            return Err(Error::invalid("cy outside (0, height)"));
        }
        if !self.distortion.iter().all(|k| k.is_finite()) {
            return Err(Error::invalid("distortion coefficients must be finite"));
        }
        Ok(())
    }

    pub fn has_distortion(&self) -> bool {
        self.distortion.iter().any(|k| *k != 0.0)
    }

    /// Applies the radial-tangential model to normalized image coordinates.
    pub fn distort(&self, x: f64, y: f64) -> (f64, f64) {
        let [k1, k2, p1, p2, k3] = self.distortion;
        let r2 = x * x + y * y;
        let radial = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3));
        let xd = x * radial + 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x);
        let yd = y * radial + p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y;
        (xd, yd)
    }

    /// Fixed-point inversion of [`CameraModel::distort`].
    pub fn undistort_normalized(&self, xd: f64, yd: f64) -> (f64, f64) {
        if !self.has_distortion() {
            return (xd, yd);
        }
        let (mut x, mut y) = (xd, yd);
        for _ in 0..50 {
            let (dx, dy) = self.distort(x, y);
            let (ex, ey) = (dx - xd, dy - yd);
            x -= ex;
            y -= ey;
            if ex.abs() < 1e-14 && ey.abs() < 1e-14 {
                break;
            }
        }
        (x, y)
    }
}

/// Row-major RGB image.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub stamp: Timestamp,
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<Rgb>,
}

impl Image {
    pub fn new(stamp: Timestamp, width: u32, height: u32, fill: Rgb) -> Self {
        Image { stamp, width, height, pixels: vec![fill; width as usize * height as usize] }
    }

    pub fn get(&self, u: u32, v: u32) -> Rgb {
        self.pixels[v as usize * self.width as usize + u as usize]
    }

    pub fn set(&mut self, u: u32, v: u32, c: Rgb) {
        let w = self.width as usize;
        self.pixels[v as usize * w + u as usize] = c;
    }

    pub fn validate(&self) -> Result<()> {
        if self.pixels.len() != self.width as usize * self.height as usize {
            return Err(Error::invalid("pixel buffer length does not match width × height"));
        }
        Ok(())
    }
}

/// Colored triangle mesh.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Vector3<f64>>,
    pub vertex_colors: Vec<Rgb>,
    pub triangles: Vec<[u32; 3]>,
}

impl TriangleMesh {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.vertex_colors.len() != self.vertices.len() {
            return Err(Error::invalid("vertex color count does not match vertex count"));
        }
        let n = self.vertices.len() as u32;
        for t in &self.triangles {
            if t.iter().any(|&i| i >= n) {
                return Err(Error::invalid("triangle index out of range"));
            }
            if t[0] == t[1] && t[1] == t[2] {
                return Err(Error::invalid("degenerate triangle"));
            }
        }
        Ok(())
    }

    /// Appends `other`, offsetting its indices.
    pub fn append(&mut self, other: &TriangleMesh) {
        let base = self.vertices.len() as u32;
        self.vertices.extend_from_slice(&other.vertices);
        self.vertex_colors.extend_from_slice(&other.vertex_colors);
        self.triangles.extend(other.triangles.iter().map(|t| [t[0] + base, t[1] + base, t[2] + base]));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn assert_pose_eq(a: &Pose, b: &Pose, tol: f64) {
        let d = a.inverse().compose(b);
        assert!(d.translation().norm() < tol, "translation differs: {a:?} vs {b:?}");
        assert!(d.angle() < tol, "rotation differs: {a:?} vs {b:?}");
    }

    #[test]
    fn compose_identity_and_inverse() {
        let id = Pose::identity();
        assert_eq!(id.compose(&id), id);
        let a = Pose::from_wxyz(0.3, -0.2, 0.9, 0.1, Vector3::new(1.0, -2.0, 0.5));
        assert_pose_eq(&a.compose(&a.inverse()), &id, 1e-9);
    }

    #[test]
    fn compose_matches_homogeneous_product() {
        let a = Pose::from_xyz_yaw(1.0, 0.0, 0.0, FRAC_PI_2);
        let b = Pose::from_translation(Vector3::new(1.0, 0.0, 0.0));
        let c = a.compose(&b);
        let m = a.to_homogeneous() * b.to_homogeneous();
        assert_relative_eq!(c.to_homogeneous(), m, epsilon = 1e-12);
        assert_relative_eq!(*c.translation(), Vector3::new(1.0, 1.0, 0.0), epsilon = 1e-12);
        assert_relative_eq!(c.yaw(), FRAC_PI_2, epsilon = 1e-12);
    }

    #[test]
    fn log_examples() {
        assert_eq!(Pose::identity().log(), Vector6::zeros());
        let t = Pose::from_translation(Vector3::new(2.0, 0.0, 0.0));
        assert_eq!(t.log(), Vector6::new(0.0, 0.0, 0.0, 2.0, 0.0, 0.0));
        // Rodrigues: R(z, θ) = [[c,-s,0],[s,c,0],[0,0,1]]; θ = acos((tr R - 1)/2), axis from skew part.
        let yaw = Pose::from_xyz_yaw(0.0, 0.0, 0.0, FRAC_PI_2);
        let r = yaw.rotation_matrix();
        let theta = ((r.trace() - 1.0) / 2.0).acos();
        let axis = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)])
            / (2.0 * theta.sin());
        let expected = axis * theta;
        let l = yaw.log();
        assert_relative_eq!(Vector3::new(l[0], l[1], l[2]), expected, epsilon = 1e-12);
        assert_relative_eq!(l[2], FRAC_PI_2, epsilon = 1e-12);
    }

    #[test]
    fn log_at_pi_picks_positive_axis() {
        let p = Pose::from_wxyz(0.0, 0.0, 0.0, -1.0, Vector3::zeros());
        let l = p.log();
        assert_relative_eq!(l[2], PI, epsilon = 1e-12);
        let back = Pose::exp(&l);
        assert_pose_eq(&back, &p, 1e-9);
    }

    #[test]
    fn canonical_quaternion_has_nonnegative_w() {
        let p = Pose::from_wxyz(-0.5, 0.5, 0.5, 0.5, Vector3::zeros());
        assert!(p.wxyz()[0] >= 0.0);
        let q = Pose::from_wxyz(0.5, -0.5, -0.5, -0.5, Vector3::zeros());
        assert_eq!(p, q);
    }

    #[test]
    fn transform_cloud_examples() {
        let c = PointCloud::with_colors(vec![Vector3::new(1.0, 1.0, 1.0)], vec![[1, 2, 3]]).unwrap();
        assert_eq!(transform_cloud(&Pose::identity(), &c), c);
        let up = transform_cloud(&Pose::from_translation(Vector3::new(0.0, 0.0, 5.0)), &c);
        assert_eq!(up.points[0], Vector3::new(1.0, 1.0, 6.0));
        assert_eq!(up.colors, c.colors);
        let flip = transform_cloud(
            &Pose::from_xyz_yaw(0.0, 0.0, 0.0, PI),
            &PointCloud::new(vec![Vector3::new(1.0, 2.0, 3.0)]),
        );
        assert_relative_eq!(flip.points[0], Vector3::new(-1.0, -2.0, 3.0), epsilon = 1e-12);
    }

    #[test]
    fn timestamp_stem_roundtrip() {
        let t = Timestamp::from_nanos(12_300_000_001);
        assert_eq!(t.to_file_stem(), "12.300000001");
        assert_eq!(Timestamp::parse("12.300000001"), Some(t));
        assert_eq!(Timestamp::parse("0.1"), Some(Timestamp::from_nanos(100_000_000)));
        assert_eq!(Timestamp::parse("abc"), None);
    }

    #[test]
    fn cloud_color_length_checked() {
        assert!(PointCloud::with_colors(vec![Vector3::zeros()], vec![]).is_err());
    }

    #[test]
    fn mesh_validation() {
        let mut m = TriangleMesh {
            vertices: vec![Vector3::zeros(); 3],
            vertex_colors: vec![[0; 3]; 3],
            triangles: vec![[0, 1, 2]],
        };
        assert!(m.validate().is_ok());
        m.triangles.push([1, 1, 1]);
        assert!(m.validate().is_err());
        m.triangles[1] = [0, 1, 3];
        assert!(m.validate().is_err());
    }

    fn arb_pose() -> impl Strategy<Value = Pose> {
        (prop::array::uniform3(-3.0..3.0f64), -1.0..1.0f64, prop::array::uniform3(-50.0..50.0f64)).prop_map(
            |(axis, s, t)| {
                let w = Vector3::from(axis);
                Pose::new(so3_exp(&(w * s)), Vector3::from(t))
            },
        )
    }

    proptest! {
        #[test]
        fn compose_is_associative(a in arb_pose(), b in arb_pose(), c in arb_pose()) {
            let l = a.compose(&b).compose(&c);
            let r = a.compose(&b.compose(&c));
            prop_assert!((l.translation() - r.translation()).norm() < 1e-9);
            prop_assert!(l.rotation().angle_to(r.rotation()) < 1e-9);
        }

        #[test]
        fn transform_then_inverse_restores(p in arb_pose(), pts in prop::collection::vec(prop::array::uniform3(-100.0..100.0f64), 1..20)) {
            let c = PointCloud::new(pts.into_iter().map(Vector3::from).collect());
            let back = transform_cloud(&p, &transform_cloud(&p.inverse(), &c));
            for (a, b) in back.points.iter().zip(&c.points) {
                prop_assert!((a - b).norm() < 1e-9);
            }
        }

        #[test]
        fn log_exp_roundtrip(axis in prop::array::uniform3(-1.0..1.0f64), angle in 1e-6..(PI - 1e-3), t in prop::array::uniform3(-10.0..10.0f64)) {
            let a = Vector3::from(axis);
            prop_assume!(a.norm() > 1e-3);
            let p = Pose::new(so3_exp(&(a.normalize() * angle)), Vector3::from(t));
            let q = Pose::exp(&p.log());
            prop_assert!((q.translation() - p.translation()).norm() < 1e-9);
            prop_assert!(q.rotation().angle_to(p.rotation()) < 1e-9);
        }
    }
}
