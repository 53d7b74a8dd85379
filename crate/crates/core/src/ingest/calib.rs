//! `key = value` camera calibration files.
//!
//! Keys: `fx fy cx cy k1 k2 p1 p2 k3 width height` and `T_lidar_camera` given
//! as seven numbers `tx ty tz qw qx qy qz`. `#` starts a comment.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::{CameraModel, Pose};

const SCALAR_KEYS: [&str; 11] = ["fx", "fy", "cx", "cy", "k1", "k2", "p1", "p2", "k3", "width", "height"];

pub fn parse_calibration(text: &str, path: &Path) -> Result<CameraModel> {
    let mut scalars: HashMap<&str, f64> = HashMap::new();
    let mut extrinsic: Option<Pose> = None;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) =
            line.split_once('=').ok_or_else(|| Error::parse(path, line_no, "expected 'key = value'"))?;
        let key = key.trim();
        let nums: Vec<f64> = value
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| Error::parse(path, line_no, format!("'{t}' is not a number"))))
            .collect::<Result<_>>()?;
        if key == "T_lidar_camera" {
            if nums.len() != 7 {
                return Err(Error::parse(path, line_no, "T_lidar_camera needs 7 values: tx ty tz qw qx qy qz"));
            }
            let qn = (nums[3] * nums[3] + nums[4] * nums[4] + nums[5] * nums[5] + nums[6] * nums[6]).sqrt();
            if !(qn > 1e-9) {
                return Err(Error::parse(path, line_no, "T_lidar_camera quaternion has zero norm"));
            }
            extrinsic = Some(Pose::from_wxyz(nums[3], nums[4], nums[5], nums[6], Vector3::new(nums[0], nums[1], nums[2])));
        } else if let Some(k) = SCALAR_KEYS.iter().find(|k| **k == key) {
            if nums.len() != 1 {
                return Err(Error::parse(path, line_no, format!("{key} takes exactly one value")));
            }
            scalars.insert(k, nums[0]);
        } else {
            return Err(Error::parse(path, line_no, format!("unknown key '{key}'")));
        }
    }
    let last = text.lines().count().max(1);
    let get = |k: &str| scalars.get(k).copied().ok_or_else(|| Error::parse(path, last, format!("missing key '{k}'")));
    let dim = |k: &str| -> Result<u32> {
        let v = get(k)?;
        if v.fract() != 0.0 || v < 1.0 || v > f64::from(u32::MAX) {
            return Err(Error::parse(path, last, format!("{k} must be a positive integer")));
        }
        Ok(v as u32)
    };
    let cam = CameraModel {
        fx: get("fx")?,
        fy: get("fy")?,
        cx: get("cx")?,
        cy: get("cy")?,
        distortion: [get("k1")?, get("k2")?, get("p1")?, get("p2")?, get("k3")?],
        width: dim("width")?,
        height: dim("height")?,
        t_lidar_camera: extrinsic.ok_or_else(|| Error::parse(path, last, "missing key 'T_lidar_camera'"))?,
    };
    cam.validate().map_err(|e| Error::parse(path, last, e.to_string()))?;
    Ok(cam)
}

pub fn format_calibration(cam: &CameraModel) -> String {
    let mut s = String::new();
    let [k1, k2, p1, p2, k3] = cam.distortion;
    for (k, v) in [("fx", cam.fx), ("fy", cam.fy), ("cx", cam.cx), ("cy", cam.cy), ("k1", k1), ("k2", k2), ("p1", p1), ("p2", p2), ("k3", k3)] {
        let _ = writeln!(s, "{k} = {v:?}");
    }
    let _ = writeln!(s, "width = {}", cam.width);
    let _ = writeln!(s, "height = {}", cam.height);
    let t = cam.t_lidar_camera.translation();
    let [qw, qx, qy, qz] = cam.t_lidar_camera.wxyz();
    let _ = writeln!(s, "T_lidar_camera = {:?} {:?} {:?} {qw:?} {qx:?} {qy:?} {qz:?}", t.x, t.y, t.z);
    s
}
