use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::{Pose, Timestamp};

/// Time-ordered poses with strictly increasing stamps.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    poses: Vec<(Timestamp, Pose)>,
}

impl Trajectory {
    pub fn new() -> Self {
        Trajectory::default()
    }

    pub fn from_poses(poses: Vec<(Timestamp, Pose)>) -> Result<Self> {
        for w in poses.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(Error::invalid(format!("trajectory stamps not increasing at {}", w[1].0)));
            }
        }
        Ok(Trajectory { poses })
    }

    pub fn push(&mut self, stamp: Timestamp, pose: Pose) -> Result<()> {
        if let Some((last, _)) = self.poses.last() {
            if stamp <= *last {
                return Err(Error::invalid(format!("trajectory stamp {stamp} not after {last}")));
            }
        }
        self.poses.push((stamp, pose));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn poses(&self) -> &[(Timestamp, Pose)] {
        &self.poses
    }

    pub fn stamps(&self) -> impl Iterator<Item = Timestamp> + '_ {
        self.poses.iter().map(|(t, _)| *t)
    }

    pub fn translations(&self) -> Vec<Vector3<f64>> {
        self.poses.iter().map(|(_, p)| *p.translation()).collect()
    }

    /// Path length along the translations.
    pub fn length(&self) -> f64 {
        self.poses.windows(2).map(|w| (w[1].1.translation() - w[0].1.translation()).norm()).sum()
    }

    /// Applies `t ∘ pose` to every pose.
    pub fn transformed(&self, t: &Pose) -> Trajectory {
        Trajectory { poses: self.poses.iter().map(|(s, p)| (*s, t.compose(p))).collect() }
    }

    /// Lines `stamp tx ty tz qw qx qy qz`, nine decimals.
    pub fn to_text(&self) -> String {
        let mut s = String::with_capacity(self.poses.len() * 96);
        for (stamp, p) in &self.poses {
            let t = p.translation();
            let [w, x, y, z] = p.wxyz();
            let _ = writeln!(s, "{stamp} {:.9} {:.9} {:.9} {w:.9} {x:.9} {y:.9} {z:.9}", t.x, t.y, t.z);
        }
        s
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut traj = Trajectory::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 8 {
                return Err(Error::parse(path, i + 1, format!("expected 8 fields, found {}", f.len())));
            }
            let stamp = Timestamp::parse(f[0]).ok_or_else(|| Error::parse(path, i + 1, "bad stamp"))?;
            let mut v = [0.0; 7];
            for (k, s) in f[1..].iter().enumerate() {
                v[k] = s
                    .parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| Error::parse(path, i + 1, format!("'{s}' is not a finite number")))?;
            }
            let pose = Pose::from_wxyz(v[3], v[4], v[5], v[6], Vector3::new(v[0], v[1], v[2]));
            traj.push(stamp, pose).map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
        }
        Ok(traj)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Trajectory::parse(&text, path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}
