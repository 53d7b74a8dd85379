//! Voxel-hashed truncated signed distance fusion of colored scans.

mod raycast;

use std::collections::BTreeSet;

use nalgebra::Vector3;
use rustc_hash::{FxHashMap as HashMap, FxHashSet as HashSet};

use crate::colorize::ColoredScan;
use crate::config::{IntegrationMethod, TsdfConfig};
use crate::error::{Error, Result};
use crate::geometry::{Pose, Rgb};
use crate::par;
use crate::spatial::{voxel_key, VoxelKey};

pub use raycast::traverse;

/// Fast integration stops a ray in free space after this many consecutive
/// voxels that an earlier ray of the same scan already updated.
pub const MAX_CONSECUTIVE_COLLISIONS: usize = 2;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TsdfVoxel {
    /// Signed distance, positive on the sensor side, within ±truncation.
    pub distance: f64,
    pub weight: f64,
    /// Running average in 0..=255 per channel.
    pub color: [f64; 3],
    /// Weight of the color average; uncolored observations do not add to it.
    pub color_weight: f64,
}

impl TsdfVoxel {
    pub fn is_observed(&self) -> bool {
        self.weight > 0.0
    }

    /// Color rounded half up.
    pub fn rgb(&self) -> Rgb {
        self.color.map(|c| (c + 0.5).floor().clamp(0.0, 255.0) as u8)
    }

    fn update(&mut self, d: f64, w: f64, color: Option<[f64; 3]>, max_weight: f64) {
        let total = self.weight + w;
        self.distance = (self.weight * self.distance + w * d) / total;
        self.weight = total.min(max_weight);
        if let Some(c) = color {
            let cw = self.color_weight + w;
            for k in 0..3 {
                self.color[k] = (self.color_weight * self.color[k] + w * c[k]) / cw;
            }
            self.color_weight = cw.min(max_weight);
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VoxelBlock {
    pub index: VoxelKey,
    /// `x + n·(y + n·z)` ordering of local voxel indices.
    pub voxels: Vec<TsdfVoxel>,
}

/// One voxel update produced by ray casting.
#[derive(Clone, Copy, Debug)]
struct Observation {
    voxel: VoxelKey,
    distance: f64,
    weight: f64,
    color: Option<[f64; 3]>,
}

/// A ray to integrate: world-frame surface point with its weight and color.
#[derive(Clone, Copy, Debug)]
struct Ray {
    point: Vector3<f64>,
    weight: f64,
    color: Option<[f64; 3]>,
}

#[derive(Clone, Debug)]
pub struct TsdfVolume {
    cfg: TsdfConfig,
    voxel_size: f64,
    inv_voxel_size: f64,
    truncation: f64,
    vps: i64,
    blocks: HashMap<VoxelKey, VoxelBlock>,
    dirty: BTreeSet<VoxelKey>,
}

impl TsdfVolume {
    pub fn new(cfg: &TsdfConfig) -> Result<Self> {
        if !(cfg.voxel_size > 0.0) {
            return Err(Error::invalid("tsdf voxel_size must be positive"));
        }
        if cfg.voxels_per_side == 0 || !cfg.voxels_per_side.is_power_of_two() {
            return Err(Error::invalid("tsdf voxels_per_side must be a power of two"));
        }
        let truncation = cfg.truncation_distance();
        if !(truncation > 0.0) {
            return Err(Error::invalid("tsdf truncation must be positive"));
        }
        if !(cfg.min_ray_length >= 0.0 && cfg.max_ray_length > cfg.min_ray_length) {
            return Err(Error::invalid("tsdf ray lengths must satisfy 0 ≤ min < max"));
        }
        if !(cfg.max_weight > 0.0) {
            return Err(Error::invalid("tsdf max_weight must be positive"));
        }
        Ok(TsdfVolume {
            cfg: cfg.clone(),
            voxel_size: cfg.voxel_size,
            inv_voxel_size: 1.0 / cfg.voxel_size,
            truncation,
            vps: cfg.voxels_per_side as i64,
            blocks: HashMap::default(),
            dirty: BTreeSet::new(),
        })
    }

    pub fn config(&self) -> &TsdfConfig {
        &self.cfg
    }

    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }

    pub fn truncation(&self) -> f64 {
        self.truncation
    }

    pub fn voxels_per_side(&self) -> usize {
        self.vps as usize
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// Block indices in ascending order.
    pub fn block_indices(&self) -> Vec<VoxelKey> {
        let mut keys: Vec<VoxelKey> = self.blocks.keys().copied().collect();
        keys.sort_unstable();
        keys
    }

    pub fn block(&self, index: &VoxelKey) -> Option<&VoxelBlock> {
        self.blocks.get(index)
    }

    /// Global index of the voxel containing `p`.
    pub fn voxel_index(&self, p: &Vector3<f64>) -> VoxelKey {
        voxel_key(p, self.inv_voxel_size)
    }

    pub fn voxel_center(&self, v: &VoxelKey) -> Vector3<f64> {
        Vector3::new(v[0] as f64 + 0.5, v[1] as f64 + 0.5, v[2] as f64 + 0.5) * self.voxel_size
    }

    pub fn block_of(&self, v: &VoxelKey) -> VoxelKey {
        v.map(|c| c.div_euclid(self.vps))
    }

    fn local_offset(&self, v: &VoxelKey) -> usize {
        let [x, y, z] = v.map(|c| c.rem_euclid(self.vps));
        (x + self.vps * (y + self.vps * z)) as usize
    }

    /// Voxel by global index, allocated or not.
    pub fn voxel(&self, v: &VoxelKey) -> Option<&TsdfVoxel> {
        self.blocks.get(&self.block_of(v)).map(|b| &b.voxels[self.local_offset(v)])
    }

    /// Overwrites one voxel, allocating its block and marking it dirty.
    pub fn set_voxel(&mut self, v: &VoxelKey, voxel: TsdfVoxel) {
        let b = self.block_of(v);
        let off = self.local_offset(v);
        let n = (self.vps * self.vps * self.vps) as usize;
        self.blocks.entry(b).or_insert_with(|| VoxelBlock { index: b, voxels: vec![TsdfVoxel::default(); n] }).voxels[off] = voxel;
        self.dirty.insert(b);
    }

    /// Nearest-voxel lookup; `None` for unobserved space.
    pub fn query(&self, p: &Vector3<f64>) -> Option<TsdfVoxel> {
        self.voxel(&self.voxel_index(p)).filter(|v| v.is_observed()).copied()
    }

    /// Blocks touched since the last call, ascending.
    pub fn take_dirty(&mut self) -> BTreeSet<VoxelKey> {
        std::mem::take(&mut self.dirty)
    }

    pub fn dirty(&self) -> &BTreeSet<VoxelKey> {
        &self.dirty
    }

    /// Fuses a sensor-frame scan taken at `sensor_pose`. Points outside
    /// `[min_ray_length, max_ray_length]` are dropped.
    pub fn integrate_scan(&mut self, scan: &ColoredScan, sensor_pose: &Pose) {
        let origin = *sensor_pose.translation();
        let r = sensor_pose.rotation_matrix();
        let (lo, hi) = (self.cfg.min_ray_length, self.cfg.max_ray_length);
        let rays: Vec<Ray> = scan
            .points
            .iter()
            .zip(&scan.colors)
            .filter_map(|(p, c)| {
                let range = p.norm();
                if !(range >= lo && range <= hi) {
                    return None;
                }
                let weight = if self.cfg.constant_weight { 1.0 } else { 1.0 / (range * range) };
                let color = c.map(|c| c.map(f64::from));
                Some(Ray { point: r * p + origin, weight, color })
            })
            .collect();
        let observations = match self.cfg.method {
            IntegrationMethod::Merged => self.cast_merged(&origin, &rays),
            IntegrationMethod::Fast => self.cast_fast(&origin, &rays),
        };
        self.apply(observations);
    }

    /// Bins rays by the voxel of their end point and casts one ray per bin
    /// from the weighted mean point, with the summed weight.
    fn cast_merged(&self, origin: &Vector3<f64>, rays: &[Ray]) -> Vec<Observation> {
        let mut slots: HashMap<VoxelKey, usize> = HashMap::default();
        // (weighted point sum, weight, weighted color sum, color weight)
        let mut bins: Vec<(Vector3<f64>, f64, [f64; 3], f64)> = Vec::new();
        for ray in rays {
            let key = self.voxel_index(&ray.point);
            let i = *slots.entry(key).or_insert_with(|| {
                bins.push((Vector3::zeros(), 0.0, [0.0; 3], 0.0));
                bins.len() - 1
            });
            let b = &mut bins[i];
            b.0 += ray.point * ray.weight;
            b.1 += ray.weight;
            if let Some(c) = ray.color {
                for k in 0..3 {
                    b.2[k] += c[k] * ray.weight;
                }
                b.3 += ray.weight;
            }
        }
        let merged: Vec<Ray> = bins
            .into_iter()
            .map(|(ps, w, cs, cw)| Ray {
                point: ps / w,
                weight: w,
                color: (cw > 0.0).then(|| cs.map(|c| c / cw)),
            })
            .collect();
        par::map(&merged, |ray| {
            let mut out = Vec::new();
            self.cast(origin, ray, |obs| {
                out.push(obs);
                true
            });
            out
        })
        .into_iter()
        .flatten()
        .collect()
    }

    /// Casts every ray, skipping rays whose end voxel was already cast this
    /// scan and stopping a ray after [`MAX_CONSECUTIVE_COLLISIONS`] voxels in a
    /// row that earlier rays updated.
    fn cast_fast(&self, origin: &Vector3<f64>, rays: &[Ray]) -> Vec<Observation> {
        let mut started: HashSet<VoxelKey> = HashSet::default();
        let mut updated: HashSet<VoxelKey> = HashSet::default();
        let mut out = Vec::new();
        for ray in rays {
            if !started.insert(self.voxel_index(&ray.point)) {
                continue;
            }
            let mut collisions = 0;
            let truncation = self.truncation;
            self.cast(origin, ray, |obs| {
                if updated.insert(obs.voxel) {
                    collisions = 0;
                    out.push(obs);
                    true
                } else if obs.distance >= truncation {
                    collisions += 1;
                    collisions <= MAX_CONSECUTIVE_COLLISIONS
                } else {
                    true
                }
            });
        }
        out
    }

    /// Visits the voxels of one ray from behind the surface toward the sensor,
    /// emitting projective distance observations. `emit` returns false to stop.
    fn cast(&self, origin: &Vector3<f64>, ray: &Ray, mut emit: impl FnMut(Observation) -> bool) {
        let diff = ray.point - origin;
        let range = diff.norm();
        if range == 0.0 {
            return;
        }
        let dir = diff / range;
        let end = ray.point + dir * self.truncation;
        let start = if self.cfg.carving { *origin } else { ray.point - dir * self.truncation };
        traverse(&end, &start, self.inv_voxel_size, |v| {
            let c = self.voxel_center(&v);
            let d = range - (c - origin).dot(&dir);
            if d < -self.truncation {
                return true;
            }
            emit(Observation { voxel: v, distance: d.min(self.truncation), weight: ray.weight, color: ray.color })
        });
    }

    /// Applies observations in order, allocating blocks as needed. Blocks are
    /// updated independently, each in the original observation order.
    fn apply(&mut self, observations: Vec<Observation>) {
        let mut groups: HashMap<VoxelKey, Vec<Observation>> = HashMap::default();
        for obs in observations {
            groups.entry(self.block_of(&obs.voxel)).or_default().push(obs);
        }
        let n = self.vps as usize;
        for key in groups.keys() {
            self.blocks
                .entry(*key)
                .or_insert_with(|| VoxelBlock { index: *key, voxels: vec![TsdfVoxel::default(); n * n * n] });
            self.dirty.insert(*key);
        }
        let vps = self.vps;
        let max_weight = self.cfg.max_weight;
        let mut work: Vec<(&mut VoxelBlock, &Vec<Observation>)> =
            self.blocks.iter_mut().filter_map(|(k, b)| groups.get(k).map(|g| (b, g))).collect();
        par::for_each_mut(&mut work, |(block, obs)| {
            for o in obs.iter() {
                let [x, y, z] = o.voxel.map(|c| c.rem_euclid(vps));
                let i = (x + vps * (y + vps * z)) as usize;
                block.voxels[i].update(o.distance, o.weight, o.color, max_weight);
            }
        });
    }
}

#[cfg(test)]
mod tests;
