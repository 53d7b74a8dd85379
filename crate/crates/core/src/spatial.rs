//! Voxel-grid filtering and a hashed radius-search index.

use rustc_hash::FxHashMap as HashMap;

use nalgebra::Vector3;

use crate::geometry::{PointCloud, Rgb};

pub type VoxelKey = [i64; 3];

#[inline]
pub fn voxel_key(p: &Vector3<f64>, inv_size: f64) -> VoxelKey {
    [
        (p.x * inv_size).floor() as i64,
        (p.y * inv_size).floor() as i64,
        (p.z * inv_size).floor() as i64,
    ]
}

/// Replaces the points of each occupied voxel by their centroid (colors are
/// averaged and rounded half up). Output order follows the first point seen in
/// each voxel. A non-positive `leaf` returns the input unchanged.
pub fn voxel_filter(cloud: &PointCloud, leaf: f64) -> PointCloud {
    if leaf <= 0.0 || cloud.is_empty() {
        return cloud.clone();
    }
    let inv = 1.0 / leaf;
    let mut slots: HashMap<VoxelKey, usize> = HashMap::with_capacity_and_hasher(cloud.len() / 2, Default::default());
    let mut sums: Vec<(Vector3<f64>, [u32; 3], u32)> = Vec::new();
    for (i, p) in cloud.points.iter().enumerate() {
        let slot = *slots.entry(voxel_key(p, inv)).or_insert_with(|| {
            sums.push((Vector3::zeros(), [0; 3], 0));
            sums.len() - 1
        });
        let s = &mut sums[slot];
        s.0 += p;
        if let Some(c) = &cloud.colors {
            for k in 0..3 {
                s.1[k] += u32::from(c[i][k]);
            }
        }
        s.2 += 1;
    }
    let points = sums.iter().map(|(sum, _, n)| sum / f64::from(*n)).collect();
    let colors = cloud.colors.as_ref().map(|_| {
        sums.iter()
            .map(|(_, c, n)| {
                let avg = |v: u32| ((2 * v + n) / (2 * n)).min(255) as u8;
                [avg(c[0]), avg(c[1]), avg(c[2])] as Rgb
            })
            .collect()
    });
    PointCloud { points, colors }
}

/// Uniform-grid index answering fixed-radius neighbor queries.
#[derive(Debug, Clone)]
pub struct PointIndex {
    cell: f64,
    inv: f64,
    cells: HashMap<VoxelKey, Vec<u32>>,
    points: Vec<Vector3<f64>>,
}

impl PointIndex {
    pub fn new(points: &[Vector3<f64>], cell: f64) -> Self {
        assert!(cell > 0.0, "cell size must be positive");
        let inv = 1.0 / cell;
        let mut cells: HashMap<VoxelKey, Vec<u32>> = HashMap::default();
        for (i, p) in points.iter().enumerate() {
            cells.entry(voxel_key(p, inv)).or_default().push(i as u32);
        }
        PointIndex { cell, inv, cells, points: points.to_vec() }
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    /// Indices of points within `radius` of `q`, ascending.
    pub fn within(&self, q: &Vector3<f64>, radius: f64) -> Vec<u32> {
        let mut out = Vec::new();
        let r2 = radius * radius;
        let span = (radius / self.cell).ceil() as i64;
        let c = voxel_key(q, self.inv);
        for dx in -span..=span {
            for dy in -span..=span {
                for dz in -span..=span {
                    if let Some(ids) = self.cells.get(&[c[0] + dx, c[1] + dy, c[2] + dz]) {
                        out.extend(ids.iter().copied().filter(|&i| (self.points[i as usize] - q).norm_squared() <= r2));
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }

    /// Closest point within `max_dist`, ties broken by lower index.
    pub fn nearest(&self, q: &Vector3<f64>, max_dist: f64) -> Option<(u32, f64)> {
        let mut best: Option<(u32, f64)> = None;
        for i in self.within(q, max_dist) {
            let d = (self.points[i as usize] - q).norm();
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((i, d));
            }
        }
        best
    }
}
