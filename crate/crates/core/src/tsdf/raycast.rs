use nalgebra::Vector3;

use crate::spatial::{voxel_key, VoxelKey};

/// Visits, in order, every voxel the segment `a → b` passes through
/// (Amanatides-Woo stepping). `visit` returns false to stop early.
pub fn traverse(a: &Vector3<f64>, b: &Vector3<f64>, inv_voxel_size: f64, mut visit: impl FnMut(VoxelKey) -> bool) {
    let mut v = voxel_key(a, inv_voxel_size);
    let last = voxel_key(b, inv_voxel_size);
    let ga = a * inv_voxel_size;
    let d = (b - a) * inv_voxel_size;
    let mut step = [0i64; 3];
    let mut t_max = [f64::INFINITY; 3];
    let mut t_delta = [f64::INFINITY; 3];
    for k in 0..3 {
        if d[k] > 0.0 {
            step[k] = 1;
            t_max[k] = ((v[k] + 1) as f64 - ga[k]) / d[k];
            t_delta[k] = 1.0 / d[k];
        } else if d[k] < 0.0 {
            step[k] = -1;
            t_max[k] = (v[k] as f64 - ga[k]) / d[k];
            t_delta[k] = -1.0 / d[k];
        }
    }
    // Bounds the walk even when rounding keeps `last` from being hit exactly.
    let budget: i64 = (0..3).map(|k| (last[k] - v[k]).abs()).sum::<i64>() + 1;
    for _ in 0..budget {
        if !visit(v) || v == last {
            return;
        }
        let k = if t_max[0] <= t_max[1] && t_max[0] <= t_max[2] {
            0
        } else if t_max[1] <= t_max[2] {
            1
        } else {
            2
        };
        if t_max[k] > 1.0 {
            return;
        }
        v[k] += step[k];
        t_max[k] += t_delta[k];
    }
}
