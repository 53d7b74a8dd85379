use nalgebra::{Matrix3, Vector3};

use super::metrics::Stats;
use crate::config::EvalConfig;
use crate::par;
use crate::spatial::PointIndex;

/// Fewer reference neighbors than this and the normal is not estimated.
pub const MIN_NORMAL_NEIGHBORS: usize = 5;

#[derive(Clone, Debug, PartialEq)]
pub struct CloudDistance {
    /// Unsigned distance per kept evaluation point.
    pub distances: Vec<f64>,
    /// Indices of the evaluation points behind `distances`.
    pub kept: Vec<usize>,
    pub mean: f64,
    pub std: f64,
    pub p90: f64,
}

impl CloudDistance {
    pub fn dropped(&self, total: usize) -> usize {
        total - self.kept.len()
    }
}

fn normal_of(points: &[Vector3<f64>], ids: &[u32]) -> Vector3<f64> {
    let n = ids.len() as f64;
    let mean = ids.iter().map(|&i| points[i as usize]).sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    for &i in ids {
        let d = points[i as usize] - mean;
        cov += d * d.transpose();
    }
    let eig = cov.symmetric_eigen();
    let k = eig.eigenvalues.imin();
    eig.eigenvectors.column(k).into_owned()
}

fn point_distance(index: &PointIndex, q: &Vector3<f64>, cfg: &EvalConfig) -> Option<f64> {
    let points = index.points();
    let (_, nearest) = index.nearest(q, cfg.max_match)?;
    let near = index.within(q, cfg.normal_scale);
    if near.len() < MIN_NORMAL_NEIGHBORS {
        return Some(nearest);
    }
    let n = normal_of(points, &near);
    // Cylinder of radius projection_scale along the normal, max_match long
    // each way.
    let reach = (cfg.max_match.powi(2) + cfg.projection_scale.powi(2)).sqrt();
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in index.within(q, reach) {
        let d = points[i as usize] - q;
        let along = d.dot(&n);
        if along.abs() <= cfg.max_match && (d - n * along).norm_squared() <= cfg.projection_scale.powi(2) {
            sum += along;
            count += 1;
        }
    }
    if count == 0 {
        return Some(nearest);
    }
    Some((sum / count as f64).abs())
}

/// Normal-projected (M3C2-style) distance from each evaluation point to the
/// reference cloud. Points with no reference point within `max_match` are
/// dropped; where the reference is too sparse for a normal, the nearest
/// neighbor distance is used.
pub fn cloud_distance(eval: &[Vector3<f64>], reference: &[Vector3<f64>], cfg: &EvalConfig) -> CloudDistance {
    let index = PointIndex::new(reference, cfg.normal_scale.max(1e-3));
    let ids: Vec<usize> = (0..eval.len()).collect();
    let per_point = par::map(&ids, |&i| point_distance(&index, &eval[i], cfg));
    let (kept, distances): (Vec<usize>, Vec<f64>) =
        per_point.into_iter().enumerate().filter_map(|(i, d)| d.map(|d| (i, d))).unzip();
    let s = Stats::of(&distances);
    CloudDistance { distances, kept, mean: s.mean, std: s.std, p90: s.p90 }
}
