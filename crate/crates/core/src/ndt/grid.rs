use rustc_hash::FxHashMap as HashMap;

use nalgebra::{Matrix3, SymmetricEigen, Vector3};

use crate::geometry::PointCloud;
use crate::spatial::{voxel_key, VoxelKey};

/// Cells with fewer points are kept for bookkeeping but never scored.
pub const MIN_POINTS: usize = 5;
/// Smallest eigenvalue kept relative to the largest.
pub const EIGEN_RATIO: f64 = 0.01;
/// Floor on the largest covariance eigenvalue, m².
pub const EIGEN_FLOOR: f64 = 1e-4;

const NEIGHBORS: [[i64; 3]; 7] = [[0, 0, 0], [-1, 0, 0], [1, 0, 0], [0, -1, 0], [0, 1, 0], [0, 0, -1], [0, 0, 1]];

/// Gaussian summary of the points inside one grid cell.
#[derive(Clone, Debug, PartialEq)]
pub struct NdtCell {
    pub count: usize,
    pub mean: Vector3<f64>,
    /// Regularized covariance.
    pub cov: Matrix3<f64>,
    pub inv_cov: Matrix3<f64>,
}

impl NdtCell {
    pub fn is_valid(&self) -> bool {
        self.count >= MIN_POINTS
    }
}

/// Running sums for one cell, kept relative to the cell's lower corner.
#[derive(Clone, Debug, Default)]
struct Accum {
    count: usize,
    sum: Vector3<f64>,
    sum_sq: Matrix3<f64>,
}

impl Accum {
    fn add(&mut self, d: &Vector3<f64>, sign: f64) {
        if sign > 0.0 {
            self.count += 1;
        } else {
            self.count -= 1;
        }
        self.sum += d * sign;
        self.sum_sq += d * d.transpose() * sign;
    }

    fn finish(&self, origin: &Vector3<f64>) -> NdtCell {
        let n = self.count as f64;
        let local_mean = self.sum / n;
        let mut cov = if self.count > 1 {
            (self.sum_sq - local_mean * self.sum.transpose()) / (n - 1.0)
        } else {
            Matrix3::zeros()
        };
        cov = (cov + cov.transpose()) * 0.5;
        let (cov, inv_cov) = regularize(&cov);
        NdtCell { count: self.count, mean: origin + local_mean, cov, inv_cov }
    }
}

/// Clamps eigenvalues so that `λmin ≥ EIGEN_RATIO · λmax` with `λmax` floored
/// at `EIGEN_FLOOR`. Returns the clamped covariance and its inverse.
pub fn regularize(cov: &Matrix3<f64>) -> (Matrix3<f64>, Matrix3<f64>) {
    let eig = SymmetricEigen::new(*cov);
    let mut vals = eig.eigenvalues;
    let imax = vals.imax();
    let lmax = vals[imax].max(EIGEN_FLOOR);
    vals[imax] = lmax;
    for v in vals.iter_mut() {
        *v = v.max(EIGEN_RATIO * lmax);
    }
    let v = eig.eigenvectors;
    let d = Matrix3::from_diagonal(&vals);
    let d_inv = Matrix3::from_diagonal(&vals.map(|x| 1.0 / x));
    let c = v * d * v.transpose();
    let ci = v * d_inv * v.transpose();
    ((c + c.transpose()) * 0.5, (ci + ci.transpose()) * 0.5)
}

/// Voxel grid of per-cell Gaussians.
///
/// Points can be added and removed; cell statistics are recomputed lazily for
/// touched cells by [`NdtGrid::refresh`].
#[derive(Clone, Debug)]
pub struct NdtGrid {
    resolution: f64,
    inv_res: f64,
    accums: HashMap<VoxelKey, Accum>,
    cells: HashMap<VoxelKey, NdtCell>,
    dirty: Vec<VoxelKey>,
}

impl NdtGrid {
    pub fn new(resolution: f64) -> Self {
        assert!(resolution > 0.0, "NDT resolution must be positive");
        NdtGrid {
            resolution,
            inv_res: 1.0 / resolution,
            accums: HashMap::default(),
            cells: HashMap::default(),
            dirty: Vec::new(),
        }
    }

    /// Per-cell sample mean and regularized covariance of `cloud`.
    pub fn build(cloud: &PointCloud, resolution: f64) -> Self {
        let mut g = NdtGrid::new(resolution);
        g.add_points(&cloud.points);
        g.refresh();
        g
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn key(&self, p: &Vector3<f64>) -> VoxelKey {
        voxel_key(p, self.inv_res)
    }

    fn corner(&self, k: &VoxelKey) -> Vector3<f64> {
        Vector3::new(k[0] as f64, k[1] as f64, k[2] as f64) * self.resolution
    }

    fn update(&mut self, points: &[Vector3<f64>], sign: f64) {
        for p in points {
            let k = self.key(p);
            let d = p - self.corner(&k);
            self.accums.entry(k).or_default().add(&d, sign);
            self.dirty.push(k);
        }
    }

    pub fn add_points(&mut self, points: &[Vector3<f64>]) {
        self.update(points, 1.0);
    }

    /// Removes points previously added with [`NdtGrid::add_points`].
    pub fn remove_points(&mut self, points: &[Vector3<f64>]) {
        self.update(points, -1.0);
    }

    /// Recomputes the statistics of cells touched since the last refresh.
    pub fn refresh(&mut self) {
        let mut dirty = std::mem::take(&mut self.dirty);
        dirty.sort_unstable();
        dirty.dedup();
        for k in dirty {
            match self.accums.get(&k) {
                Some(a) if a.count > 0 => {
                    let cell = a.finish(&self.corner(&k));
                    self.cells.insert(k, cell);
                }
                _ => {
                    self.accums.remove(&k);
                    self.cells.remove(&k);
                }
            }
        }
    }

    pub fn cell(&self, key: &VoxelKey) -> Option<&NdtCell> {
        self.cells.get(key)
    }

    /// Scoring cell containing `p`, if it has enough points.
    pub fn lookup(&self, p: &Vector3<f64>) -> Option<&NdtCell> {
        self.cells.get(&self.key(p)).filter(|c| c.is_valid())
    }

    /// Scoring cells among the one containing `p` and its six face neighbors,
    /// containing cell first. Scoring against the neighborhood keeps the
    /// objective continuous for surfaces lying on cell boundaries.
    pub fn neighborhood(&self, p: &Vector3<f64>) -> impl Iterator<Item = &NdtCell> {
        let k = self.key(p);
        NEIGHBORS
            .iter()
            .filter_map(move |d| self.cells.get(&[k[0] + d[0], k[1] + d[1], k[2] + d[2]]))
            .filter(|c| c.is_valid())
    }

    pub fn cells(&self) -> impl Iterator<Item = (&VoxelKey, &NdtCell)> {
        self.cells.iter()
    }

    pub fn num_valid(&self) -> usize {
        self.cells.values().filter(|c| c.is_valid()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.num_valid() == 0
    }
}
