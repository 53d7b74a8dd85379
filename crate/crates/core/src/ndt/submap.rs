use std::collections::VecDeque;

use nalgebra::Vector3;

use crate::config::SlamConfig;
use crate::geometry::{transform_cloud, PointCloud, Pose};
use crate::ndt::grid::NdtGrid;
use crate::ndt::register::{align, NewtonOptions};
use crate::spatial::voxel_filter;

/// Ring buffer of the last K registered scans (world frame) and NDT grids
/// over their union, coarsest first and ending at `ndt_resolution`.
#[derive(Clone, Debug)]
pub struct Submap {
    capacity: usize,
    vg_size_map: f64,
    scans: VecDeque<Vec<Vector3<f64>>>,
    grids: Vec<NdtGrid>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegistrationResult {
    /// World ← sensor.
    pub pose: Pose,
    pub converged: bool,
    pub iterations: usize,
    pub score: f64,
    /// Set when the aligned pose strayed too far from the prior; `pose` is then
    /// the prior, bit for bit.
    pub rejected_by_guard: bool,
    /// Newton iterations spent on the coarse grids before the final level
    /// (`iterations` counts the final level only).
    pub coarse_iterations: usize,
}

impl Submap {
    pub fn new(cfg: &SlamConfig) -> Self {
        Submap {
            capacity: cfg.num_targeted_cloud,
            vg_size_map: cfg.vg_size_map,
            scans: VecDeque::with_capacity(cfg.num_targeted_cloud + 1),
            grids: (0..=cfg.coarse_levels)
                .rev()
                .map(|l| NdtGrid::new(cfg.ndt_resolution * f64::from(1u32 << l)))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.scans.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scans.is_empty()
    }

    /// The finest grid.
    pub fn grid(&self) -> &NdtGrid {
        self.grids.last().expect("at least one level")
    }

    pub fn grids(&self) -> &[NdtGrid] {
        &self.grids
    }

    /// World-frame scans, oldest first.
    pub fn scans(&self) -> impl Iterator<Item = &[Vector3<f64>]> {
        self.scans.iter().map(|s| s.as_slice())
    }

    /// Adds a registered scan (sensor frame) at `pose`, filtered at
    /// `vg_size_map` in the world frame, evicting the oldest scan beyond K.
    pub fn insert_scan(&mut self, scan: &PointCloud, pose: &Pose) {
        let world = voxel_filter(&transform_cloud(pose, scan), self.vg_size_map).points;
        for g in &mut self.grids {
            g.add_points(&world);
        }
        self.scans.push_back(world);
        while self.scans.len() > self.capacity {
            if let Some(old) = self.scans.pop_front() {
                for g in &mut self.grids {
                    g.remove_points(&old);
                }
            }
        }
        for g in &mut self.grids {
            g.refresh();
        }
    }
}

/// Range gating to `[min_range, max_range]` followed by the input voxel filter.
pub fn preprocess(cloud: &PointCloud, cfg: &SlamConfig) -> PointCloud {
    let mut c = PointCloud { points: cloud.points.clone(), colors: None };
    let (lo, hi) = (cfg.min_range * cfg.min_range, cfg.max_range * cfg.max_range);
    c.retain(|p| {
        let r2 = p.norm_squared();
        r2 >= lo && r2 <= hi
    });
    voxel_filter(&c, cfg.vg_size_input)
}

/// Registers a preprocessed scan against the submap starting at `prior`,
/// coarse grids first.
///
/// An empty submap yields the identity. If the aligned translation ends more
/// than `guard_threshold` from the prior's, the prior is returned instead and
/// the result is flagged.
pub fn register(submap: &Submap, scan: &PointCloud, prior: &Pose, cfg: &SlamConfig) -> RegistrationResult {
    if submap.is_empty() || submap.grid().is_empty() {
        return RegistrationResult {
            pose: Pose::identity(),
            converged: true,
            iterations: 0,
            score: 0.0,
            rejected_by_guard: false,
            coarse_iterations: 0,
        };
    }
    let opts = NewtonOptions { max_iterations: cfg.max_iterations, step_tolerance: cfg.step_tolerance, ..Default::default() };
    let (coarse, fine) = submap.grids.split_at(submap.grids.len() - 1);
    let mut pose = *prior;
    let mut coarse_iterations = 0;
    for g in coarse {
        let a = align(g, scan, &pose, &opts);
        coarse_iterations += a.iterations;
        pose = a.pose;
    }
    let a = align(&fine[0], scan, &pose, &opts);
    let rejected = (a.pose.translation() - prior.translation()).norm() > cfg.guard_threshold;
    RegistrationResult {
        pose: if rejected { *prior } else { a.pose },
        converged: a.converged,
        iterations: a.iterations,
        score: a.score,
        rejected_by_guard: rejected,
        coarse_iterations,
    }
}
