use nalgebra::Vector3;

use crate::config::LoopConfig;
use crate::geometry::{PointCloud, Pose};
use rustc_hash::FxHashMap as HashMap;

use crate::par;
use crate::ndt::{align, NdtGrid, NewtonOptions};
use crate::pose_graph::PoseGraph;
use crate::spatial::{voxel_filter, VoxelKey};

/// Grids finer than this many doublings of `ndt_resolution` are used for the
/// coarse alignment stages.
const COARSE_LEVELS: u32 = 2;

/// At each level the query is aligned after filtering at this fraction of the
/// cell size; fitness still uses the full keyframe cloud.
const ALIGN_LEAF_RATIO: f64 = 0.25;

/// Fewer matched points than this fraction of the query make a match invalid.
pub const MIN_MATCHED_FRACTION: f64 = 0.5;

#[derive(Clone, Debug, PartialEq)]
pub struct LoopCandidate {
    pub query_id: usize,
    pub match_id: usize,
    /// Lower is better; see [`fitness`].
    pub fitness: f64,
    /// Measured `T_match⁻¹ ∘ T_query`.
    pub relative: Pose,
}

/// A map cell counts as planar when its smallest covariance eigenvalue is
/// below this fraction of the middle one.
const PLANARITY: f64 = 0.1;

/// Point-to-plane distances are capped here, metres.
pub const DISTANCE_CAP: f64 = 0.5;

/// A normal-direction group needs this fraction of the matched points to be
/// scored.
const MIN_GROUP_FRACTION: f64 = 0.05;

/// Mean and normal of every valid planar cell.
fn planes(grid: &NdtGrid) -> HashMap<VoxelKey, (Vector3<f64>, Vector3<f64>)> {
    grid.cells()
        .filter(|(_, c)| c.is_valid())
        .filter_map(|(k, c)| {
            let eig = c.cov.symmetric_eigen();
            let mut order = [0, 1, 2];
            order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
            (eig.eigenvalues[order[0]] < PLANARITY * eig.eigenvalues[order[1]])
                .then(|| (*k, (c.mean, eig.eigenvectors.column(order[0]).into_owned())))
        })
        .collect()
}

/// Loop fitness in centimetres: query points are matched to the planar map
/// cell they fall in and grouped by the dominant axis of that cell's normal;
/// the score is the largest per-group mean of capped point-to-plane
/// distances, ×100. Grouping keeps a shift along one axis from being hidden
/// by surfaces it slides along. Infinite when fewer than
/// [`MIN_MATCHED_FRACTION`] of the query points match.
pub fn fitness(grid: &NdtGrid, query: &[Vector3<f64>], pose: &Pose) -> f64 {
    let planes = planes(grid);
    let (r, t) = (pose.rotation_matrix(), *pose.translation());
    let mut sum = [0.0; 3];
    let mut count = [0usize; 3];
    for p in query {
        let q = r * p + t;
        let Some((mean, n)) = planes.get(&grid.key(&q)) else { continue };
        let axis = n.iamax();
        sum[axis] += n.dot(&(q - mean)).abs().min(DISTANCE_CAP);
        count[axis] += 1;
    }
    let matched: usize = count.iter().sum();
    if matched == 0 || (matched as f64) < MIN_MATCHED_FRACTION * query.len() as f64 {
        return f64::INFINITY;
    }
    (0..3)
        .filter(|&a| count[a] as f64 >= MIN_GROUP_FRACTION * matched as f64)
        .map(|a| 100.0 * sum[a] / count[a] as f64)
        .fold(0.0, f64::max)
}

/// Keyframes passing both gates for `query`, nearest first.
pub(crate) fn candidates(graph: &PoseGraph, query: usize, cfg: &LoopConfig) -> Vec<(usize, f64)> {
    let q = &graph.keyframes[query];
    let mut out: Vec<(usize, f64)> = graph
        .keyframes
        .iter()
        .filter(|k| k.id != query && q.accumulated_distance - k.accumulated_distance >= cfg.distance_loop_closure)
        .map(|k| (k.id, (k.pose.translation() - q.pose.translation()).norm()))
        .filter(|(_, d)| *d <= cfg.search_range)
        .collect();
    out.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    out
}

/// Keyframe clouds around `center` (up to half of
/// `num_adjacent_pose_constraints` on each side), in `center`'s frame.
pub(crate) fn local_map(graph: &PoseGraph, center: usize, cfg: &LoopConfig) -> Vec<Vector3<f64>> {
    let half = cfg.num_adjacent_pose_constraints / 2;
    let lo = center.saturating_sub(half);
    let hi = (center + half).min(graph.len() - 1);
    let inv = graph.keyframes[center].pose.inverse();
    let mut pts = Vec::new();
    for k in &graph.keyframes[lo..=hi] {
        let t = inv.compose(&k.pose);
        let (r, tr) = (t.rotation_matrix(), *t.translation());
        pts.extend(k.cloud.points.iter().map(|p| r * p + tr));
    }
    pts
}

/// Registers keyframe `query` against the local map of a candidate, coarse
/// grids first, returning the candidate-frame pose and its fitness.
pub(crate) fn match_candidate(graph: &PoseGraph, query: usize, candidate: usize, cfg: &LoopConfig) -> (Pose, f64) {
    let map = PointCloud::new(local_map(graph, candidate, cfg));
    let q = &graph.keyframes[query];
    let mut pose = graph.keyframes[candidate].pose.inverse().compose(&q.pose);
    let opts = NewtonOptions::default();
    let mut fine = None;
    for l in (0..=COARSE_LEVELS).rev() {
        let res = cfg.ndt_resolution * f64::from(1u32 << l);
        let grid = NdtGrid::build(&map, res);
        let sparse = voxel_filter(&q.cloud, res * ALIGN_LEAF_RATIO);
        pose = align(&grid, &sparse, &pose, &opts).pose;
        if l == 0 {
            fine = Some(grid);
        }
    }
    let grid = fine.expect("finest level built");
    (pose, fitness(&grid, &q.cloud.points, &pose))
}

/// Searches the nearest `num_submap_searched` gated keyframes for a loop with
/// `query` and returns the best one whose fitness is within the threshold.
pub fn detect_loop(graph: &PoseGraph, query: usize, cfg: &LoopConfig) -> Option<LoopCandidate> {
    let ids: Vec<usize> =
        candidates(graph, query, cfg).into_iter().take(cfg.num_submap_searched).map(|(id, _)| id).collect();
    let matches = par::map(&ids, |&id| match_candidate(graph, query, id, cfg));
    let mut best: Option<LoopCandidate> = None;
    for (id, (relative, fit)) in ids.into_iter().zip(matches) {
        log::debug!("loop candidate {id} -> {query}: fitness {fit:.2}");
        if fit <= cfg.threshold_loop_closure && best.as_ref().is_none_or(|b| fit < b.fitness) {
            best = Some(LoopCandidate { query_id: query, match_id: id, fitness: fit, relative });
        }
    }
    best
}
