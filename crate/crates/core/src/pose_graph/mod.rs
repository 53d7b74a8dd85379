//! SLAM back end: keyframes, NDT loop detection and SE(3) pose-graph
//! optimization.

mod correction;
mod loops;
mod optimize;

use nalgebra::Matrix6;

use crate::config::LoopConfig;
use crate::geometry::{PointCloud, Pose, Timestamp};
use crate::spatial::voxel_filter;

pub use correction::{propagate_correction, Correction};
pub use loops::{detect_loop, fitness, LoopCandidate};
pub use optimize::{disconnected, edge_residual, optimize, right_jacobian_inv, total_cost, OptimizeReport};

/// Odometry edge standard deviations: translation (m) and rotation (rad).
pub const ODOM_SIGMA_TRANSLATION: f64 = 0.05;
pub const ODOM_SIGMA_ROTATION: f64 = 0.02;

#[derive(Clone, Debug, PartialEq)]
pub struct Keyframe {
    pub id: usize,
    pub stamp: Timestamp,
    /// Current graph estimate.
    pub pose: Pose,
    /// Front-end pose at creation; never changed by optimization.
    pub sm_pose: Pose,
    /// Sensor frame, filtered at the loop voxel leaf size.
    pub cloud: PointCloud,
    pub accumulated_distance: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EdgeKind {
    Odometry,
    Loop,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GraphEdge {
    pub from: usize,
    pub to: usize,
    /// Measured `T_from⁻¹ ∘ T_to`.
    pub relative: Pose,
    /// Ordered like the residual: rotation then translation.
    pub information: Matrix6<f64>,
    pub kind: EdgeKind,
}

/// Information matrix of odometry edges.
pub fn odometry_information() -> Matrix6<f64> {
    let r = 1.0 / (ODOM_SIGMA_ROTATION * ODOM_SIGMA_ROTATION);
    let t = 1.0 / (ODOM_SIGMA_TRANSLATION * ODOM_SIGMA_TRANSLATION);
    Matrix6::from_diagonal(&nalgebra::Vector6::new(r, r, r, t, t, t))
}

/// Keyframes (node `i` is `keyframes[i]`, with `id == i`) and edges.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PoseGraph {
    pub keyframes: Vec<Keyframe>,
    pub edges: Vec<GraphEdge>,
}

impl PoseGraph {
    pub fn new() -> Self {
        PoseGraph::default()
    }

    pub fn len(&self) -> usize {
        self.keyframes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keyframes.is_empty()
    }

    pub fn loop_edges(&self) -> impl Iterator<Item = &GraphEdge> {
        self.edges.iter().filter(|e| e.kind == EdgeKind::Loop)
    }

    /// Adds a keyframe when the front-end pose has moved at least
    /// `keyframe_spacing` or turned at least `keyframe_yaw_deg` since the last
    /// one (the first call always adds). Linked to the previous keyframe by an
    /// odometry edge; its graph pose continues from the previous keyframe's
    /// current estimate.
    pub fn maybe_add_keyframe(
        &mut self,
        stamp: Timestamp,
        sm_pose: &Pose,
        cloud: &PointCloud,
        accumulated_distance: f64,
        cfg: &LoopConfig,
    ) -> Option<usize> {
        let id = self.keyframes.len();
        let pose = match self.keyframes.last() {
            None => *sm_pose,
            Some(last) => {
                let rel = last.sm_pose.inverse().compose(sm_pose);
                let moved = rel.translation().norm() >= cfg.keyframe_spacing - 1e-9;
                let turned = rel.angle() >= cfg.keyframe_yaw_deg.to_radians() - 1e-12;
                if !moved && !turned {
                    return None;
                }
                self.edges.push(GraphEdge {
                    from: last.id,
                    to: id,
                    relative: rel,
                    information: odometry_information(),
                    kind: EdgeKind::Odometry,
                });
                last.pose.compose(&rel)
            }
        };
        self.keyframes.push(Keyframe {
            id,
            stamp,
            pose,
            sm_pose: *sm_pose,
            cloud: voxel_filter(cloud, cfg.voxel_leaf_size),
            accumulated_distance,
        });
        Some(id)
    }

    /// Adds an accepted loop candidate as an edge from the match to the query.
    pub fn add_loop(&mut self, c: &LoopCandidate, cfg: &LoopConfig) {
        let scale = 1.0 / (1.0 + c.fitness.max(0.0) / cfg.threshold_loop_closure);
        self.edges.push(GraphEdge {
            from: c.match_id,
            to: c.query_id,
            relative: c.relative,
            information: odometry_information() * scale,
            kind: EdgeKind::Loop,
        });
    }
}

/// Drives keyframing, periodic loop detection and optimization from a stream
/// of front-end poses.
#[derive(Clone, Debug)]
pub struct LoopCloser {
    cfg: LoopConfig,
    graph: PoseGraph,
    distance: f64,
    last_pose: Option<Pose>,
    last_attempt: Option<Timestamp>,
    accepted: Vec<LoopCandidate>,
}

impl LoopCloser {
    pub fn new(cfg: &LoopConfig) -> Self {
        LoopCloser {
            cfg: cfg.clone(),
            graph: PoseGraph::new(),
            distance: 0.0,
            last_pose: None,
            last_attempt: None,
            accepted: Vec::new(),
        }
    }

    pub fn graph(&self) -> &PoseGraph {
        &self.graph
    }

    pub fn accepted_loops(&self) -> &[LoopCandidate] {
        &self.accepted
    }

    /// Feeds one front-end pose. Guarded frames must not be passed here as
    /// keyframe material (`inserted == false` frames only advance the distance).
    pub fn on_frame(&mut self, stamp: Timestamp, sm_pose: &Pose, scan: &PointCloud, inserted: bool) -> crate::Result<()> {
        if let Some(prev) = &self.last_pose {
            self.distance += (sm_pose.translation() - prev.translation()).norm();
        }
        self.last_pose = Some(*sm_pose);
        if !inserted {
            return Ok(());
        }
        let Some(id) = self.graph.maybe_add_keyframe(stamp, sm_pose, scan, self.distance, &self.cfg) else {
            return Ok(());
        };
        if !self.cfg.enabled {
            return Ok(());
        }
        let due = self.last_attempt.is_none_or(|t| (stamp.0 - t.0) * 1000.0 >= self.cfg.detection_period);
        if !due {
            return Ok(());
        }
        self.last_attempt = Some(stamp);
        if let Some(c) = detect_loop(&self.graph, id, &self.cfg) {
            log::info!("loop closure {} -> {} (fitness {:.2})", c.match_id, c.query_id, c.fitness);
            self.graph.add_loop(&c, &self.cfg);
            self.accepted.push(c);
            optimize(&mut self.graph, 0)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests;
