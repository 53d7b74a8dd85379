use crate::eval::Trajectory;
use crate::geometry::Pose;
use crate::pose_graph::PoseGraph;

/// Loop-closed trajectory derived from the front-end one.
#[derive(Clone, Debug, PartialEq)]
pub struct Correction {
    pub trajectory: Trajectory,
    /// Translation between the corrected and uncorrected final pose (m).
    pub final_correction: f64,
    /// Set when loop edges moved the graph, meaning a map built from the
    /// front-end poses is now stale. The map is not rebuilt.
    pub map_rebuild_needed: bool,
}

/// Applies the keyframe corrections `pose ∘ sm_pose⁻¹` to every front-end pose,
/// interpolating between the keyframes that bracket its stamp and holding the
/// nearest one outside them.
pub fn propagate_correction(graph: &PoseGraph, live: &Trajectory) -> Correction {
    let keys: Vec<(f64, Pose)> =
        graph.keyframes.iter().map(|k| (k.stamp.0, k.pose.compose(&k.sm_pose.inverse()))).collect();
    let correction_at = |t: f64| -> Pose {
        if keys.is_empty() {
            return Pose::identity();
        }
        let i = keys.partition_point(|(s, _)| *s <= t);
        if i == 0 {
            return keys[0].1;
        }
        if i == keys.len() {
            return keys[i - 1].1;
        }
        let ((s0, c0), (s1, c1)) = (&keys[i - 1], &keys[i]);
        c0.interpolate(c1, (t - s0) / (s1 - s0))
    };
    let mut out = Trajectory::new();
    let mut final_correction = 0.0;
    for (stamp, p) in live.poses() {
        let corrected = correction_at(stamp.0).compose(p);
        final_correction = (corrected.translation() - p.translation()).norm();
        out.push(*stamp, corrected).expect("stamps already increasing");
    }
    Correction { trajectory: out, final_correction, map_rebuild_needed: graph.loop_edges().next().is_some() }
}
