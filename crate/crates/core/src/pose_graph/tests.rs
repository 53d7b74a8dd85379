use super::loops::{candidates, local_map, match_candidate};
use nalgebra::{DMatrix, DVector, Isometry3, Translation3, UnitQuaternion, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::*;
use crate::eval::Trajectory;
use crate::synth::{raycast_lidar, Motion, Scene, TrajectorySpec};

fn kf(id: usize, pose: Pose) -> Keyframe {
    Keyframe {
        id,
        stamp: Timestamp(id as f64),
        pose,
        sm_pose: pose,
        cloud: PointCloud::default(),
        accumulated_distance: id as f64,
    }
}

fn edge(from: usize, to: usize, relative: Pose) -> GraphEdge {
    GraphEdge { from, to, relative, information: odometry_information(), kind: EdgeKind::Odometry }
}

fn x(v: f64) -> Pose {
    Pose::from_translation(Vector3::new(v, 0.0, 0.0))
}

// ---- independent oracle: Levenberg-Marquardt over Isometry3 with numeric
// Jacobians and a (rotation vector, translation) parameterization ----

fn iso(p: &[f64]) -> Isometry3<f64> {
    Isometry3::from_parts(
        Translation3::new(p[3], p[4], p[5]),
        UnitQuaternion::from_scaled_axis(Vector3::new(p[0], p[1], p[2])),
    )
}

fn to_iso(p: &Pose) -> Isometry3<f64> {
    Isometry3::from_parts(Translation3::from(*p.translation()), *p.rotation())
}

fn oracle_residuals(params: &DVector<f64>, fixed: &Isometry3<f64>, edges: &[GraphEdge]) -> DVector<f64> {
    let node = |i: usize| if i == 0 { *fixed } else { iso(&params.as_slice()[6 * (i - 1)..6 * i]) };
    let mut r = DVector::zeros(6 * edges.len());
    for (k, e) in edges.iter().enumerate() {
        let err = to_iso(&e.relative).inverse() * node(e.from).inverse() * node(e.to);
        let v = err.rotation.scaled_axis();
        let res = nalgebra::Vector6::new(v.x, v.y, v.z, err.translation.x, err.translation.y, err.translation.z);
        let w = e.information.cholesky().unwrap().l().transpose() * res;
        r.rows_mut(6 * k, 6).copy_from(&w);
    }
    r
}

fn oracle_solve(poses: &[Pose], edges: &[GraphEdge]) -> (Vec<Isometry3<f64>>, f64) {
    let fixed = to_iso(&poses[0]);
    let n = poses.len() - 1;
    let mut p = DVector::zeros(6 * n);
    for (i, q) in poses[1..].iter().enumerate() {
        let v = q.rotation().scaled_axis();
        p.rows_mut(6 * i, 6).copy_from_slice(&[v.x, v.y, v.z, q.translation().x, q.translation().y, q.translation().z]);
    }
    let mut lambda = 1e-3;
    let mut r = oracle_residuals(&p, &fixed, edges);
    for _ in 0..200 {
        let mut j = DMatrix::zeros(r.len(), p.len());
        for c in 0..p.len() {
            let h = 1e-7;
            let (mut a, mut b) = (p.clone(), p.clone());
            a[c] += h;
            b[c] -= h;
            j.set_column(c, &((oracle_residuals(&a, &fixed, edges) - oracle_residuals(&b, &fixed, edges)) / (2.0 * h)));
        }
        let jtj = j.transpose() * &j;
        let g = j.transpose() * &r;
        if g.amax() < 1e-12 {
            break;
        }
        let damped = &jtj + DMatrix::from_diagonal(&jtj.diagonal()) * lambda;
        let step = damped.lu().solve(&(-&g)).unwrap();
        let cand = &p + &step;
        let rc = oracle_residuals(&cand, &fixed, edges);
        if rc.norm_squared() < r.norm_squared() {
            let done = r.norm_squared() - rc.norm_squared() < 1e-20;
            p = cand;
            r = rc;
            lambda = (lambda * 0.3).max(1e-12);
            if done {
                break;
            }
        } else {
            lambda *= 10.0;
        }
    }
    let mut out = vec![fixed];
    out.extend((0..n).map(|i| iso(&p.as_slice()[6 * i..6 * i + 6])));
    (out, r.norm_squared())
}

fn circle_graph(seed: u64) -> (PoseGraph, Vec<Pose>) {
    let truth: Vec<Pose> = (0..10)
        .map(|k| {
            let a = k as f64 * std::f64::consts::TAU / 10.0;
            Pose::from_xyz_yaw(5.0 * a.cos(), 5.0 * a.sin(), 0.0, a + std::f64::consts::FRAC_PI_2)
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.05).unwrap();
    let mut g = PoseGraph::new();
    let mut est = truth[0];
    g.keyframes.push(kf(0, est));
    for k in 1..10 {
        let rel = truth[k - 1].inverse().compose(&truth[k]);
        let n = Vector3::new(noise.sample(&mut rng), noise.sample(&mut rng), noise.sample(&mut rng));
        let meas = Pose::new(*rel.rotation(), rel.translation() + n);
        est = est.compose(&meas);
        g.keyframes.push(kf(k, est));
        g.edges.push(edge(k - 1, k, meas));
    }
    g.edges.push(GraphEdge { kind: EdgeKind::Loop, ..edge(0, 9, truth[0].inverse().compose(&truth[9])) });
    (g, truth)
}

#[test]
fn consistent_chain_is_left_unchanged() {
    let mut g = PoseGraph::new();
    let mut p = Pose::identity();
    for k in 0..6 {
        g.keyframes.push(kf(k, p));
        let step = Pose::exp(&nalgebra::Vector6::new(0.01, -0.02, 0.1, 1.0, 0.2, -0.05));
        if k < 5 {
            g.edges.push(edge(k, k + 1, step));
        }
        p = p.compose(&step);
    }
    let before = g.clone();
    let report = optimize(&mut g, 0).unwrap();
    assert!(report.final_cost() < 1e-18);
    for (a, b) in before.keyframes.iter().zip(&g.keyframes) {
        assert!((a.pose.translation() - b.pose.translation()).norm() < 1e-9);
        assert!(a.pose.rotation().angle_to(b.pose.rotation()) < 1e-9);
    }
}

#[test]
fn contradictory_loop_matches_brute_force() {
    let mut g = PoseGraph::new();
    for k in 0..3 {
        g.keyframes.push(kf(k, x(k as f64)));
    }
    g.edges = vec![edge(0, 1, x(1.0)), edge(1, 2, x(1.0)), edge(0, 2, x(2.3))];
    optimize(&mut g, 0).unwrap();

    // Grid search over (x1, x2), refined around the best cell.
    let cost = |a: f64, b: f64| (a - 1.0).powi(2) + (b - a - 1.0).powi(2) + (b - 2.3).powi(2);
    let (mut ca, mut cb, mut span) = (1.0, 2.0, 1.0);
    for _ in 0..8 {
        let mut best = (f64::INFINITY, ca, cb);
        for i in -50..=50 {
            for j in -50..=50 {
                let (a, b) = (ca + span * i as f64 / 50.0, cb + span * j as f64 / 50.0);
                let c = cost(a, b);
                if c < best.0 {
                    best = (c, a, b);
                }
            }
        }
        (ca, cb) = (best.1, best.2);
        span /= 10.0;
    }
    let p1 = g.keyframes[1].pose.translation();
    let p2 = g.keyframes[2].pose.translation();
    assert!((p1.x - ca).abs() < 1e-4 && (p2.x - cb).abs() < 1e-4, "{p1:?} {p2:?} vs {ca} {cb}");
    assert!(p1.yz().norm() < 1e-9 && p2.yz().norm() < 1e-9);
    assert_eq!(g.keyframes[0].pose, x(0.0));
}

#[test]
fn noisy_circle_matches_independent_solver() {
    let (mut g, truth) = circle_graph(5);
    let initial: Vec<Pose> = g.keyframes.iter().map(|k| k.pose).collect();
    let before = (g.keyframes[9].pose.translation() - truth[9].translation()).norm();
    let report = optimize(&mut g, 0).unwrap();
    let after = (g.keyframes[9].pose.translation() - truth[9].translation()).norm();
    assert!(after < before, "{after} vs {before}");

    let (oracle, oracle_cost) = oracle_solve(&initial, &g.edges);
    assert!((report.final_cost() - oracle_cost).abs() < 1e-6, "{} vs {oracle_cost}", report.final_cost());
    for (k, o) in g.keyframes.iter().zip(&oracle) {
        assert!((k.pose.translation() - o.translation.vector).norm() < 1e-6);
        assert!(k.pose.rotation().angle_to(&o.rotation) < 1e-6);
    }
}

#[test]
fn costs_never_increase() {
    for seed in 0..5 {
        let (mut g, _) = circle_graph(seed);
        // A bad initial guess makes several iterations necessary.
        for k in g.keyframes.iter_mut().skip(1) {
            k.pose = k.pose.compose(&Pose::from_xyz_yaw(0.3, -0.2, 0.1, 0.2));
        }
        let r = optimize(&mut g, 0).unwrap();
        assert!(r.iterations >= 2);
        assert!(r.costs.windows(2).all(|w| w[1] <= w[0]), "{:?}", r.costs);
    }
}

#[test]
fn optimum_follows_a_global_transform() {
    let (mut a, _) = circle_graph(9);
    let mut b = a.clone();
    let gauge = Pose::exp(&nalgebra::Vector6::new(0.1, 0.2, -0.3, 10.0, -4.0, 2.0));
    for k in b.keyframes.iter_mut() {
        k.pose = gauge.compose(&k.pose);
    }
    optimize(&mut a, 0).unwrap();
    optimize(&mut b, 0).unwrap();
    for (p, q) in a.keyframes.iter().zip(&b.keyframes) {
        let moved = gauge.compose(&p.pose);
        assert!((moved.translation() - q.pose.translation()).norm() < 1e-8);
        assert!(moved.rotation().angle_to(q.pose.rotation()) < 1e-9);
    }
}

#[test]
fn disconnected_node_is_reported() {
    let mut g = PoseGraph::new();
    for k in 0..4 {
        g.keyframes.push(kf(k, x(k as f64)));
    }
    g.edges = vec![edge(0, 1, x(1.0)), edge(1, 2, x(1.0))];
    let err = optimize(&mut g, 0).unwrap_err();
    assert!(matches!(err, crate::Error::Disconnected(3)));
    assert!(err.to_string().contains('3'));
}

#[test]
fn jacobian_inverse_matches_series() {
    for phi in [Vector3::new(1e-7, 0.0, 0.0), Vector3::new(0.3, -0.2, 0.5), Vector3::new(0.0, 2.5, 0.1)] {
        // Jr⁻¹ Jr = I with Jr from its closed form.
        let th = phi.norm();
        let k = crate::geometry::skew(&phi);
        let jr = nalgebra::Matrix3::identity() - k * ((1.0 - th.cos()) / (th * th))
            + k * k * ((th - th.sin()) / (th * th * th));
        assert!((right_jacobian_inv(&phi) * jr - nalgebra::Matrix3::identity()).amax() < 1e-8);
    }
}

fn line_cloud() -> PointCloud {
    PointCloud::new(vec![Vector3::new(1.0, 2.0, 3.0)])
}

#[test]
fn straight_ten_meters_gives_eleven_keyframes() {
    let cfg = LoopConfig::default();
    let mut g = PoseGraph::new();
    for k in 0..=100 {
        let d = k as f64 * 0.1;
        g.maybe_add_keyframe(Timestamp(d), &x(d), &line_cloud(), d, &cfg);
    }
    assert_eq!(g.len(), 11);
    assert_eq!(g.edges.len(), 10);
    assert!(g.keyframes.windows(2).all(|w| w[0].id < w[1].id));
}

#[test]
fn stationary_robot_keeps_one_keyframe() {
    let cfg = LoopConfig::default();
    let mut g = PoseGraph::new();
    for k in 0..50 {
        g.maybe_add_keyframe(Timestamp(k as f64), &x(0.0), &line_cloud(), 0.0, &cfg);
    }
    assert_eq!(g.len(), 1);
}

#[test]
fn turning_in_place_adds_keyframes() {
    let cfg = LoopConfig::default();
    let mut g = PoseGraph::new();
    for k in 0..=90 {
        let yaw = (k as f64).to_radians();
        g.maybe_add_keyframe(Timestamp(k as f64), &Pose::from_xyz_yaw(0.0, 0.0, 0.0, yaw), &line_cloud(), 0.0, &cfg);
    }
    assert_eq!(g.len(), 7);
}

#[test]
fn guarded_frames_never_become_keyframes() {
    let mut lc = LoopCloser::new(&LoopConfig::default());
    for k in 0..30 {
        let d = k as f64 * 0.5;
        lc.on_frame(Timestamp(k as f64), &x(d), &line_cloud(), k % 2 == 0 && k < 10).unwrap();
    }
    // Inserted frames at 0, 1, 2, 3, 4 m only.
    assert_eq!(lc.graph().len(), 5);
    assert!(lc.graph().keyframes.iter().all(|k| k.accumulated_distance < 5.0));
}

#[test]
fn gates_reject_far_and_recent_keyframes() {
    let cfg = LoopConfig::default();
    let mut g = PoseGraph::new();
    g.keyframes.push(Keyframe { accumulated_distance: 0.0, ..kf(0, x(0.0)) });
    g.keyframes.push(Keyframe { accumulated_distance: 100.0, ..kf(1, x(60.0)) });
    g.keyframes.push(Keyframe { accumulated_distance: 110.0, ..kf(2, x(61.0)) });
    // 60 m from the only old-enough keyframe; 10 m of travel from the other.
    assert!(candidates(&g, 1, &cfg).is_empty());
    assert!(detect_loop(&g, 2, &cfg).is_none());
    assert!(candidates(&g, 2, &LoopConfig { search_range: 70.0, ..cfg.clone() }).iter().all(|c| c.0 == 0));
}

#[test]
fn no_loops_means_no_correction() {
    let mut g = PoseGraph::new();
    let mut live = Trajectory::new();
    for k in 0..20 {
        let p = Pose::from_xyz_yaw(k as f64 * 0.3, 0.1 * k as f64, 0.0, 0.05 * k as f64);
        live.push(Timestamp(k as f64), p).unwrap();
        g.maybe_add_keyframe(Timestamp(k as f64), &p, &line_cloud(), 0.0, &LoopConfig::default());
    }
    let c = propagate_correction(&g, &live);
    assert!(!c.map_rebuild_needed);
    assert!(c.final_correction < 1e-12);
    for (a, b) in c.trajectory.poses().iter().zip(live.poses()) {
        assert_eq!(a.0, b.0);
        assert!((a.1.translation() - b.1.translation()).norm() < 1e-12);
    }
}

#[test]
fn end_correction_is_reported_and_interpolated() {
    let mut g = PoseGraph::new();
    let mut live = Trajectory::new();
    for k in 0..=10 {
        live.push(Timestamp(k as f64), x(k as f64)).unwrap();
    }
    for (id, k) in [0usize, 10].into_iter().enumerate() {
        let mut key = kf(id, x(k as f64));
        key.stamp = Timestamp(k as f64);
        g.keyframes.push(key);
    }
    g.keyframes[1].pose = Pose::from_translation(Vector3::new(10.0, 3.120, 0.0));
    g.edges.push(GraphEdge { kind: EdgeKind::Loop, ..edge(0, 1, x(10.0)) });
    let c = propagate_correction(&g, &live);
    assert!(c.map_rebuild_needed);
    assert!((c.final_correction - 3.120).abs() < 1e-12);
    assert_eq!(format!("{:.3} m", c.final_correction), "3.120 m");
    let mid = c.trajectory.poses()[5].1;
    assert!((mid.translation() - Vector3::new(5.0, 1.56, 0.0)).norm() < 1e-12);
}

/// Keyframes every 2 m around the 200 m canyon loop, with drift growing
/// linearly to 1.2 m and 2° of yaw at the end.
fn canyon_graph() -> (PoseGraph, Vec<Pose>) {
    let spec = TrajectorySpec::canyon_loop(0);
    let motion = Motion::new(&spec).unwrap();
    let scene = Scene::box_canyon();
    let cfg = LoopConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut g = PoseGraph::new();
    let mut truth = Vec::new();
    for k in 0..=100 {
        let s = k as f64 * 2.0;
        let t = motion.pose(s / spec.speed);
        let cloud = raycast_lidar(&scene, &t, 16, 900, 60.0, 0.02, &mut rng).cloud;
        let f = s / 200.0;
        let drift = Pose::from_xyz_yaw(0.8 * f, -0.9 * f, 0.0, (2.0 * f).to_radians());
        let est = t.compose(&drift);
        g.keyframes.push(Keyframe {
            id: k,
            stamp: Timestamp(s / spec.speed),
            pose: est,
            sm_pose: est,
            cloud: crate::spatial::voxel_filter(&cloud, cfg.voxel_leaf_size),
            accumulated_distance: s,
        });
        if k > 0 {
            let rel = g.keyframes[k - 1].pose.inverse().compose(&est);
            g.edges.push(edge(k - 1, k, rel));
        }
        truth.push(t);
    }
    (g, truth)
}

#[test]
fn closes_the_canyon_loop() {
    let (mut g, truth) = canyon_graph();
    let cfg = LoopConfig::default();
    let last = g.len() - 1;
    assert!(!candidates(&g, last, &cfg).is_empty());
    let c = detect_loop(&g, last, &cfg).expect("loop found");
    let expected = truth[c.match_id].inverse().compose(&truth[last]);
    let err = c.relative.inverse().compose(&expected);
    assert!(err.translation().norm() < 0.05, "{:?} fitness {}", err.translation(), c.fitness);
    assert!(err.angle().to_degrees() < 0.5);

    let before = (g.keyframes[last].pose.translation() - truth[last].translation()).norm();
    g.add_loop(&c, &cfg);
    optimize(&mut g, 0).unwrap();
    let after = (g.keyframes[last].pose.translation() - truth[last].translation()).norm();
    assert!(after < 0.5 * before, "{after} vs {before}");
}

#[test]
fn fitness_separates_correct_and_wrong_matches() {
    let (g, truth) = canyon_graph();
    let cfg = LoopConfig::default();
    let last = g.len() - 1;
    let mut correct = Vec::new();
    let mut wrong = Vec::new();
    for &(id, _) in candidates(&g, last, &cfg).iter().take(cfg.num_submap_searched) {
        let (rel, fit) = match_candidate(&g, last, id, &cfg);
        let expected = truth[id].inverse().compose(&truth[last]);
        let err = rel.inverse().compose(&expected).translation().norm();
        if err < 0.1 {
            correct.push(fit);
        } else if err > 1.0 {
            wrong.push(fit);
        }
    }
    // Deliberately misplaced queries against the nearest candidate.
    let id = candidates(&g, last, &cfg)[0].0;
    let map = PointCloud::new(local_map(&g, id, &cfg));
    let grid = crate::ndt::NdtGrid::build(&map, cfg.ndt_resolution);
    let expected = truth[id].inverse().compose(&truth[last]);
    for off in [0.2, 0.5, 1.0, 3.0] {
        let p = expected.compose(&Pose::from_xyz_yaw(off, -off, 0.0, off.to_radians()));
        wrong.push(fitness(&grid, &g.keyframes[last].cloud.points, &p));
    }
    eprintln!("correct {correct:?}\nwrong {wrong:?}");
    assert!(!correct.is_empty());
    assert!(correct.iter().all(|f| *f <= cfg.threshold_loop_closure));
    assert!(wrong.iter().all(|f| *f > cfg.threshold_loop_closure));
}

#[test]
fn acceptance_is_monotone_in_threshold() {
    let (g, _) = canyon_graph();
    let last = g.len() - 1;
    let mut accepted_before = false;
    for th in [1.0, 5.0, 15.0, 40.0, 1e3] {
        let cfg = LoopConfig { threshold_loop_closure: th, ..LoopConfig::default() };
        let found = detect_loop(&g, last, &cfg).is_some();
        assert!(found || !accepted_before);
        accepted_before |= found;
    }
}
