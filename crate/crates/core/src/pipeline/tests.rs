use super::*;
use crate::synth::{generate_dataset, CameraSpec, LidarSpec, NoiseSpec, Scene, TrajectorySpec};

fn dataset(dir: &Path, cameras: bool) {
    let mut spec = TrajectorySpec::canyon_loop(4);
    spec.duration = 3.0;
    spec.noise = NoiseSpec { range: 0.01, gyro: 0.001, odom: 0.02 };
    spec.lidar = LidarSpec { beams: 8, azimuth_steps: 360, max_range: 60.0 };
    if cameras {
        spec.rates.camera = 10.0;
        spec.cameras = vec![CameraSpec::wide("front", 0.0)];
    }
    generate_dataset(&Scene::box_canyon(), &spec, dir).unwrap();
}

fn config() -> Config {
    let mut cfg = Config::default();
    cfg.tsdf.voxel_size = 0.25;
    cfg.tsdf.max_ray_length = 30.0;
    cfg.pipeline.resource_interval = 0.05;
    cfg
}

#[test]
fn writes_all_artifacts() {
    let data = tempfile::tempdir().unwrap();
    dataset(data.path(), true);
    let out = tempfile::tempdir().unwrap();
    let report = run(&config(), data.path(), Some(out.path()), 10).unwrap();
    assert_eq!(report.frames, 30);
    for f in [TRAJECTORY_SM, TRAJECTORY_LC, MESH, RESOURCES, SUMMARY] {
        assert!(out.path().join(f).is_file(), "{f}");
    }
    assert!(out.path().join("mesh_000009.ply").is_file());
    let summary = fs::read_to_string(out.path().join(SUMMARY)).unwrap();
    assert!(summary.contains("Scan matcher final APE"), "{summary}");
    assert!(summary.contains("Loop closure final APE"), "{summary}");
    let mesh = report.mesh.unwrap();
    assert!(!mesh.is_empty());
    // The front camera colors part of the canyon.
    assert!(mesh.vertex_colors.iter().any(|c| *c != [128, 128, 128]));
}

#[test]
fn threaded_and_sequential_runs_agree() {
    let data = tempfile::tempdir().unwrap();
    dataset(data.path(), true);
    let mut cfg = config();
    cfg.pipeline.resource_interval = 0.0;
    let threaded = run(&cfg, data.path(), None, 0).unwrap();
    cfg.pipeline.sequential = true;
    let sequential = run(&cfg, data.path(), None, 0).unwrap();
    assert_eq!(threaded.sm, sequential.sm);
    assert_eq!(threaded.lc, sequential.lc);
    assert_eq!(threaded.mesh, sequential.mesh);
}

#[test]
fn no_cameras_gives_a_gray_mesh() {
    let data = tempfile::tempdir().unwrap();
    dataset(data.path(), false);
    let report = run(&config(), data.path(), None, 0).unwrap();
    let mesh = report.mesh.unwrap();
    assert!(!mesh.is_empty());
    assert!(mesh.vertex_colors.iter().all(|c| *c == [128, 128, 128]));
}

#[test]
fn missing_dataset_names_the_ingest_stage() {
    let err = run(&config(), Path::new("/nonexistent/dataset"), None, 0).unwrap_err();
    assert_eq!(err.stage(), Some("ingest"));
}

#[test]
fn written_trajectories_reproduce_in_process_metrics() {
    let data = tempfile::tempdir().unwrap();
    dataset(data.path(), false);
    let out = tempfile::tempdir().unwrap();
    let mut cfg = config();
    cfg.pipeline.mapping = false;
    let report = run(&cfg, data.path(), Some(out.path()), 0).unwrap();
    assert!(report.mesh.is_none());
    let (sm, lc) = final_drifts(&report).unwrap();
    let sm_file = Trajectory::load(&out.path().join(TRAJECTORY_SM)).unwrap();
    let lc_file = Trajectory::load(&out.path().join(TRAJECTORY_LC)).unwrap();
    assert_eq!(eval::final_drift(&sm_file).unwrap(), sm);
    assert_eq!(eval::final_drift(&lc_file).unwrap(), lc);
}

#[test]
fn fusion_from_ground_truth_meshes_the_scene() {
    let data = tempfile::tempdir().unwrap();
    dataset(data.path(), false);
    let gt = Trajectory::load(&data.path().join("ground_truth.txt")).unwrap();
    let mesh = fuse(&config(), data.path(), &gt, 0.01).unwrap();
    assert!(!mesh.is_empty());
    mesh.validate().unwrap();
}

#[test]
fn colorized_scans_are_written() {
    let data = tempfile::tempdir().unwrap();
    dataset(data.path(), true);
    let out = tempfile::tempdir().unwrap();
    assert_eq!(colorize_dataset(&config(), data.path(), out.path()).unwrap(), 30);
    let first = fs::read_dir(out.path()).unwrap().next().unwrap().unwrap().path();
    let cloud = ply::read_cloud(&first).unwrap();
    assert!(!cloud.is_empty() && cloud.colors.is_some());
}
