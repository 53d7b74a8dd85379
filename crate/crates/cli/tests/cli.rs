use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lidarmesh::config::IntegrationMethod;
use lidarmesh::pipeline::{self, MESH, RESOURCES, SUMMARY, TRAJECTORY_LC, TRAJECTORY_SM};
use lidarmesh::synth::{CameraSpec, LidarSpec, NoiseSpec, SynthConfig};
use lidarmesh::Config;

fn lidarmesh(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lidarmesh")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Three seconds of the canyon loop with a sparse LiDAR and one camera.
fn small_synth() -> SynthConfig {
    let mut c = SynthConfig::canyon_loop(3);
    let t = &mut c.trajectory;
    t.duration = 3.0;
    t.noise = NoiseSpec { range: 0.01, gyro: 0.001, odom: 0.02 };
    t.lidar = LidarSpec { beams: 8, azimuth_steps: 360, max_range: 60.0 };
    t.rates.camera = 10.0;
    t.cameras = vec![CameraSpec::wide("front", 0.0)];
    c
}

fn small_config() -> Config {
    let mut cfg = Config::default();
    cfg.tsdf.voxel_size = 0.25;
    cfg.tsdf.max_ray_length = 30.0;
    cfg.pipeline.resource_interval = 0.05;
    cfg
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        fs::write(root.join("synth.toml"), small_synth().to_toml_string()).unwrap();
        fs::write(root.join("pipeline.toml"), small_config().to_toml_string()).unwrap();
        let o = lidarmesh(&["synth", "--config", p(&root.join("synth.toml")), "--out", p(&root.join("data"))]);
        assert!(stdout(&o).contains("30 scans"));
        Fixture { _dir: dir, root }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }
}

#[test]
fn run_writes_artifacts_and_eval_traj_reproduces_them() {
    let f = Fixture::new();
    let out = f.path("out");
    let o = lidarmesh(&[
        "run", "--config", p(&f.path("pipeline.toml")), "--dataset", p(&f.path("data")), "--out", p(&out),
        "--export-every", "10",
    ]);
    let text = stdout(&o);
    assert!(text.contains("Scan matcher final APE") && text.contains("Loop closure final APE"), "{text}");
    for a in [TRAJECTORY_SM, TRAJECTORY_LC, MESH, RESOURCES, SUMMARY] {
        assert!(out.join(a).is_file(), "{a}");
    }
    assert!(out.join("mesh_000009.ply").is_file());

    let report = pipeline::run(&small_config(), &f.path("data"), None, 0).unwrap();
    let (sm, lc) = pipeline::final_drifts(&report).unwrap();
    for (file, value) in [(TRAJECTORY_SM, sm), (TRAJECTORY_LC, lc)] {
        let text = stdout(&lidarmesh(&["eval-traj", "--est", p(&out.join(file))]));
        assert_eq!(text.lines().next().unwrap(), format!("final_drift: {value:.9} m"));
    }

    let gt = f.path("data").join("ground_truth.txt");
    let text = stdout(&lidarmesh(&["eval-traj", "--est", p(&out.join(TRAJECTORY_SM)), "--reference", p(&gt)]));
    assert!(text.contains("ATE: rmse") && text.contains("RPE"), "{text}");
}

#[test]
fn slam_writes_no_mesh() {
    let f = Fixture::new();
    let out = f.path("out");
    let o = lidarmesh(&["slam", "--dataset", p(&f.path("data")), "--out", p(&out), "--no-loop-closure"]);
    stdout(&o);
    assert!(out.join(TRAJECTORY_SM).is_file());
    assert!(!out.join(MESH).exists());
    // Without loop closure the two trajectories coincide.
    assert_eq!(fs::read(out.join(TRAJECTORY_SM)).unwrap(), fs::read(out.join(TRAJECTORY_LC)).unwrap());
}

#[test]
fn mesh_from_ground_truth_and_eval_mesh() {
    let f = Fixture::new();
    let data = f.path("data");
    let out = f.path("fused");
    let o = lidarmesh(&[
        "mesh", "--config", p(&f.path("pipeline.toml")), "--dataset", p(&data), "--trajectory",
        p(&data.join("ground_truth.txt")), "--out", p(&out),
    ]);
    assert!(stdout(&o).starts_with("Mesh: "));
    let mesh = out.join(MESH);
    let text = stdout(&lidarmesh(&["eval-mesh", "--eval", p(&mesh), "--reference", p(&mesh)]));
    // Cylinder averaging leaves a small residual at corners even against itself.
    let mean: f64 = text.strip_prefix("Mean = ").unwrap().split(' ').next().unwrap().parse().unwrap();
    assert!(mean < 0.05, "{text}");
    let kept = text.lines().last().unwrap();
    let words: Vec<&str> = kept.split(' ').collect();
    assert_eq!(words[1], words[3], "{text}");
}

#[test]
fn colorize_writes_one_cloud_per_scan() {
    let f = Fixture::new();
    let out = f.path("colored");
    let o = lidarmesh(&["colorize", "--dataset", p(&f.path("data")), "--out", p(&out)]);
    assert!(stdout(&o).starts_with("30 colored scans"));
    assert_eq!(fs::read_dir(&out).unwrap().count(), 30);
}

#[test]
fn synth_is_reproducible_for_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("synth.toml");
    let mut c = small_synth();
    c.trajectory.duration = 1.0;
    c.trajectory.cameras.clear();
    fs::write(&cfg, c.to_toml_string()).unwrap();
    let gen = |name: &str, seed: &str| {
        let out = dir.path().join(name);
        stdout(&lidarmesh(&["synth", "--config", p(&cfg), "--out", p(&out), "--seed", seed]));
        let first = fs::read_dir(out.join("lidar")).unwrap().map(|e| e.unwrap().path()).min().unwrap();
        fs::read(first).unwrap()
    };
    let a = gen("a", "7");
    assert_eq!(a, gen("b", "7"));
    assert_ne!(a, gen("c", "8"));
}

#[test]
fn missing_dataset_names_the_ingest_stage() {
    let dir = tempfile::tempdir().unwrap();
    let o = lidarmesh(&["run", "--dataset", "/nonexistent/dataset", "--out", p(dir.path())]);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("stage ingest failed"), "{err}");
}

#[test]
fn bad_config_names_the_config_stage() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "[slam]\nndt_resolution = -1.0\n").unwrap();
    let o = lidarmesh(&["run", "--config", p(&cfg), "--dataset", p(dir.path()), "--out", p(dir.path())]);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("stage config failed"), "{err}");
}

fn preset(name: &str) -> Config {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    Config::load(&path).unwrap()
}

#[test]
fn presets_encode_the_parameter_table() {
    let summit = preset("summit.cfg");
    let d = Config::default();
    assert_eq!((summit.slam, summit.loop_closure, summit.tsdf), (d.slam, d.loop_closure, d.tsdf));

    let nc = preset("newer_college.cfg");
    assert_eq!(nc.slam.ndt_resolution, 1.5);
    assert_eq!(nc.loop_closure.detection_period, 7500.0);
    assert_eq!((nc.loop_closure.num_submap_searched, nc.loop_closure.num_adjacent_pose_constraints), (10, 10));
    assert_eq!((nc.tsdf.voxel_size, nc.tsdf.voxels_per_side), (0.2, 4));
    assert!(nc.tsdf.carving);
    assert_eq!(nc.tsdf.method, IntegrationMethod::Fast);
    assert_eq!(nc.tsdf.min_ray_length, 2.0);

    let scout = preset("scout.cfg");
    assert_eq!(scout.slam.ndt_resolution, 0.8);
    assert_eq!((scout.slam.min_range, scout.slam.max_range), (3.0, 100.0));
    assert_eq!(scout.tsdf.voxel_size, 0.15);
    assert_eq!(scout.tsdf.min_ray_length, 0.0);
}
