//! End-to-end run: ingest → EKF prior + NDT front end → loop closure, and in
//! parallel colorize → TSDF → mesher. Stages are threads joined by bounded
//! queues; the sequential mode runs the same steps on one thread and gives
//! identical output.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::mpsc::{sync_channel, Receiver, SyncSender};
use std::time::Instant;

use crate::colorize::{colorize_scan, undistort_image, ColoredScan};
use crate::config::Config;
use crate::error::{Error, Result, StageExt};
use crate::eval::{self, ResourceLog, ResourceSample, Trajectory};
use crate::geometry::{CameraModel, Image, PointCloud, Pose, Timestamp, TriangleMesh};
use crate::ingest::{self, DatasetManifest, FrameReader, ReaderOptions, SyncedFrame};
use crate::mesher::IncrementalMesher;
use crate::ply;
use crate::pose_graph::{propagate_correction, LoopCloser};
use crate::slam::Frontend;
use crate::tsdf::TsdfVolume;

/// Depth of the queues between stages.
pub const QUEUE_DEPTH: usize = 2;

pub const TRAJECTORY_SM: &str = "trajectory_sm.txt";
pub const TRAJECTORY_LC: &str = "trajectory_lc.txt";
pub const MESH: &str = "mesh.ply";
pub const RESOURCES: &str = "resources.csv";
pub const SUMMARY: &str = "run_summary.txt";

/// Everything a run produced.
#[derive(Clone, Debug)]
pub struct RunReport {
    pub frames: usize,
    pub guarded_frames: usize,
    pub keyframes: usize,
    pub loop_closures: usize,
    /// Front-end poses.
    pub sm: Trajectory,
    /// Loop-closed poses (equal to `sm` without loop closure).
    pub lc: Trajectory,
    pub mesh: Option<TriangleMesh>,
    /// Per-frame front-end wall time, seconds.
    pub slam_times: Vec<f64>,
    /// Per-frame mapping wall time, seconds.
    pub mapping_times: Vec<f64>,
    /// Whole-run wall time, seconds.
    pub wall_time: f64,
    pub resources: Vec<ResourceSample>,
    /// Movement of the final pose caused by loop closure, m.
    pub final_correction: f64,
}

impl RunReport {
    /// Mean wall time per frame across the whole run, seconds.
    pub fn mean_frame_time(&self) -> f64 {
        if self.frames == 0 {
            0.0
        } else {
            self.wall_time / self.frames as f64
        }
    }
}

fn reader_options(cfg: &Config) -> ReaderOptions {
    ReaderOptions {
        max_skew: cfg.ingest.max_skew,
        downsample: cfg.ingest.downsample,
        load_images: cfg.pipeline.mapping,
    }
}

/// Scan handed from the front end to the mapping stage.
struct MapJob {
    index: usize,
    pose: Pose,
    cloud: PointCloud,
    images: Vec<(usize, Image)>,
}

/// Colorize, integrate and periodically export.
struct Mapper<'a> {
    cfg: &'a Config,
    cameras: Vec<CameraModel>,
    volume: TsdfVolume,
    mesher: IncrementalMesher,
    export: Option<(usize, PathBuf)>,
    times: Vec<f64>,
}

impl<'a> Mapper<'a> {
    fn new(cfg: &'a Config, manifest: &DatasetManifest, export: Option<(usize, PathBuf)>) -> Result<Self> {
        Ok(Mapper {
            cfg,
            cameras: manifest.cameras.iter().map(|c| c.model.clone()).collect(),
            volume: TsdfVolume::new(&cfg.tsdf)?,
            mesher: IncrementalMesher::new(),
            export,
            times: Vec::new(),
        })
    }

    fn colored(&self, cloud: &PointCloud, images: &[(usize, Image)]) -> ColoredScan {
        if images.is_empty() {
            return ColoredScan::from_cloud(cloud);
        }
        let undistorted: Vec<(CameraModel, Image)> = images
            .iter()
            .map(|(ci, img)| {
                let cam = self.cameras[*ci].clone();
                let img = undistort_image(img, &cam);
                (cam, img)
            })
            .collect();
        colorize_scan(cloud, &undistorted, &self.cfg.colorize)
    }

    fn process(&mut self, job: MapJob) -> Result<()> {
        let start = Instant::now();
        let scan = self.colored(&job.cloud, &job.images);
        self.volume.integrate_scan(&scan, &job.pose);
        if let Some((every, dir)) = &self.export {
            if *every > 0 && (job.index + 1) % every == 0 {
                let dirty = self.volume.take_dirty();
                self.mesher.update(&self.volume, &dirty);
                ply::write_mesh(&self.mesher.mesh(), &dir.join(format!("mesh_{:06}.ply", job.index)))?;
            }
        }
        self.times.push(start.elapsed().as_secs_f64());
        Ok(())
    }

    fn finish(mut self) -> (TriangleMesh, Vec<f64>) {
        let dirty = self.volume.take_dirty();
        self.mesher.update(&self.volume, &dirty);
        (self.mesher.mesh(), self.times)
    }
}

/// Front end plus loop closer.
struct Localizer {
    frontend: Frontend,
    closer: LoopCloser,
    sm: Trajectory,
    times: Vec<f64>,
}

impl Localizer {
    fn new(cfg: &Config) -> Self {
        Localizer {
            frontend: Frontend::new(&cfg.slam, &cfg.ekf),
            closer: LoopCloser::new(&cfg.loop_closure),
            sm: Trajectory::new(),
            times: Vec::new(),
        }
    }

    fn process(&mut self, frame: &SyncedFrame) -> Result<Pose> {
        let start = Instant::now();
        let est = self.frontend.process(frame).stage("slam")?;
        self.closer.on_frame(est.stamp, &est.pose, &est.scan, est.inserted).stage("loop_closure")?;
        self.sm.push(est.stamp, est.pose).stage("slam")?;
        self.times.push(start.elapsed().as_secs_f64());
        Ok(est.pose)
    }
}

fn map_job(frame: SyncedFrame, pose: Pose) -> MapJob {
    MapJob { index: frame.index, pose, cloud: frame.scan.cloud, images: frame.images }
}

struct Stages {
    localizer: Localizer,
    mesh: Option<TriangleMesh>,
    mapping_times: Vec<f64>,
}

fn run_sequential(cfg: &Config, manifest: &DatasetManifest, export: Option<(usize, PathBuf)>) -> Result<Stages> {
    let mut localizer = Localizer::new(cfg);
    let mut mapper = if cfg.pipeline.mapping { Some(Mapper::new(cfg, manifest, export).stage("mapping")?) } else { None };
    for frame in FrameReader::new(manifest, reader_options(cfg)) {
        let pose = localizer.process(&frame)?;
        if let Some(m) = mapper.as_mut() {
            m.process(map_job(frame, pose)).stage("mapping")?;
        }
    }
    let (mesh, mapping_times) = match mapper {
        Some(m) => {
            let (mesh, t) = m.finish();
            (Some(mesh), t)
        }
        None => (None, Vec::new()),
    };
    Ok(Stages { localizer, mesh, mapping_times })
}

fn ingest_stage(manifest: &DatasetManifest, opts: ReaderOptions, tx: SyncSender<SyncedFrame>) {
    for frame in FrameReader::new(manifest, opts) {
        if tx.send(frame).is_err() {
            return;
        }
    }
}

fn slam_stage(cfg: &Config, rx: Receiver<SyncedFrame>, tx: Option<SyncSender<MapJob>>) -> Result<Localizer> {
    let mut localizer = Localizer::new(cfg);
    for frame in rx {
        let pose = localizer.process(&frame)?;
        if let Some(tx) = &tx {
            if tx.send(map_job(frame, pose)).is_err() {
                // The mapping stage failed; its error is reported on join.
                break;
            }
        }
    }
    Ok(localizer)
}

fn mapping_stage(mut mapper: Mapper<'_>, rx: Receiver<MapJob>) -> Result<(TriangleMesh, Vec<f64>)> {
    for job in rx {
        mapper.process(job).stage("mapping")?;
    }
    Ok(mapper.finish())
}

fn run_threaded(cfg: &Config, manifest: &DatasetManifest, export: Option<(usize, PathBuf)>) -> Result<Stages> {
    let mapper = if cfg.pipeline.mapping { Some(Mapper::new(cfg, manifest, export).stage("mapping")?) } else { None };
    std::thread::scope(|s| {
        let (frame_tx, frame_rx) = sync_channel(QUEUE_DEPTH);
        let opts = reader_options(cfg);
        s.spawn(move || ingest_stage(manifest, opts, frame_tx));
        let (job_tx, mapping) = match mapper {
            Some(mapper) => {
                let (tx, rx) = sync_channel(QUEUE_DEPTH);
                (Some(tx), Some(s.spawn(move || mapping_stage(mapper, rx))))
            }
            None => (None, None),
        };
        let localizer = slam_stage(cfg, frame_rx, job_tx);
        let mapped = mapping.map(|h| h.join().unwrap_or_else(|_| Err(Error::invalid("mapping thread panicked").in_stage("mapping"))));
        let localizer = localizer?;
        let (mesh, mapping_times) = match mapped {
            Some(r) => {
                let (m, t) = r?;
                (Some(m), t)
            }
            None => (None, Vec::new()),
        };
        Ok(Stages { localizer, mesh, mapping_times })
    })
}

/// Runs the pipeline over the dataset at `dataset`. With `out`, writes the
/// trajectories, mesh, resource log and summary there; `export_every` > 0 also
/// writes `mesh_<frame>.ply` snapshots.
pub fn run(cfg: &Config, dataset: &Path, out: Option<&Path>, export_every: usize) -> Result<RunReport> {
    cfg.validate().stage("config")?;
    let manifest = ingest::load_manifest(dataset).stage("ingest")?;
    if let Some(out) = out {
        fs::create_dir_all(out).map_err(|e| Error::io(out, e)).stage("output")?;
    }
    let export = out.map(|o| (export_every, o.to_path_buf()));
    let log = if cfg.pipeline.resource_interval > 0.0 { ResourceLog::start(cfg.pipeline.resource_interval) } else { None };
    let start = Instant::now();
    let stages = if cfg.pipeline.sequential {
        run_sequential(cfg, &manifest, export)
    } else {
        run_threaded(cfg, &manifest, export)
    };
    let wall_time = start.elapsed().as_secs_f64();
    let resources = log.map(ResourceLog::finish).unwrap_or_default();
    let Stages { localizer, mesh, mapping_times } = stages?;

    let graph = localizer.closer.graph();
    let (lc, final_correction) = if cfg.loop_closure.enabled {
        let c = propagate_correction(graph, &localizer.sm);
        (c.trajectory, c.final_correction)
    } else {
        (localizer.sm.clone(), 0.0)
    };
    let report = RunReport {
        frames: localizer.sm.len(),
        guarded_frames: localizer.frontend.guarded_frames(),
        keyframes: graph.len(),
        loop_closures: localizer.closer.accepted_loops().len(),
        sm: localizer.sm,
        lc,
        mesh,
        slam_times: localizer.times,
        mapping_times,
        wall_time,
        resources,
        final_correction,
    };
    if let Some(out) = out {
        write_outputs(&report, &manifest, out).stage("output")?;
    }
    Ok(report)
}

/// Front-end and loop-closed final drift, computed on the trajectories as
/// written to text so the numbers match a later `eval-traj` exactly.
pub fn final_drifts(report: &RunReport) -> Result<(f64, f64)> {
    let round_trip = |t: &Trajectory| Trajectory::parse(&t.to_text(), Path::new("<memory>"));
    Ok((eval::final_drift(&round_trip(&report.sm)?)?, eval::final_drift(&round_trip(&report.lc)?)?))
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

pub fn summary_text(report: &RunReport, manifest: Option<&DatasetManifest>) -> Result<String> {
    let mut s = String::new();
    let _ = writeln!(s, "Frames processed: {}", report.frames);
    let _ = writeln!(s, "Guard rejections: {}", report.guarded_frames);
    let _ = writeln!(s, "Keyframes: {}", report.keyframes);
    let _ = writeln!(s, "Loop closures: {}", report.loop_closures);
    if report.frames >= 2 {
        let (sm, lc) = final_drifts(report)?;
        let _ = writeln!(s, "Scan matcher final APE {sm:.3} m");
        let _ = writeln!(s, "Loop closure final APE {lc:.3} m");
    }
    let _ = writeln!(s, "Loop closure final correction {:.3} m", report.final_correction);
    if let Some(gt) = manifest.and_then(|m| Trajectory::load(&m.root.join("ground_truth.txt")).ok()) {
        for (name, t) in [("SM", &report.sm), ("LC", &report.lc)] {
            if let Ok(a) = eval::ate(t, &gt, true, 0.02) {
                let _ = writeln!(s, "LidarSlam {name} ATE {:.3} m", a.rmse);
            }
        }
    }
    if let Some(mesh) = &report.mesh {
        let _ = writeln!(s, "Mesh: {} vertices, {} triangles", mesh.vertices.len(), mesh.triangles.len());
    }
    let _ = writeln!(s, "Mean frame time {:.1} ms (front end {:.1} ms, mapping {:.1} ms)",
        report.mean_frame_time() * 1e3, mean(&report.slam_times) * 1e3, mean(&report.mapping_times) * 1e3);
    if let Some(r) = eval::summarize(&report.resources) {
        let _ = writeln!(s, "{r}");
    }
    Ok(s)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_outputs(report: &RunReport, manifest: &DatasetManifest, out: &Path) -> Result<()> {
    report.sm.save(&out.join(TRAJECTORY_SM))?;
    report.lc.save(&out.join(TRAJECTORY_LC))?;
    if let Some(mesh) = &report.mesh {
        ply::write_mesh(mesh, &out.join(MESH))?;
    }
    write_text(&out.join(RESOURCES), &eval::resources_csv(&report.resources))?;
    write_text(&out.join(SUMMARY), &summary_text(report, Some(manifest))?)
}

/// Fuses the dataset's scans at the poses of `trajectory` (matched by stamp)
/// and meshes the result. Scans without a pose within `max_gap` are skipped.
pub fn fuse(cfg: &Config, dataset: &Path, trajectory: &Trajectory, max_gap: f64) -> Result<TriangleMesh> {
    let manifest = ingest::load_manifest(dataset).stage("ingest")?;
    let mut mapper = Mapper::new(cfg, &manifest, None).stage("mapping")?;
    let stamps: Vec<f64> = trajectory.stamps().map(|s| s.secs()).collect();
    let opts = ReaderOptions { load_images: true, ..reader_options(cfg) };
    for frame in FrameReader::new(&manifest, opts) {
        let t = frame.scan.stamp.secs();
        let i = stamps.partition_point(|&s| s < t);
        let best = [i.wrapping_sub(1), i]
            .into_iter()
            .filter(|&j| j < stamps.len())
            .min_by(|&a, &b| (stamps[a] - t).abs().total_cmp(&(stamps[b] - t).abs()));
        let Some(j) = best.filter(|&j| (stamps[j] - t).abs() <= max_gap) else { continue };
        let pose = trajectory.poses()[j].1;
        mapper.process(map_job(frame, pose)).stage("mapping")?;
    }
    Ok(mapper.finish().0)
}

/// Writes each scan, colorized from its associated images, as
/// `<out>/<stamp>.ply` in the sensor frame. Returns the number written.
pub fn colorize_dataset(cfg: &Config, dataset: &Path, out: &Path) -> Result<usize> {
    let manifest = ingest::load_manifest(dataset).stage("ingest")?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e)).stage("output")?;
    let mapper = Mapper::new(cfg, &manifest, None).stage("colorize")?;
    let opts = ReaderOptions { load_images: true, ..reader_options(cfg) };
    let mut n = 0;
    for frame in FrameReader::new(&manifest, opts) {
        let colored = mapper.colored(&frame.scan.cloud, &frame.images);
        let path = out.join(format!("{}.ply", Timestamp::to_file_stem(frame.scan.stamp)));
        ply::write_cloud(&colored.to_cloud(), &path).stage("output")?;
        n += 1;
    }
    Ok(n)
}

#[cfg(test)]
mod tests;
