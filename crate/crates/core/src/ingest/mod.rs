//! On-disk dataset layout and cross-sensor time association.
//!
//! ```text
//! <root>/lidar/<sec>.<nanos>.ply        one scan per file (sensor frame)
//! <root>/imu.csv                        stamp,qw,qx,qy,qz,wx,wy,wz,ax,ay,az
//! <root>/odom.csv                       stamp,forward_velocity
//! <root>/cameras/<name>/calibration.txt
//! <root>/cameras/<name>/<sec>.<nanos>.png
//! <root>/ground_truth.txt               optional, trajectory format
//! ```
//! Cameras are indexed in lexical order of their directory names.

pub mod calib;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Quaternion, UnitQuaternion, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{CameraModel, Image, ImuSample, LidarScan, PointCloud, Timestamp, WheelOdomSample};
use crate::ply;

pub use calib::{format_calibration, parse_calibration};

pub const IMU_HEADER: &str = "stamp,qw,qx,qy,qz,wx,wy,wz,ax,ay,az";
pub const ODOM_HEADER: &str = "stamp,forward_velocity";

#[derive(Clone, Debug, PartialEq)]
pub struct CameraStream {
    pub name: String,
    pub model: CameraModel,
    /// Sorted by stamp.
    pub images: Vec<(Timestamp, PathBuf)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    /// Sorted by stamp.
    pub scans: Vec<(Timestamp, PathBuf)>,
    pub imu: Vec<ImuSample>,
    pub odom: Vec<WheelOdomSample>,
    pub cameras: Vec<CameraStream>,
}

fn not_found(what: &str, path: &Path) -> Error {
    Error::NotFound { what: what.to_string(), path: path.to_path_buf() }
}

fn stamped_files(dir: &Path, ext: &str) -> Result<Vec<(Timestamp, PathBuf)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some(ext) {
            continue;
        }
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("");
        let stamp = Timestamp::parse(stem)
            .ok_or_else(|| Error::format(&path, "file name is not a <seconds>.<nanos> timestamp"))?;
        out.push((stamp, path));
    }
    out.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
    Ok(out)
}

fn read_csv(path: &Path, header: &str, cols: usize) -> Result<Vec<(usize, Timestamp, Vec<f64>)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = line.trim();
        if line.is_empty() || (i == 0 && line == header) {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != cols {
            return Err(Error::parse(path, line_no, format!("expected {cols} columns, found {}", fields.len())));
        }
        let stamp = Timestamp::parse(fields[0]).ok_or_else(|| Error::parse(path, line_no, "bad stamp"))?;
        let vals = fields[1..]
            .iter()
            .map(|f| f.parse::<f64>().map_err(|_| Error::parse(path, line_no, format!("'{f}' is not a number"))))
            .collect::<Result<Vec<f64>>>()?;
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::parse(path, line_no, "non-finite value"));
        }
        if let Some((_, prev, _)) = rows.last() {
            if stamp < *prev {
                return Err(Error::parse(path, line_no, "stamps must be non-decreasing"));
            }
        }
        rows.push((line_no, stamp, vals));
    }
    Ok(rows)
}

pub fn read_imu_csv(path: &Path) -> Result<Vec<ImuSample>> {
    read_csv(path, IMU_HEADER, 11)?
        .into_iter()
        .map(|(line, stamp, v)| {
            let q = Quaternion::new(v[0], v[1], v[2], v[3]);
            let n = q.norm();
            if (n - 1.0).abs() > 1e-6 {
                return Err(Error::parse(path, line, "orientation quaternion is not unit-norm"));
            }
            Ok(ImuSample {
                stamp,
                orientation: UnitQuaternion::new_unchecked(q),
                angular_velocity: Vector3::new(v[4], v[5], v[6]),
                linear_acceleration: Vector3::new(v[7], v[8], v[9]),
            })
        })
        .collect()
}

pub fn read_odom_csv(path: &Path) -> Result<Vec<WheelOdomSample>> {
    Ok(read_csv(path, ODOM_HEADER, 2)?
        .into_iter()
        .map(|(_, stamp, v)| WheelOdomSample { stamp, forward_velocity: v[0] })
        .collect())
}

pub fn format_imu_csv(samples: &[ImuSample]) -> String {
    let mut s = String::with_capacity(samples.len() * 160);
    s.push_str(IMU_HEADER);
    s.push('\n');
    for m in samples {
        let q = m.orientation.quaternion();
        let (w, a) = (m.angular_velocity, m.linear_acceleration);
        let _ = writeln!(
            s,
            "{},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?}",
            m.stamp, q.w, q.i, q.j, q.k, w.x, w.y, w.z, a.x, a.y, a.z
        );
    }
    s
}

pub fn format_odom_csv(samples: &[WheelOdomSample]) -> String {
    let mut s = String::from(ODOM_HEADER);
    s.push('\n');
    for m in samples {
        let _ = writeln!(s, "{},{:?}", m.stamp, m.forward_velocity);
    }
    s
}

pub fn read_png(path: &Path, stamp: Timestamp) -> Result<Image> {
    let img = image::open(path).map_err(|e| Error::format(path, e.to_string()))?.to_rgb8();
    let (width, height) = img.dimensions();
    let pixels = img.pixels().map(|p| p.0).collect();
    Ok(Image { stamp, width, height, pixels })
}

pub fn write_png(img: &Image, path: &Path) -> Result<()> {
    let raw: Vec<u8> = img.pixels.iter().flat_map(|p| p.iter().copied()).collect();
    let buf = image::RgbImage::from_raw(img.width, img.height, raw)
        .ok_or_else(|| Error::invalid("pixel buffer length does not match image size"))?;
    buf.save_with_format(path, image::ImageFormat::Png).map_err(|e| Error::format(path, e.to_string()))
}

/// Validates the layout under `root` and loads the IMU, odometry and
/// calibration data. Scans and images are read lazily by [`FrameReader`].
pub fn load_manifest(root: &Path) -> Result<DatasetManifest> {
    if !root.is_dir() {
        return Err(not_found("dataset directory", root));
    }
    let lidar_dir = root.join("lidar");
    if !lidar_dir.is_dir() {
        return Err(not_found("lidar stream", &lidar_dir));
    }
    let scans = stamped_files(&lidar_dir, "ply")?;
    if scans.is_empty() {
        return Err(not_found("lidar scans", &lidar_dir));
    }
    let imu_path = root.join("imu.csv");
    if !imu_path.is_file() {
        return Err(not_found("imu stream", &imu_path));
    }
    let odom_path = root.join("odom.csv");
    if !odom_path.is_file() {
        return Err(not_found("odom stream", &odom_path));
    }
    let imu = read_imu_csv(&imu_path)?;
    let odom = read_odom_csv(&odom_path)?;

    let mut cameras = Vec::new();
    let cam_root = root.join("cameras");
    if cam_root.is_dir() {
        let mut dirs: Vec<PathBuf> = fs::read_dir(&cam_root)
            .map_err(|e| Error::io(&cam_root, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        dirs.sort();
        for dir in dirs {
            let calib_path = dir.join("calibration.txt");
            let text = fs::read_to_string(&calib_path).map_err(|e| match e.kind() {
                std::io::ErrorKind::NotFound => not_found("camera calibration", &calib_path),
                _ => Error::io(&calib_path, e),
            })?;
            let model = parse_calibration(&text, &calib_path)?;
            let images = stamped_files(&dir, "png")?;
            let name = dir.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
            cameras.push(CameraStream { name, model, images });
        }
    }
    Ok(DatasetManifest { root: root.to_path_buf(), scans, imu, odom, cameras })
}

/// One LiDAR scan with the sensor data associated to it.
#[derive(Clone, Debug, PartialEq)]
pub struct SyncedFrame {
    /// Position of the scan in the manifest.
    pub index: usize,
    pub scan: LidarScan,
    /// `(camera index, image)` for every camera with an image within `max_skew`.
    pub images: Vec<(usize, Image)>,
    /// IMU samples with stamps in (previous frame stamp, scan stamp].
    pub imu: Vec<ImuSample>,
    /// Odometry samples with stamps in (previous frame stamp, scan stamp].
    pub odom: Vec<WheelOdomSample>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReaderOptions {
    pub max_skew: f64,
    pub downsample: usize,
    pub load_images: bool,
}

impl Default for ReaderOptions {
    fn default() -> Self {
        ReaderOptions { max_skew: 0.05, downsample: 1, load_images: true }
    }
}

/// Position within a manifest's streams.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Cursor {
    pub scan: usize,
    pub imu: usize,
    pub odom: usize,
}

/// Keeps every `n`-th point in index order.
pub fn downsample_cloud(cloud: &PointCloud, n: usize) -> PointCloud {
    assert!(n >= 1, "downsample factor must be at least 1");
    if n == 1 {
        return cloud.clone();
    }
    PointCloud {
        points: cloud.points.iter().step_by(n).copied().collect(),
        colors: cloud.colors.as_ref().map(|c| c.iter().step_by(n).copied().collect()),
    }
}

fn nearest(stamps: &[(Timestamp, PathBuf)], t: Timestamp) -> Option<usize> {
    if stamps.is_empty() {
        return None;
    }
    let i = stamps.partition_point(|(s, _)| *s < t);
    let mut best = None::<(usize, f64)>;
    for j in [i.wrapping_sub(1), i] {
        if let Some((s, _)) = stamps.get(j) {
            let d = (s.0 - t.0).abs();
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((j, d));
            }
        }
    }
    best.map(|(j, _)| j)
}

/// Yields the next synced frame after `cursor` and advances it, or `None` at
/// the end of the LiDAR stream. Unreadable scans are skipped with a warning;
/// their IMU and odometry samples roll into the next yielded frame.
pub fn next_frame(manifest: &DatasetManifest, cursor: &mut Cursor, opts: &ReaderOptions) -> Option<SyncedFrame> {
    while cursor.scan < manifest.scans.len() {
        let index = cursor.scan;
        let (stamp, path) = &manifest.scans[index];
        cursor.scan += 1;
        let mut cloud = match ply::read_cloud(path) {
            Ok(c) => c,
            Err(e) => {
                log::warn!("skipping scan {}: {e}", path.display());
                continue;
            }
        };
        cloud.retain_finite();
        let cloud = downsample_cloud(&cloud, opts.downsample);

        let imu_end = cursor.imu + manifest.imu[cursor.imu..].partition_point(|m| m.stamp <= *stamp);
        let odom_end = cursor.odom + manifest.odom[cursor.odom..].partition_point(|m| m.stamp <= *stamp);
        let imu = manifest.imu[cursor.imu..imu_end].to_vec();
        let odom = manifest.odom[cursor.odom..odom_end].to_vec();
        cursor.imu = imu_end;
        cursor.odom = odom_end;

        let mut images = Vec::new();
        if opts.load_images {
            for (ci, cam) in manifest.cameras.iter().enumerate() {
                let Some(j) = nearest(&cam.images, *stamp) else { continue };
                let (istamp, ipath) = &cam.images[j];
                if (istamp.0 - stamp.0).abs() > opts.max_skew {
                    continue;
                }
                match read_png(ipath, *istamp) {
                    Ok(img) => images.push((ci, img)),
                    Err(e) => log::warn!("skipping image {}: {e}", ipath.display()),
                }
            }
        }
        return Some(SyncedFrame { index, scan: LidarScan { stamp: *stamp, cloud }, images, imu, odom });
    }
    None
}

/// Iterator over a manifest's synced frames.
pub struct FrameReader<'a> {
    manifest: &'a DatasetManifest,
    cursor: Cursor,
    opts: ReaderOptions,
}

impl<'a> FrameReader<'a> {
    pub fn new(manifest: &'a DatasetManifest, opts: ReaderOptions) -> Self {
        FrameReader { manifest, cursor: Cursor::default(), opts }
    }
}

impl Iterator for FrameReader<'_> {
    type Item = SyncedFrame;
    fn next(&mut self) -> Option<SyncedFrame> {
        next_frame(self.manifest, &mut self.cursor, &self.opts)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Pose;

    fn write_fixture(root: &Path, scans: &[f64], images: &[f64], imu_hz: f64) {
        fs::create_dir_all(root.join("lidar")).unwrap();
        for &t in scans {
            let stamp = Timestamp::from_nanos((t * 1e9).round() as i64);
            let cloud = PointCloud::new(vec![Vector3::new(1.0, 2.0, 3.0), Vector3::new(-4.0, 0.5, 1.0)]);
            ply::write_cloud(&cloud, &root.join("lidar").join(format!("{stamp}.ply"))).unwrap();
        }
        let end = scans.last().copied().unwrap_or(0.0);
        let n = (end * imu_hz).round() as i64;
        let imu: Vec<ImuSample> = (0..=n)
            .map(|k| ImuSample {
                stamp: Timestamp::from_nanos((k as f64 * 1e9 / imu_hz).round() as i64),
                orientation: UnitQuaternion::identity(),
                angular_velocity: Vector3::zeros(),
                linear_acceleration: Vector3::new(0.0, 0.0, 9.81),
            })
            .collect();
        fs::write(root.join("imu.csv"), format_imu_csv(&imu)).unwrap();
        let odom = vec![WheelOdomSample { stamp: Timestamp(0.0), forward_velocity: 1.0 }];
        fs::write(root.join("odom.csv"), format_odom_csv(&odom)).unwrap();
        if !images.is_empty() {
            let cam_dir = root.join("cameras").join("cam0");
            fs::create_dir_all(&cam_dir).unwrap();
            let cam = CameraModel {
                fx: 10.0,
                fy: 10.0,
                cx: 2.0,
                cy: 2.0,
                distortion: [0.0; 5],
                width: 4,
                height: 4,
                t_lidar_camera: Pose::identity(),
            };
            fs::write(cam_dir.join("calibration.txt"), format_calibration(&cam)).unwrap();
            for &t in images {
                let stamp = Timestamp::from_nanos((t * 1e9).round() as i64);
                write_png(&Image::new(stamp, 4, 4, [9, 8, 7]), &cam_dir.join(format!("{stamp}.png"))).unwrap();
            }
        }
    }

    #[test]
    fn image_association_by_skew() {
        let dir = tempfile::tempdir().unwrap();
        write_fixture(dir.path(), &[0.0, 0.1, 0.2], &[0.005, 0.105], 400.0);
        let m = load_manifest(dir.path()).unwrap();
        let opts = ReaderOptions { max_skew: 0.02, ..Default::default() };
        let frames: Vec<_> = FrameReader::new(&m, opts).collect();
        assert_eq!(frames.len(), 3);
        assert_eq!(frames.iter().map(|f| f.images.len()).collect::<Vec<_>>(), vec![1, 1, 0]);
        assert_eq!(frames[0].images[0].1.pixels[0], [9, 8, 7]);
    }

    #[test]
    fn no_cameras_is_valid() {
        let dir = tempfile::tempdir().unwrap();
        write_fixture(dir.path(), &[0.0, 0.1], &[], 400.0);
        let m = load_manifest(dir.path()).unwrap();
        assert!(m.cameras.is_empty());
        assert!(FrameReader::new(&m, ReaderOptions::default()).all(|f| f.images.is_empty()));
    }

    #[test]
    fn imu_samples_partitioned_across_frames() {
        let dir = tempfile::tempdir().unwrap();
        let scans: Vec<f64> = (0..11).map(|k| k as f64 * 0.1).collect();
        write_fixture(dir.path(), &scans, &[], 400.0);
        let m = load_manifest(dir.path()).unwrap();
        let frames: Vec<_> = FrameReader::new(&m, ReaderOptions::default()).collect();
        let total: usize = frames.iter().map(|f| f.imu.len()).sum();
        assert_eq!(total, m.imu.len());
        for f in &frames[1..] {
            assert!((39..=41).contains(&f.imu.len()), "frame {} has {}", f.index, f.imu.len());
        }
        // Stamps strictly increase across frames.
        assert!(frames.windows(2).all(|w| w[0].scan.stamp < w[1].scan.stamp));
        let again: Vec<_> = FrameReader::new(&m, ReaderOptions::default()).collect();
        assert_eq!(frames, again);
    }

    #[test]
    fn missing_imu_is_named() {
        let dir = tempfile::tempdir().unwrap();
        write_fixture(dir.path(), &[0.0], &[], 400.0);
        fs::remove_file(dir.path().join("imu.csv")).unwrap();
        let err = load_manifest(dir.path()).unwrap_err();
        assert!(err.to_string().contains("imu stream not found"), "{err}");
    }

    #[test]
    fn unreadable_scan_is_skipped() {
        let dir = tempfile::tempdir().unwrap();
        write_fixture(dir.path(), &[0.0, 0.1, 0.2], &[], 400.0);
        fs::write(dir.path().join("lidar").join("0.100000000.ply"), b"garbage").unwrap();
        let m = load_manifest(dir.path()).unwrap();
        let frames: Vec<_> = FrameReader::new(&m, ReaderOptions::default()).collect();
        assert_eq!(frames.len(), 2);
        assert_eq!(frames.iter().map(|f| f.imu.len()).sum::<usize>(), m.imu.len());
    }

    #[test]
    fn downsample_examples() {
        let pts: Vec<_> = (0..100).map(|i| Vector3::new(i as f64, 0.0, 0.0)).collect();
        let colors: Vec<_> = (0..100).map(|i| [i as u8, 0, 0]).collect();
        let c = PointCloud::with_colors(pts, colors).unwrap();
        assert_eq!(downsample_cloud(&c, 1), c);
        let d = downsample_cloud(&c, 10);
        assert_eq!(d.points.iter().map(|p| p.x as usize).collect::<Vec<_>>(), (0..100).step_by(10).collect::<Vec<_>>());
        assert_eq!(d.colors.unwrap()[3], [30, 0, 0]);
    }
}
