//! Camera projection of LiDAR points and per-point color assignment.

use nalgebra::Vector3;

use crate::config::ColorizeConfig;
use crate::geometry::{CameraModel, Image, PointCloud, Rgb};
use crate::par;

/// Sensor-frame points with a color per point, `None` where no camera saw it.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ColoredScan {
    pub points: Vec<Vector3<f64>>,
    pub colors: Vec<Option<Rgb>>,
}

impl ColoredScan {
    /// Takes the cloud's colors when it has them, otherwise leaves every point
    /// uncolored.
    pub fn from_cloud(cloud: &PointCloud) -> Self {
        let colors = match &cloud.colors {
            Some(c) => c.iter().map(|c| Some(*c)).collect(),
            None => vec![None; cloud.len()],
        };
        ColoredScan { points: cloud.points.clone(), colors }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn num_colored(&self) -> usize {
        self.colors.iter().filter(|c| c.is_some()).count()
    }

    /// Colored points only, as a plain cloud.
    pub fn to_cloud(&self) -> PointCloud {
        let (points, colors) =
            self.points.iter().zip(&self.colors).filter_map(|(p, c)| c.map(|c| (*p, c))).unzip();
        PointCloud { points, colors: Some(colors) }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Projection {
    /// Continuous image coordinates; pixel `(i, j)` covers `[i, i+1) × [j, j+1)`.
    Pixel { u: f64, v: f64 },
    BehindCamera,
    OutOfBounds,
}

/// Projects a LiDAR-frame point through the camera's extrinsics and ideal
/// pinhole intrinsics. Points with camera depth at or below `min_depth` are
/// behind the camera.
pub fn project_point(p_lidar: &Vector3<f64>, cam: &CameraModel, min_depth: f64) -> Projection {
    let p = cam.t_lidar_camera.transform_point(p_lidar);
    if p.z <= min_depth {
        return Projection::BehindCamera;
    }
    let (x, y) = (p.x / p.z, p.y / p.z);
    let u = cam.fx * x + cam.cx;
    let v = cam.fy * y + cam.cy;
    if u >= 0.0 && u < f64::from(cam.width) && v >= 0.0 && v < f64::from(cam.height) {
        Projection::Pixel { u, v }
    } else {
        Projection::OutOfBounds
    }
}

/// Bilinear sample at continuous coordinates (pixel centers at `i + 0.5`);
/// `None` outside the image.
fn sample(img: &Image, u: f64, v: f64) -> Option<[f64; 3]> {
    let (w, h) = (f64::from(img.width), f64::from(img.height));
    if !(u >= 0.0 && u < w && v >= 0.0 && v < h) {
        return None;
    }
    let (x, y) = ((u - 0.5).clamp(0.0, w - 1.0), (v - 0.5).clamp(0.0, h - 1.0));
    let (x0, y0) = (x.floor() as u32, y.floor() as u32);
    let (x1, y1) = ((x0 + 1).min(img.width - 1), (y0 + 1).min(img.height - 1));
    let (fx, fy) = (x - f64::from(x0), y - f64::from(y0));
    let px = |a: u32, b: u32| img.get(a, b).map(f64::from);
    let (c00, c10, c01, c11) = (px(x0, y0), px(x1, y0), px(x0, y1), px(x1, y1));
    let mut out = [0.0; 3];
    for k in 0..3 {
        let top = c00[k] + (c10[k] - c00[k]) * fx;
        let bottom = c01[k] + (c11[k] - c01[k]) * fx;
        out[k] = top + (bottom - top) * fy;
    }
    Some(out)
}

/// Resamples a distorted image onto the ideal pinhole grid of `cam`: each
/// output pixel center is distorted and looked up bilinearly in `img`. Pixels
/// that map outside the source are black.
pub fn undistort_image(img: &Image, cam: &CameraModel) -> Image {
    if !cam.has_distortion() {
        return img.clone();
    }
    let (w, h) = (img.width, img.height);
    let rows = par::map_range(h as usize, |j| {
        (0..w)
            .map(|i| {
                let x = (f64::from(i) + 0.5 - cam.cx) / cam.fx;
                let y = (j as f64 + 0.5 - cam.cy) / cam.fy;
                let (xd, yd) = cam.distort(x, y);
                sample(img, cam.fx * xd + cam.cx, cam.fy * yd + cam.cy)
                    .map(|c| c.map(|v| (v + 0.5).floor().clamp(0.0, 255.0) as u8))
                    .unwrap_or([0, 0, 0])
            })
            .collect::<Vec<Rgb>>()
    });
    Image { stamp: img.stamp, width: w, height: h, pixels: rows.into_iter().flatten().collect() }
}

/// Gives each point the pixel color of the first camera, in list order, that
/// sees it. Images must already be undistorted. Coordinates are untouched.
pub fn colorize_scan(cloud: &PointCloud, images: &[(CameraModel, Image)], cfg: &ColorizeConfig) -> ColoredScan {
    let colors = par::map(&cloud.points, |p| {
        images.iter().find_map(|(cam, img)| match project_point(p, cam, cfg.min_depth) {
            Projection::Pixel { u, v } => Some(img.get(u.floor() as u32, v.floor() as u32)),
            _ => None,
        })
    });
    ColoredScan { points: cloud.points.clone(), colors }
}
