use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Rgb;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxObject {
    pub min: [f64; 3],
    pub max: [f64; 3],
    pub color: Rgb,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ground {
    pub z: f64,
    pub color: Rgb,
}

/// Axis-aligned flat-colored boxes and an optional ground plane clipped to the
/// world bounds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    /// `[xmin, ymin, zmin, xmax, ymax, zmax]`
    pub bounds: [f64; 6],
    #[serde(default)]
    pub ground: Option<Ground>,
    #[serde(default, rename = "box")]
    pub boxes: Vec<BoxObject>,
}

/// What a ray hit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit {
    pub distance: f64,
    pub color: Rgb,
    /// Index into `boxes`, or `None` for the ground.
    pub object: Option<usize>,
}

/// Ray/AABB intersection (slab method). Returns the entry distance, or the
/// exit distance when the origin is inside the box.
pub fn ray_box(origin: &Vector3<f64>, dir: &Vector3<f64>, min: &[f64; 3], max: &[f64; 3]) -> Option<f64> {
    let mut t_near = f64::NEG_INFINITY;
    let mut t_far = f64::INFINITY;
    for k in 0..3 {
        if dir[k] == 0.0 {
            if origin[k] < min[k] || origin[k] > max[k] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / dir[k];
        let mut t0 = (min[k] - origin[k]) * inv;
        let mut t1 = (max[k] - origin[k]) * inv;
        if t0 > t1 {
            std::mem::swap(&mut t0, &mut t1);
        }
        t_near = t_near.max(t0);
        t_far = t_far.min(t1);
        if t_near > t_far {
            return None;
        }
    }
    if t_far < 0.0 {
        return None;
    }
    Some(if t_near > 0.0 { t_near } else { t_far })
}

impl Scene {
    pub fn empty() -> Self {
        Scene { bounds: [-100.0, -100.0, -10.0, 100.0, 100.0, 50.0], ground: None, boxes: Vec::new() }
    }

    pub fn validate(&self) -> Result<()> {
        let b = &self.bounds;
        if !(b[0] < b[3] && b[1] < b[4] && b[2] < b[5]) {
            return Err(Error::invalid("scene bounds are empty"));
        }
        for (i, bx) in self.boxes.iter().enumerate() {
            if !(0..3).all(|k| bx.min[k] < bx.max[k]) {
                return Err(Error::invalid(format!("box {i} is degenerate")));
            }
        }
        Ok(())
    }

    /// Closest intersection along a unit-direction ray.
    pub fn cast(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        for (i, b) in self.boxes.iter().enumerate() {
            if let Some(t) = ray_box(origin, dir, &b.min, &b.max) {
                if t > 0.0 && best.is_none_or(|h| t < h.distance) {
                    best = Some(Hit { distance: t, color: b.color, object: Some(i) });
                }
            }
        }
        if let Some(g) = &self.ground {
            if dir.z != 0.0 {
                let t = (g.z - origin.z) / dir.z;
                if t > 0.0 && best.is_none_or(|h| t < h.distance) {
                    let p = origin + dir * t;
                    let b = &self.bounds;
                    if p.x >= b[0] && p.x <= b[3] && p.y >= b[1] && p.y <= b[4] {
                        best = Some(Hit { distance: t, color: g.color, object: None });
                    }
                }
            }
        }
        best
    }

    /// Four perimeter walls, a ground plane at z = 0 and assorted obstacles on
    /// both sides of the loop driven by [`super::TrajectorySpec::canyon_loop`].
    pub fn box_canyon() -> Self {
        let wall = |min: [f64; 3], max: [f64; 3], color: Rgb| BoxObject { min, max, color };
        let (x0, x1, y0, y1, h) = (-40.0, 40.0, -10.0, 55.0, 6.0);
        let mut boxes = vec![
            wall([x0 - 0.5, y0 - 0.5, 0.0], [x1 + 0.5, y0, h], [200, 60, 60]),
            wall([x0 - 0.5, y1, 0.0], [x1 + 0.5, y1 + 0.5, h], [60, 200, 60]),
            wall([x0 - 0.5, y0, 0.0], [x0, y1, h + 2.0], [60, 60, 200]),
            wall([x1, y0, 0.0], [x1 + 0.5, y1, h - 1.0], [200, 200, 60]),
        ];
        // Interior of the loop.
        let inner: [([f64; 3], [f64; 3]); 9] = [
            ([-24.0, 6.0, 0.0], [-18.0, 10.0, 3.0]),
            ([-10.0, 5.0, 0.0], [-7.0, 9.0, 5.0]),
            ([4.0, 6.0, 0.0], [12.0, 8.0, 2.0]),
            ([18.0, 5.0, 0.0], [24.0, 12.0, 4.0]),
            ([-20.0, 18.0, 0.0], [-14.0, 24.0, 6.0]),
            ([-4.0, 17.0, 0.0], [3.0, 21.0, 2.5]),
            ([10.0, 20.0, 0.0], [14.0, 30.0, 3.5]),
            ([-25.0, 30.0, 0.0], [-19.0, 35.0, 2.0]),
            ([0.0, 29.0, 0.0], [6.0, 35.0, 4.5]),
        ];
        // Between the loop and the perimeter walls.
        let outer: [([f64; 3], [f64; 3]); 8] = [
            ([-20.0, -7.0, 0.0], [-17.0, -4.0, 2.0]),
            ([8.0, -8.0, 0.0], [14.0, -5.0, 3.0]),
            ([34.0, 8.0, 0.0], [37.0, 12.0, 2.5]),
            ([33.0, 26.0, 0.0], [38.0, 28.0, 4.0]),
            ([10.0, 49.0, 0.0], [16.0, 52.0, 2.0]),
            ([-14.0, 50.0, 0.0], [-10.0, 53.0, 3.5]),
            ([-37.0, 30.0, 0.0], [-34.0, 36.0, 3.0]),
            ([-38.0, 5.0, 0.0], [-35.0, 8.0, 1.5]),
        ];
        let palette: [Rgb; 6] = [[230, 120, 30], [30, 160, 200], [150, 60, 180], [90, 90, 90], [240, 240, 240], [20, 120, 60]];
        for (i, (min, max)) in inner.iter().chain(outer.iter()).enumerate() {
            boxes.push(wall(*min, *max, palette[i % palette.len()]));
        }
        Scene {
            bounds: [x0 - 1.0, y0 - 1.0, -1.0, x1 + 1.0, y1 + 1.0, 20.0],
            ground: Some(Ground { z: 0.0, color: [110, 100, 90] }),
            boxes,
        }
    }
}
