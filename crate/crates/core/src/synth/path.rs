use std::f64::consts::PI;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Planar reference path, parameterized by arc length.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PathSpec {
    /// Straight segments joined by circular fillets of `fillet_radius`.
    Polyline {
        points: Vec<[f64; 2]>,
        #[serde(default)]
        closed: bool,
        #[serde(default)]
        fillet_radius: f64,
    },
    /// Counter-clockwise circle starting at angle `start_angle` (rad).
    Circle {
        center: [f64; 2],
        radius: f64,
        #[serde(default)]
        start_angle: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Segment {
    Line { start: Vector2<f64>, dir: Vector2<f64>, len: f64 },
    /// `sweep` is signed: positive turns left.
    Arc { center: Vector2<f64>, radius: f64, start_angle: f64, sweep: f64 },
}

impl Segment {
    fn len(&self) -> f64 {
        match *self {
            Segment::Line { len, .. } => len,
            Segment::Arc { radius, sweep, .. } => radius * sweep.abs(),
        }
    }

    fn eval(&self, s: f64) -> PathSample {
        match *self {
            Segment::Line { start, dir, .. } => PathSample {
                position: start + dir * s,
                heading: dir.y.atan2(dir.x),
                curvature: 0.0,
            },
            Segment::Arc { center, radius, start_angle, sweep } => {
                let sign = sweep.signum();
                let a = start_angle + sign * s / radius;
                PathSample {
                    position: center + Vector2::new(a.cos(), a.sin()) * radius,
                    heading: a + sign * PI / 2.0,
                    curvature: sign / radius,
                }
            }
        }
    }
}

/// Position, heading (rad, from +x) and signed curvature (1/m) at one point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PathSample {
    pub position: Vector2<f64>,
    pub heading: f64,
    pub curvature: f64,
}

/// Arc-length parameterized path built from a [`PathSpec`].
#[derive(Clone, Debug, PartialEq)]
pub struct Path {
    segments: Vec<Segment>,
    /// Arc length at the start of each segment.
    offsets: Vec<f64>,
    length: f64,
    closed: bool,
}

fn wrap_angle(a: f64) -> f64 {
    let mut a = a % (2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    } else if a < -PI {
        a += 2.0 * PI;
    }
    a
}

impl Path {
    pub fn new(spec: &PathSpec) -> Result<Self> {
        let (segments, closed) = match spec {
            PathSpec::Circle { center, radius, start_angle } => {
                if !(*radius > 0.0) {
                    return Err(Error::invalid("circle radius must be positive"));
                }
                let arc = Segment::Arc {
                    center: Vector2::new(center[0], center[1]),
                    radius: *radius,
                    start_angle: *start_angle,
                    sweep: 2.0 * PI,
                };
                (vec![arc], true)
            }
            PathSpec::Polyline { points, closed, fillet_radius } => {
                (polyline_segments(points, *closed, *fillet_radius)?, *closed)
            }
        };
        let mut offsets = Vec::with_capacity(segments.len());
        let mut length = 0.0;
        for s in &segments {
            offsets.push(length);
            length += s.len();
        }
        if !(length > 0.0) {
            return Err(Error::invalid("path has zero length"));
        }
        Ok(Path { segments, offsets, length, closed })
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    /// Sample at arc length `s`. Closed paths wrap; open paths clamp at the ends.
    pub fn sample(&self, s: f64) -> PathSample {
        let s = if self.closed {
            s.rem_euclid(self.length)
        } else {
            s.clamp(0.0, self.length)
        };
        let i = self.offsets.partition_point(|o| *o <= s).saturating_sub(1);
        let seg = &self.segments[i];
        seg.eval((s - self.offsets[i]).min(seg.len()))
    }
}

fn polyline_segments(points: &[[f64; 2]], closed: bool, radius: f64) -> Result<Vec<Segment>> {
    if points.len() < 2 {
        return Err(Error::invalid("polyline needs at least two points"));
    }
    if !(radius >= 0.0) {
        return Err(Error::invalid("fillet radius must be non-negative"));
    }
    let pts: Vec<Vector2<f64>> = points.iter().map(|p| Vector2::new(p[0], p[1])).collect();
    let n = pts.len();
    let edges = if closed { n } else { n - 1 };
    let edge = |i: usize| {
        let a = pts[i];
        let b = pts[(i + 1) % n];
        let d = b - a;
        (a, d / d.norm(), d.norm())
    };
    for i in 0..edges {
        if !(edge(i).2 > 0.0) {
            return Err(Error::invalid(format!("polyline edge {i} has zero length")));
        }
    }
    // Tangent trim at each vertex and the fillet arc there, if any.
    let mut trim = vec![0.0; n];
    let mut arcs: Vec<Option<Segment>> = vec![None; n];
    for v in 0..n {
        if !closed && (v == 0 || v == n - 1) {
            continue;
        }
        let (_, d_in, _) = edge((v + n - 1) % n);
        let (_, d_out, _) = edge(v);
        let turn = wrap_angle(d_out.y.atan2(d_out.x) - d_in.y.atan2(d_in.x));
        if turn.abs() < 1e-12 || radius == 0.0 {
            continue;
        }
        if (turn.abs() - PI).abs() < 1e-9 {
            return Err(Error::invalid(format!("polyline reverses direction at vertex {v}")));
        }
        let t = radius * (turn.abs() / 2.0).tan();
        trim[v] = t;
        let start = pts[v] - d_in * t;
        let left = Vector2::new(-d_in.y, d_in.x) * turn.signum();
        let center = start + left * radius;
        let r0 = start - center;
        arcs[v] = Some(Segment::Arc { center, radius, start_angle: r0.y.atan2(r0.x), sweep: turn });
    }
    let mut segs = Vec::new();
    for i in 0..edges {
        let (a, d, len) = edge(i);
        let j = (i + 1) % n;
        let (t0, t1) = (trim[i], trim[j]);
        if t0 + t1 > len + 1e-9 {
            return Err(Error::invalid(format!("fillet radius too large for polyline edge {i}")));
        }
        let l = (len - t0 - t1).max(0.0);
        if l > 0.0 {
            segs.push(Segment::Line { start: a + d * t0, dir: d, len: l });
        }
        if let Some(arc) = arcs[j] {
            if closed || j != 0 {
                segs.push(arc);
            }
        }
    }
    Ok(segs)
}
