//! NDT objective and its analytic derivatives.
//!
//! For a query point `p` (sensor frame) placed by pose `T`, with `q = T·p − μ`
//! for the cell containing `T·p`, the point's score is `exp(−½ qᵀ Σ⁻¹ q)`.
//! Derivatives are taken with respect to a right perturbation
//! `T(δ) = T ∘ (Exp(ω), t)`, `δ = (ω, t)`, evaluated at `δ = 0`, of the
//! objective `f = −Σ score`. The Hessian is the full second derivative, not the
//! Gauss-Newton approximation.

use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};

use crate::geometry::{PointCloud, Pose};
use crate::ndt::grid::{NdtCell, NdtGrid};
use crate::par;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ScoreDerivatives {
    /// Sum of per-point scores (to be maximized).
    pub score: f64,
    /// Gradient of `−score`.
    pub gradient: Vector6<f64>,
    /// Hessian of `−score`.
    pub hessian: Matrix6<f64>,
    /// Points that fell into a scoring cell.
    pub matched: usize,
}

impl ScoreDerivatives {
    fn merge(mut self, o: ScoreDerivatives) -> Self {
        self.score += o.score;
        self.gradient += o.gradient;
        self.hessian += o.hessian;
        self.matched += o.matched;
        self
    }
}

/// Score only; cheaper than [`score_and_derivatives`].
pub fn score(grid: &NdtGrid, points: &[Vector3<f64>], pose: &Pose) -> (f64, usize) {
    let r = pose.rotation_matrix();
    let t = *pose.translation();
    par::map_reduce(
        points,
        || (0.0, 0usize),
        |(s, n), p| {
            let y = r * p + t;
            let mut matched = false;
            let mut s = s;
            for cell in grid.neighborhood(&y) {
                let q = y - cell.mean;
                s += (-0.5 * q.dot(&(cell.inv_cov * q))).exp();
                matched = true;
            }
            (s, n + usize::from(matched))
        },
        |a, b| (a.0 + b.0, a.1 + b.1),
    )
}

/// Per-point scores, `None` where no scoring cell is near.
pub fn point_scores(grid: &NdtGrid, points: &[Vector3<f64>], pose: &Pose) -> Vec<Option<f64>> {
    let r = pose.rotation_matrix();
    let t = *pose.translation();
    par::map(points, |p| {
        let y = r * p + t;
        grid.neighborhood(&y).fold(None, |acc, cell| {
            let q = y - cell.mean;
            Some(acc.unwrap_or(0.0) + (-0.5 * q.dot(&(cell.inv_cov * q))).exp())
        })
    })
}

pub fn score_and_derivatives(grid: &NdtGrid, cloud: &PointCloud, guess: &Pose) -> ScoreDerivatives {
    derivatives_of_points(grid, &cloud.points, guess)
}

pub(crate) fn derivatives_of_points(grid: &NdtGrid, points: &[Vector3<f64>], guess: &Pose) -> ScoreDerivatives {
    let a = Assignment::new(grid, points, guess);
    a.derivatives(points, guess)
}

/// Point/cell pairs fixed at one pose. Holding them fixed makes the objective
/// smooth in the pose, so a line search can trust the analytic derivatives.
pub(crate) struct Assignment<'g> {
    pairs: Vec<(u32, &'g NdtCell)>,
    matched: usize,
}

impl<'g> Assignment<'g> {
    pub(crate) fn new(grid: &'g NdtGrid, points: &[Vector3<f64>], pose: &Pose) -> Self {
        let r = pose.rotation_matrix();
        let t = *pose.translation();
        let per_point = par::map_range(points.len(), |i| {
            let y = r * points[i] + t;
            grid.neighborhood(&y).map(|c| (i as u32, c)).collect::<Vec<_>>()
        });
        let matched = per_point.iter().filter(|v| !v.is_empty()).count();
        Assignment { pairs: per_point.into_iter().flatten().collect(), matched }
    }

    pub(crate) fn score(&self, points: &[Vector3<f64>], pose: &Pose) -> f64 {
        let r = pose.rotation_matrix();
        let t = *pose.translation();
        par::map_reduce(
            &self.pairs,
            || 0.0,
            |s, (i, cell)| {
                let q = r * points[*i as usize] + t - cell.mean;
                s + (-0.5 * q.dot(&(cell.inv_cov * q))).exp()
            },
            |a, b| a + b,
        )
    }

    pub(crate) fn derivatives(&self, points: &[Vector3<f64>], pose: &Pose) -> ScoreDerivatives {
        let r0 = pose.rotation_matrix();
        let t0 = *pose.translation();
        let mut d = par::map_reduce(
            &self.pairs,
            ScoreDerivatives::default,
            |mut acc, (i, cell)| {
                let p = &points[*i as usize];
                accumulate(&mut acc, &r0, p, &(r0 * p + t0), cell);
                acc
            },
            ScoreDerivatives::merge,
        );
        d.matched = self.matched;
        d
    }
}

// Adds one point/cell term; false when the term underflows to zero.
fn accumulate(acc: &mut ScoreDerivatives, r0: &Matrix3<f64>, p: &Vector3<f64>, y: &Vector3<f64>, cell: &NdtCell) -> bool {
    let q = y - cell.mean;
    let aq = cell.inv_cov * q;
    let e = (-0.5 * q.dot(&aq)).exp();
    if e == 0.0 {
        return false;
    }
    // Work in the sensor frame: J = R0 [−[p]× | I].
    let w = r0.transpose() * aq;
    let b = r0.transpose() * cell.inv_cov * r0;
    let g_rot = p.cross(&w);
    let gq = Vector6::new(g_rot.x, g_rot.y, g_rot.z, w.x, w.y, w.z);

    // −[p]×
    let px = Matrix3::new(0.0, p.z, -p.y, -p.z, 0.0, p.x, p.y, -p.x, 0.0);
    let mut jtaj = Matrix6::zeros();
    jtaj.fixed_view_mut::<3, 3>(0, 0).copy_from(&(px.transpose() * b * px));
    let cross = px.transpose() * b;
    jtaj.fixed_view_mut::<3, 3>(0, 3).copy_from(&cross);
    jtaj.fixed_view_mut::<3, 3>(3, 0).copy_from(&cross.transpose());
    jtaj.fixed_view_mut::<3, 3>(3, 3).copy_from(&b);

    // Second derivative of the rotated point contracted with w:
    // ½(w pᵀ + p wᵀ) − (w·p) I.
    let second = (w * p.transpose() + p * w.transpose()) * 0.5 - Matrix3::identity() * w.dot(p);

    let mut h = jtaj - gq * gq.transpose();
    let mut rr = h.fixed_view_mut::<3, 3>(0, 0);
    rr += second;
    acc.score += e;
    acc.gradient += gq * e;
    acc.hessian += h * e;
    true
}

/// Applies a perturbation `δ = (ω, t)` on the right of `pose`.
pub fn perturb(pose: &Pose, delta: &Vector6<f64>) -> Pose {
    pose.compose(&Pose::exp(delta))
}
