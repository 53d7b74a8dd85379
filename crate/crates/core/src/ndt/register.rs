use nalgebra::{Matrix6, Vector6};

use crate::geometry::{PointCloud, Pose};
use crate::ndt::grid::NdtGrid;
use crate::ndt::score::{perturb, score, Assignment};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NewtonOptions {
    pub max_iterations: usize,
    /// Stop once the combined step norm (rad + m) falls below this.
    pub step_tolerance: f64,
    /// Largest step norm accepted in one iteration.
    pub max_step: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions { max_iterations: 30, step_tolerance: 1e-4, max_step: 0.5 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Alignment {
    pub pose: Pose,
    pub converged: bool,
    pub iterations: usize,
    pub score: f64,
    pub matched: usize,
}

/// Solves `(H + λI) δ = −g`, raising λ from `1e-6·tr(H)/6` until the system
/// is positive definite.
fn damped_step(h: &Matrix6<f64>, g: &Vector6<f64>) -> Vector6<f64> {
    let hs = (h + h.transpose()) * 0.5;
    if let Some(ch) = hs.cholesky() {
        return ch.solve(&-g);
    }
    let mut lambda = (1e-6 * hs.trace().abs() / 6.0).max(1e-12);
    for _ in 0..60 {
        if let Some(ch) = (hs + Matrix6::identity() * lambda).cholesky() {
            return ch.solve(&-g);
        }
        lambda *= 10.0;
    }
    // Pure gradient descent as a last resort.
    -g / g.norm().max(1.0)
}

/// Maximizes the NDT score of `cloud` (sensor frame) against `grid` starting
/// from `guess`, using Newton steps with a backtracking line search.
pub fn align(grid: &NdtGrid, cloud: &PointCloud, guess: &Pose, opts: &NewtonOptions) -> Alignment {
    let pts = &cloud.points;
    let mut pose = *guess;
    let mut iterations = 0;
    let mut converged = false;
    for _ in 0..opts.max_iterations {
        iterations += 1;
        let assignment = Assignment::new(grid, pts, &pose);
        let d = assignment.derivatives(pts, &pose);
        if d.matched == 0 {
            break;
        }
        let mut step = damped_step(&d.hessian, &d.gradient);
        let n = step.norm();
        if !n.is_finite() {
            break;
        }
        if n > opts.max_step {
            step *= opts.max_step / n;
        }
        // Backtrack until the score with frozen assignments does not decrease.
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..12 {
            let cand = perturb(&pose, &(step * alpha));
            if assignment.score(pts, &cand) >= d.score {
                accepted = Some(cand);
                break;
            }
            alpha *= 0.5;
        }
        let Some(cand) = accepted else {
            converged = true;
            break;
        };
        pose = cand;
        if step.norm() * alpha < opts.step_tolerance {
            converged = true;
            break;
        }
    }
    let (score, matched) = score(grid, pts, &pose);
    Alignment { pose, converged, iterations, score, matched }
}
