use nalgebra::{DVector, Matrix3, Matrix6, Vector3, Vector6};
use nalgebra_sparse::factorization::CscCholesky;
use nalgebra_sparse::{CooMatrix, CscMatrix};

use crate::error::{Error, Result};
use crate::geometry::{skew, so3_exp, so3_log, Pose};
use crate::pose_graph::{GraphEdge, PoseGraph};

/// Stop once an accepted iteration lowers the cost by less than this.
pub const COST_TOLERANCE: f64 = 1e-9;
pub const MAX_ITERATIONS: usize = 50;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct OptimizeReport {
    /// Cost before the first and after each accepted iteration.
    pub costs: Vec<f64>,
    pub iterations: usize,
}

impl OptimizeReport {
    pub fn initial_cost(&self) -> f64 {
        self.costs.first().copied().unwrap_or(0.0)
    }

    pub fn final_cost(&self) -> f64 {
        self.costs.last().copied().unwrap_or(0.0)
    }
}

/// `Jr⁻¹(φ)`, the inverse right Jacobian of SO(3).
pub fn right_jacobian_inv(phi: &Vector3<f64>) -> Matrix3<f64> {
    let th = phi.norm();
    let k = skew(phi);
    let c = if th < 1e-5 {
        1.0 / 12.0 + th * th / 720.0
    } else {
        1.0 / (th * th) - (1.0 + th.cos()) / (2.0 * th * th.sin())
    };
    Matrix3::identity() + k * 0.5 + k * k * c
}

/// Residual `log(Z⁻¹ ∘ Tᵢ⁻¹ ∘ Tⱼ)` as `(rotation vector, translation)`.
pub fn edge_residual(ti: &Pose, tj: &Pose, z: &Pose) -> Vector6<f64> {
    let ri = ti.rotation_matrix();
    let rz = z.rotation_matrix();
    let v = ri.transpose() * (tj.translation() - ti.translation());
    let rot = so3_log(&(z.rotation().inverse() * ti.rotation().inverse() * tj.rotation()));
    let tr = rz.transpose() * (v - z.translation());
    Vector6::new(rot.x, rot.y, rot.z, tr.x, tr.y, tr.z)
}

/// Residual and its Jacobians with respect to the perturbations
/// `T ← (R Exp(δφ), t + δt)` of both endpoints.
fn linearize(ti: &Pose, tj: &Pose, z: &Pose) -> (Vector6<f64>, Matrix6<f64>, Matrix6<f64>) {
    let r = edge_residual(ti, tj, z);
    let ri = ti.rotation_matrix();
    let rj = tj.rotation_matrix();
    let rzt = z.rotation_matrix().transpose();
    let jinv = right_jacobian_inv(&r.fixed_rows::<3>(0).into_owned());
    let v = ri.transpose() * (tj.translation() - ti.translation());

    let mut ji = Matrix6::zeros();
    let mut jj = Matrix6::zeros();
    ji.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-jinv * rj.transpose() * ri));
    jj.fixed_view_mut::<3, 3>(0, 0).copy_from(&jinv);
    ji.fixed_view_mut::<3, 3>(3, 0).copy_from(&(rzt * skew(&v)));
    ji.fixed_view_mut::<3, 3>(3, 3).copy_from(&(-rzt * ri.transpose()));
    jj.fixed_view_mut::<3, 3>(3, 3).copy_from(&(rzt * ri.transpose()));
    (r, ji, jj)
}

/// Total weighted squared residual `Σ rᵀ Ω r`.
pub fn total_cost(poses: &[Pose], edges: &[GraphEdge]) -> f64 {
    edges
        .iter()
        .map(|e| {
            let r = edge_residual(&poses[e.from], &poses[e.to], &e.relative);
            r.dot(&(e.information * r))
        })
        .sum()
}

/// Nodes not reachable from `fixed` through any edge.
pub fn disconnected(n: usize, edges: &[GraphEdge], fixed: usize) -> Vec<usize> {
    let mut adj = vec![Vec::new(); n];
    for e in edges {
        adj[e.from].push(e.to);
        adj[e.to].push(e.from);
    }
    let mut seen = vec![false; n];
    let mut stack = vec![fixed];
    seen[fixed] = true;
    while let Some(u) = stack.pop() {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                stack.push(v);
            }
        }
    }
    (0..n).filter(|i| !seen[*i]).collect()
}

fn apply(poses: &[Pose], delta: &DVector<f64>, fixed: usize, scale: f64) -> Vec<Pose> {
    poses
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let Some(k) = var_index(i, fixed) else { return *p };
            let d = delta.fixed_rows::<6>(6 * k) * scale;
            let rot = *p.rotation() * so3_exp(&Vector3::new(d[0], d[1], d[2]));
            Pose::new(rot, p.translation() + Vector3::new(d[3], d[4], d[5]))
        })
        .collect()
}

fn var_index(node: usize, fixed: usize) -> Option<usize> {
    match node.cmp(&fixed) {
        std::cmp::Ordering::Less => Some(node),
        std::cmp::Ordering::Equal => None,
        std::cmp::Ordering::Greater => Some(node - 1),
    }
}

fn normal_equations(poses: &[Pose], edges: &[GraphEdge], fixed: usize) -> (CscMatrix<f64>, DVector<f64>) {
    let dim = 6 * (poses.len() - 1);
    let mut coo = CooMatrix::new(dim, dim);
    let mut b = DVector::zeros(dim);
    let push = |coo: &mut CooMatrix<f64>, a: usize, c: usize, m: &Matrix6<f64>| {
        for r in 0..6 {
            for s in 0..6 {
                if m[(r, s)] != 0.0 {
                    coo.push(6 * a + r, 6 * c + s, m[(r, s)]);
                }
            }
        }
    };
    // Keeps the matrix structurally non-singular even for blocks with no edges.
    for k in 0..poses.len() - 1 {
        for r in 0..6 {
            coo.push(6 * k + r, 6 * k + r, 0.0);
        }
    }
    for e in edges {
        let (r, ji, jj) = linearize(&poses[e.from], &poses[e.to], &e.relative);
        let vi = var_index(e.from, fixed);
        let vj = var_index(e.to, fixed);
        let w = &e.information;
        if let Some(a) = vi {
            push(&mut coo, a, a, &(ji.transpose() * w * ji));
            let g = ji.transpose() * w * r;
            b.fixed_rows_mut::<6>(6 * a).add_assign(&g);
        }
        if let Some(c) = vj {
            push(&mut coo, c, c, &(jj.transpose() * w * jj));
            let g = jj.transpose() * w * r;
            b.fixed_rows_mut::<6>(6 * c).add_assign(&g);
        }
        if let (Some(a), Some(c)) = (vi, vj) {
            let off = ji.transpose() * w * jj;
            push(&mut coo, a, c, &off);
            push(&mut coo, c, a, &off.transpose());
        }
    }
    (CscMatrix::from(&coo), b)
}

use std::ops::AddAssign;

/// Gauss-Newton over all node poses except `fixed`, with step halving
/// whenever a full step would raise the cost.
pub fn optimize(graph: &mut PoseGraph, fixed: usize) -> Result<OptimizeReport> {
    let n = graph.keyframes.len();
    if n == 0 || fixed >= n {
        return Err(Error::invalid("fixed node is not in the graph"));
    }
    if let Some(&bad) = disconnected(n, &graph.edges, fixed).first() {
        return Err(Error::Disconnected(graph.keyframes[bad].id as u64));
    }
    let mut poses: Vec<Pose> = graph.keyframes.iter().map(|k| k.pose).collect();
    let mut cost = total_cost(&poses, &graph.edges);
    let mut report = OptimizeReport { costs: vec![cost], iterations: 0 };
    if n == 1 {
        return Ok(report);
    }
    for _ in 0..MAX_ITERATIONS {
        report.iterations += 1;
        let (h, b) = normal_equations(&poses, &graph.edges, fixed);
        let chol = CscCholesky::factor(&h).map_err(|e| Error::invalid(format!("pose graph normal equations: {e:?}")))?;
        let delta = -chol.solve(&b);
        let delta = DVector::from_column_slice(delta.as_slice());
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..30 {
            let cand = apply(&poses, &delta, fixed, scale);
            let c = total_cost(&cand, &graph.edges);
            if c <= cost {
                accepted = Some((cand, c));
                break;
            }
            scale *= 0.5;
        }
        let Some((cand, c)) = accepted else { break };
        let decrease = cost - c;
        poses = cand;
        cost = c;
        report.costs.push(cost);
        if decrease < COST_TOLERANCE {
            break;
        }
    }
    for (k, p) in graph.keyframes.iter_mut().zip(poses) {
        k.pose = p;
    }
    Ok(report)
}
