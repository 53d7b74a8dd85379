use nalgebra::{Matrix3, UnitQuaternion, Vector3};

use super::Trajectory;
use crate::error::{Error, Result};
use crate::geometry::Pose;

/// Indices of an associated estimate/reference pose pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pair {
    pub est: usize,
    pub reference: usize,
    pub gap: f64,
}

/// Nearest-stamp pairing. Each reference pose is used at most once (closest
/// gaps claimed first); pairs further apart than `max_gap` seconds are dropped.
/// Result is ordered by estimate index.
pub fn associate(est: &Trajectory, reference: &Trajectory, max_gap: f64) -> Result<Vec<Pair>> {
    let ref_stamps: Vec<f64> = reference.stamps().map(|s| s.secs()).collect();
    let mut candidates = Vec::new();
    for (i, stamp) in est.stamps().enumerate() {
        let t = stamp.secs();
        let k = ref_stamps.partition_point(|&r| r < t);
        for j in [k.wrapping_sub(1), k] {
            if let Some(&r) = ref_stamps.get(j) {
                let gap = (r - t).abs();
                if gap <= max_gap {
                    candidates.push(Pair { est: i, reference: j, gap });
                }
            }
        }
    }
    candidates.sort_by(|a, b| a.gap.total_cmp(&b.gap).then(a.est.cmp(&b.est)).then(a.reference.cmp(&b.reference)));
    let mut est_used = vec![false; est.len()];
    let mut ref_used = vec![false; reference.len()];
    let mut pairs = Vec::new();
    for c in candidates {
        if !est_used[c.est] && !ref_used[c.reference] {
            est_used[c.est] = true;
            ref_used[c.reference] = true;
            pairs.push(c);
        }
    }
    if pairs.is_empty() {
        return Err(Error::NoOverlap);
    }
    pairs.sort_by_key(|p| p.est);
    Ok(pairs)
}

/// Mean, standard deviation and 90th percentile (linear interpolation).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Stats {
    pub mean: f64,
    pub std: f64,
    pub p90: f64,
    pub rmse: f64,
}

impl Stats {
    pub fn of(values: &[f64]) -> Stats {
        if values.is_empty() {
            return Stats::default();
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let rmse = (values.iter().map(|v| v * v).sum::<f64>() / n).sqrt();
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let pos = 0.9 * (sorted.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = (lo + 1).min(sorted.len() - 1);
        let p90 = sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo]);
        Stats { mean, std: var.sqrt(), p90, rmse }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AteReport {
    pub rmse: f64,
    pub mean: f64,
    pub std: f64,
    pub errors: Vec<f64>,
    /// Transform applied to the estimate (identity without alignment).
    pub alignment: Pose,
    pub pairs: usize,
}

/// Rigid transform `T` minimizing `Σ |T·src_i − dst_i|²` (closed form via
/// SVD of the cross-covariance). Second value is false when the points are
/// collinear or coincident, where the rotation about that line is arbitrary.
pub fn align_rigid(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> (Pose, bool) {
    let n = src.len() as f64;
    let ms = src.iter().sum::<Vector3<f64>>() / n;
    let md = dst.iter().sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    let mut spread = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        cov += (d - md) * (s - ms).transpose();
        spread += (s - ms) * (s - ms).transpose();
    }
    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut fix = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        fix[(2, 2)] = -1.0;
    }
    let r = u * fix * v_t;
    let rotation = UnitQuaternion::from_matrix(&r);
    let t = md - rotation * ms;
    let mut ev = spread.symmetric_eigenvalues().as_slice().to_vec();
    ev.sort_by(f64::total_cmp);
    let well_posed = ev[1] > 1e-12 * ev[2].max(1e-300);
    (Pose::new(rotation, t), well_posed)
}

/// Absolute trajectory error over associated translations, optionally after
/// rigid alignment of the estimate onto the reference.
pub fn ate(est: &Trajectory, reference: &Trajectory, align: bool, max_gap: f64) -> Result<AteReport> {
    let pairs = associate(est, reference, max_gap)?;
    let src: Vec<Vector3<f64>> = pairs.iter().map(|p| *est.poses()[p.est].1.translation()).collect();
    let dst: Vec<Vector3<f64>> = pairs.iter().map(|p| *reference.poses()[p.reference].1.translation()).collect();
    let alignment = if align {
        if pairs.len() < 3 {
            return Err(Error::invalid("alignment needs at least 3 associated poses"));
        }
        let (t, well_posed) = align_rigid(&src, &dst);
        if !well_posed {
            log::warn!("trajectory is degenerate (collinear); alignment rotation is not unique");
        }
        t
    } else {
        Pose::identity()
    };
    let errors: Vec<f64> = src.iter().zip(&dst).map(|(s, d)| (alignment.transform_point(s) - d).norm()).collect();
    let s = Stats::of(&errors);
    Ok(AteReport { rmse: s.rmse, mean: s.mean, std: s.std, errors, alignment, pairs: pairs.len() })
}

#[derive(Clone, Debug, PartialEq)]
pub struct RpeReport {
    /// RMSE of the relative translation errors, metres.
    pub rmse: f64,
    pub translation_errors: Vec<f64>,
    /// |yaw| of the relative-motion error per window, radians.
    pub yaw_errors: Vec<f64>,
    /// `yaw_errors` under a trailing moving average.
    pub yaw_smoothed: Vec<f64>,
    pub windows: usize,
}

fn moving_average(values: &[f64], n: usize) -> Vec<f64> {
    let n = n.max(1);
    let mut sum = 0.0;
    let mut out = Vec::with_capacity(values.len());
    for (i, v) in values.iter().enumerate() {
        sum += v;
        if i >= n {
            sum -= values[i - n];
        }
        out.push(sum / (i + 1).min(n) as f64);
    }
    out
}

/// Relative pose error over windows of `window` metres of reference travel.
pub fn rpe_distance(
    est: &Trajectory,
    reference: &Trajectory,
    window: f64,
    max_gap: f64,
    smoothing: usize,
) -> Result<RpeReport> {
    let pairs = associate(est, reference, max_gap)?;
    let e: Vec<&Pose> = pairs.iter().map(|p| &est.poses()[p.est].1).collect();
    let r: Vec<&Pose> = pairs.iter().map(|p| &reference.poses()[p.reference].1).collect();
    let mut travelled = vec![0.0; r.len()];
    for i in 1..r.len() {
        travelled[i] = travelled[i - 1] + (r[i].translation() - r[i - 1].translation()).norm();
    }
    let mut translation_errors = Vec::new();
    let mut yaw_errors = Vec::new();
    let mut j = 0;
    for i in 0..r.len() {
        j = j.max(i);
        while j < r.len() && travelled[j] - travelled[i] < window - 1e-9 {
            j += 1;
        }
        if j == r.len() {
            break;
        }
        let rel_est = e[i].inverse().compose(e[j]);
        let rel_ref = r[i].inverse().compose(r[j]);
        let delta = rel_ref.inverse().compose(&rel_est);
        translation_errors.push(delta.translation().norm());
        yaw_errors.push(delta.yaw().abs());
    }
    if translation_errors.is_empty() {
        return Err(Error::TooShort(window));
    }
    let rmse = Stats::of(&translation_errors).rmse;
    let yaw_smoothed = moving_average(&yaw_errors, smoothing);
    Ok(RpeReport { rmse, windows: translation_errors.len(), translation_errors, yaw_errors, yaw_smoothed })
}

/// Distance between the last and first translation.
pub fn final_drift(est: &Trajectory) -> Result<f64> {
    match (est.poses().first(), est.poses().last()) {
        (Some(a), Some(b)) if est.len() >= 2 => Ok((b.1.translation() - a.1.translation()).norm()),
        _ => Err(Error::invalid("final drift needs at least 2 poses")),
    }
}
