use super::*;
use crate::config::IntegrationMethod;

fn cfg(carving: bool) -> TsdfConfig {
    TsdfConfig {
        voxel_size: 0.2,
        truncation: Some(0.4),
        carving,
        constant_weight: true,
        min_ray_length: 0.1,
        ..TsdfConfig::default()
    }
}

fn scan(points: &[[f64; 3]], color: Option<Rgb>) -> ColoredScan {
    ColoredScan { points: points.iter().map(|p| Vector3::from(*p)).collect(), colors: vec![color; points.len()] }
}

fn at(vol: &TsdfVolume, x: f64, y: f64, z: f64) -> Option<TsdfVoxel> {
    vol.query(&Vector3::new(x, y, z))
}

#[test]
fn single_point_band() {
    let mut vol = TsdfVolume::new(&cfg(false)).unwrap();
    vol.integrate_scan(&scan(&[[2.0, 0.0, 0.0]], None), &Pose::identity());
    let front = at(&vol, 1.9, 0.05, 0.05).unwrap();
    let back = at(&vol, 2.1, 0.05, 0.05).unwrap();
    // Voxel centers sit at y = z = 0.1; the ray runs along y = z = 0.
    assert!((front.distance - 0.1).abs() < 1e-12);
    assert!((back.distance + 0.1).abs() < 1e-12);
    assert!(front.weight > 0.0 && back.weight > 0.0);
    assert!(at(&vol, 1.0, 0.05, 0.05).is_none());
}

#[test]
fn carving_marks_free_space() {
    let mut vol = TsdfVolume::new(&cfg(true)).unwrap();
    vol.integrate_scan(&scan(&[[2.0, 0.0, 0.0]], None), &Pose::identity());
    let free = at(&vol, 1.0, 0.05, 0.05).unwrap();
    assert_eq!(free.distance, 0.4);
    assert!((at(&vol, 1.9, 0.05, 0.05).unwrap().distance - 0.1).abs() < 1e-12);
}

#[test]
fn observations_average() {
    let mut vol = TsdfVolume::new(&cfg(false)).unwrap();
    // Surface at 2.0 then 1.8 seen from the origin: the voxel at 1.9 sees
    // +0.1 then −0.1.
    vol.integrate_scan(&scan(&[[2.0, 0.0, 0.0]], Some([255, 0, 0])), &Pose::identity());
    vol.integrate_scan(&scan(&[[1.8, 0.0, 0.0]], Some([0, 0, 255])), &Pose::identity());
    let v = at(&vol, 1.9, 0.05, 0.05).unwrap();
    assert!(v.distance.abs() < 1e-12);
    assert_eq!(v.weight, 2.0);
    assert_eq!(v.rgb(), [128, 0, 128]);
}

#[test]
fn uncolored_points_do_not_touch_color() {
    let mut vol = TsdfVolume::new(&cfg(false)).unwrap();
    vol.integrate_scan(&scan(&[[2.0, 0.0, 0.0]], Some([10, 20, 30])), &Pose::identity());
    vol.integrate_scan(&scan(&[[2.0, 0.0, 0.0]], None), &Pose::identity());
    let v = at(&vol, 1.9, 0.05, 0.05).unwrap();
    assert_eq!(v.weight, 2.0);
    assert_eq!(v.color_weight, 1.0);
    assert_eq!(v.rgb(), [10, 20, 30]);
}

#[test]
fn inverse_square_weight() {
    let mut c = cfg(false);
    c.constant_weight = false;
    let mut vol = TsdfVolume::new(&c).unwrap();
    vol.integrate_scan(&scan(&[[2.0, 0.0, 0.0]], None), &Pose::identity());
    assert!((at(&vol, 1.9, 0.05, 0.05).unwrap().weight - 0.25).abs() < 1e-15);
}

#[test]
fn unallocated_space_is_unobserved() {
    let vol = TsdfVolume::new(&cfg(false)).unwrap();
    assert!(at(&vol, 0.0, 0.0, 0.0).is_none());
    assert!(vol.is_empty());
}

#[test]
fn stored_triplet_at_voxel_center() {
    let mut vol = TsdfVolume::new(&cfg(false)).unwrap();
    vol.integrate_scan(&scan(&[[2.0, 0.1, 0.1]], Some([7, 8, 9])), &Pose::identity());
    let key = vol.voxel_index(&Vector3::new(1.9, 0.1, 0.1));
    let center = vol.voxel_center(&key);
    assert_eq!(at(&vol, center.x, center.y, center.z), vol.voxel(&key).copied());
}

fn wall_scan(x: f64) -> ColoredScan {
    let mut pts = Vec::new();
    for i in -20..=20 {
        for j in -20..=20 {
            pts.push([x, f64::from(i) * 0.1, f64::from(j) * 0.1]);
        }
    }
    scan(&pts, Some([200, 100, 50]))
}

#[test]
fn wall_sign_flips_across_the_surface() {
    for method in [IntegrationMethod::Merged, IntegrationMethod::Fast] {
        let mut vol = TsdfVolume::new(&TsdfConfig { method, ..cfg(false) }).unwrap();
        vol.integrate_scan(&wall_scan(2.0), &Pose::identity());
        for y in [-0.9, -0.3, 0.0, 0.5] {
            let before = at(&vol, 1.9, y, 0.05).unwrap_or_else(|| panic!("{method:?} {y} front")).distance;
            let after = at(&vol, 2.1, y, 0.05).unwrap_or_else(|| panic!("{method:?} {y} back")).distance;
            assert!(before > 0.0 && after < 0.0, "{method:?} {before} {after}");
        }
    }
}

#[test]
fn integration_order_commutes_with_constant_weights() {
    let a = wall_scan(2.0);
    let b = wall_scan(2.13);
    let pa = Pose::identity();
    let pb = Pose::from_xyz_yaw(0.05, -0.1, 0.0, 0.05);
    let mut one = TsdfVolume::new(&cfg(false)).unwrap();
    one.integrate_scan(&a, &pa);
    one.integrate_scan(&b, &pb);
    let mut two = TsdfVolume::new(&cfg(false)).unwrap();
    two.integrate_scan(&b, &pb);
    two.integrate_scan(&a, &pa);
    assert_eq!(one.block_indices(), two.block_indices());
    for k in one.block_indices() {
        for (x, y) in one.block(&k).unwrap().voxels.iter().zip(&two.block(&k).unwrap().voxels) {
            assert!((x.distance - y.distance).abs() < 1e-9);
            assert_eq!(x.weight, y.weight);
        }
    }
}

#[test]
fn capped_weight_converges_to_the_observation() {
    let mut vol = TsdfVolume::new(&TsdfConfig { max_weight: 5.0, ..cfg(false) }).unwrap();
    vol.integrate_scan(&scan(&[[2.0, 0.0, 0.0]], None), &Pose::identity());
    for _ in 0..40 {
        vol.integrate_scan(&scan(&[[2.06, 0.0, 0.0]], None), &Pose::identity());
    }
    let v = at(&vol, 1.9, 0.05, 0.05).unwrap();
    assert_eq!(v.weight, 5.0);
    assert!((v.distance - 0.16).abs() < 1e-3);
    // Identical observations leave the value exactly where it is.
    let mut fresh = TsdfVolume::new(&cfg(false)).unwrap();
    for _ in 0..50 {
        fresh.integrate_scan(&scan(&[[2.06, 0.0, 0.0]], None), &Pose::identity());
    }
    assert!((at(&fresh, 1.9, 0.05, 0.05).unwrap().distance - 0.16).abs() < 1e-9);
}

#[test]
fn ray_length_gating_bounds_allocation() {
    let c = TsdfConfig { max_ray_length: 5.0, min_ray_length: 0.5, carving: true, ..cfg(true) };
    let mut vol = TsdfVolume::new(&c).unwrap();
    let pose = Pose::from_xyz_yaw(1.0, -2.0, 0.5, 0.7);
    let pts: Vec<[f64; 3]> = (0..200)
        .map(|k| {
            let a = f64::from(k) * 0.1;
            let r = 0.2 + f64::from(k) * 0.05;
            [r * a.cos(), r * a.sin(), 0.3 * (a * 0.7).sin()]
        })
        .collect();
    vol.integrate_scan(&scan(&pts, None), &pose);
    let reach = c.max_ray_length + vol.truncation();
    let block = vol.voxel_size() * vol.voxels_per_side() as f64;
    for k in vol.block_indices() {
        // Distance from the sensor to the nearest point of the block.
        let lo = Vector3::new(k[0] as f64, k[1] as f64, k[2] as f64) * block;
        let t = pose.translation();
        let nearest = Vector3::new(t.x.clamp(lo.x, lo.x + block), t.y.clamp(lo.y, lo.y + block), t.z.clamp(lo.z, lo.z + block));
        assert!((nearest - t).norm() <= reach + 1e-9);
    }
    for b in vol.block_indices() {
        for (i, v) in vol.block(&b).unwrap().voxels.iter().enumerate() {
            if v.is_observed() {
                let n = vol.voxels_per_side() as i64;
                let g = [b[0] * n + i as i64 % n, b[1] * n + (i as i64 / n) % n, b[2] * n + i as i64 / (n * n)];
                assert!((vol.voxel_center(&g) - pose.translation()).norm() <= reach + vol.voxel_size());
            }
        }
    }
}

#[test]
fn blocks_only_along_rays() {
    // Independent oracle: blocks touched by dense samples of each ray band.
    let mut vol = TsdfVolume::new(&cfg(false)).unwrap();
    let s = wall_scan(3.0);
    vol.integrate_scan(&s, &Pose::identity());
    let block = vol.voxel_size() * vol.voxels_per_side() as f64;
    let mut oracle = std::collections::BTreeSet::new();
    for p in &s.points {
        let dir = p.normalize();
        for i in 0..=200 {
            let q = p + dir * (vol.truncation() * (f64::from(i) / 100.0 - 1.0));
            oracle.insert(voxel_key(&q, 1.0 / block));
        }
    }
    let got: std::collections::BTreeSet<_> = vol.block_indices().into_iter().collect();
    assert!(got.is_subset(&oracle), "{:?}", got.difference(&oracle).collect::<Vec<_>>());
    assert!(vol.num_blocks() <= oracle.len());
}

#[test]
fn dirty_blocks_are_tracked() {
    let mut vol = TsdfVolume::new(&cfg(false)).unwrap();
    vol.integrate_scan(&wall_scan(2.0), &Pose::identity());
    let dirty = vol.take_dirty();
    assert_eq!(dirty.iter().copied().collect::<Vec<_>>(), vol.block_indices());
    assert!(vol.dirty().is_empty());
}

#[test]
fn fast_touches_each_voxel_at_most_once_per_scan() {
    let mut vol = TsdfVolume::new(&TsdfConfig { method: IntegrationMethod::Fast, ..cfg(false) }).unwrap();
    vol.integrate_scan(&wall_scan(2.0), &Pose::identity());
    for k in vol.block_indices() {
        assert!(vol.block(&k).unwrap().voxels.iter().all(|v| v.weight <= 1.0));
    }
}

#[test]
fn parallel_and_serial_agree() {
    // Same scan twice in one volume vs. results are reproducible bit for bit.
    let run = || {
        let mut vol = TsdfVolume::new(&TsdfConfig { constant_weight: false, ..cfg(true) }).unwrap();
        vol.integrate_scan(&wall_scan(2.0), &Pose::from_xyz_yaw(0.1, 0.2, 0.0, 0.1));
        vol.integrate_scan(&wall_scan(2.5), &Pose::from_xyz_yaw(-0.1, 0.0, 0.1, -0.2));
        vol.block_indices().into_iter().map(|k| vol.block(&k).unwrap().clone()).collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

#[test]
fn rejects_bad_config() {
    assert!(TsdfVolume::new(&TsdfConfig { voxels_per_side: 6, ..TsdfConfig::default() }).is_err());
    assert!(TsdfVolume::new(&TsdfConfig { voxel_size: 0.0, ..TsdfConfig::default() }).is_err());
}
