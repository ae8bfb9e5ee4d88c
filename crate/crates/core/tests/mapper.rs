mod common;

use std::f64::consts::PI;

use common::{corner, path, reference_scene, sage_detections, simulate};
use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thzmap_core::estimator::MpcEstimate;
use thzmap_core::mapper::{
    arcs_for_known_corners, detect_spurious_arcs, extend_arc_spans, label_origins, mpcs_to_points, ranging_error,
    remove_spurious, ArcDetectConfig, ArcModel, MapCloud, RemovalConfig,
};
use thzmap_core::scene::{build_scene, nearest_surface_distance, Point2, Scene, TrxConfig, WallSegment};
use thzmap_core::sim::{enumerate_paths, path_location, PathEnumeration, PathKind, SimNoiseConfig};
use thzmap_core::{materials::MaterialDb, scene::FrequencyGrid, SPEED_OF_LIGHT};

fn est_at(d_e: f64, az_deg: f64) -> MpcEstimate {
    MpcEstimate::new(Complex64::new(1e-4, 0.0), 2.0 * d_e / SPEED_OF_LIGHT, az_deg.to_radians())
}

fn known_arcs(scene: &Scene, cloud: &MapCloud) -> Vec<ArcModel> {
    let cfg = RemovalConfig::default();
    extend_arc_spans(cloud, &arcs_for_known_corners(scene), cfg.tolerance_cm / 100.0, ArcDetectConfig::default().max_gap_deg)
}

/// Arc of `n` points at echo distance `radius` plus a straight wall at
/// normal distance `dist` (array rim included) around azimuth `normal_deg`.
fn arc_and_wall(radius: f64, span: f64, centre: f64, normal_deg: f64, dist: f64, seed: u64) -> Vec<MpcEstimate> {
    let trx = TrxConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut est = Vec::new();
    for i in 0..40 {
        let az = centre - span / 2.0 + span * i as f64 / 39.0;
        est.push(est_at(radius + rng.random_range(-0.003..0.003), az));
    }
    for i in 0..200 {
        let off = -50.0 + 100.0 * i as f64 / 199.0;
        let range = dist / f64::to_radians(off).cos();
        est.push(est_at(range - trx.uca_radius + rng.random_range(-0.003..0.003), normal_deg + off));
    }
    est
}

#[test]
fn mapping_position_examples() {
    let bare = TrxConfig {
        uca_radius: 0.0,
        ..TrxConfig::default()
    };
    let cloud = mpcs_to_points(&[MpcEstimate::new(Complex64::new(1.0, 0.0), 20e-9, PI / 2.0)], &bare, None);
    let p = cloud.points[0].position;
    assert!(p.x.abs() < 1e-12 && (p.y - 2.997_924_58).abs() < 1e-9);
    let zero = mpcs_to_points(&[MpcEstimate::new(Complex64::new(1.0, 0.0), 0.0, 1.0)], &bare, None);
    assert_eq!(zero.points[0].position, bare.position);
}

#[test]
fn ideal_estimates_land_on_their_walls() {
    let scene = reference_scene();
    let grid = FrequencyGrid::default();
    let spacing = PathEnumeration::default().spacing_m;
    let paths = enumerate_paths(&scene, &grid, &MaterialDb::seed(), &PathEnumeration::default()).unwrap();
    let est: Vec<MpcEstimate> = paths.iter().map(|p| MpcEstimate::new(p.alpha, p.tau, p.theta)).collect();
    let cloud = mpcs_to_points(&est, &scene.trx, None);
    for (pt, p) in cloud.points.iter().zip(&paths) {
        assert!(pt.position.distance(path_location(p, &scene.trx)) < 1e-9);
        if p.kind == PathKind::WallScatter {
            let d = scene.walls[p.source_feature].distance_to(pt.position);
            assert!(d <= spacing / 2.0 + 1e-6, "{d}");
        }
    }
}

#[test]
fn reference_scene_wall_points_are_accurate() {
    let sim = simulate(reference_scene(), &SimNoiseConfig::with_snr(25.0, 2));
    let cloud = mpcs_to_points(&sage_detections(&sim.response, &sim.scene.trx), &sim.scene.trx, None);
    let labels = label_origins(&cloud, &sim.paths, &sim.scene.trx, 0.05e-9, 2.0);
    let wall: Vec<f64> = cloud
        .points
        .iter()
        .zip(&labels)
        .filter(|(_, l)| **l == Some(PathKind::WallScatter))
        .map(|(p, _)| nearest_surface_distance(p.position, &sim.scene))
        .collect();
    assert!(wall.len() >= 20, "only {} wall points", wall.len());
    let close = wall.iter().filter(|&&d| d <= 0.02).count();
    assert!(close as f64 >= 0.9 * wall.len() as f64, "{close}/{}", wall.len());
}

#[test]
fn synthetic_arc_beside_a_wall_is_found_once() {
    let trx = TrxConfig::default();
    let cloud = mpcs_to_points(&arc_and_wall(2.77, 35.0, 45.0, 130.0, 3.0, 1), &trx, None);
    let arcs = detect_spurious_arcs(&cloud, &ArcDetectConfig::default());
    assert_eq!(arcs.len(), 1, "{arcs:?}");
    assert!((arcs[0].radius - 2.77).abs() <= 0.015);
    assert!(arcs[0].width_deg() >= 30.0);
}

#[test]
fn straight_wall_alone_gives_no_arc() {
    let trx = TrxConfig::default();
    for (normal, dist) in [(90.0, 3.0), (60.0, 2.2), (120.0, 4.0)] {
        let est: Vec<MpcEstimate> = (0..200)
            .map(|i| {
                let off = -50.0 + 100.0 * i as f64 / 199.0;
                est_at(dist / f64::to_radians(off).cos() - trx.uca_radius, normal + off)
            })
            .collect();
        let cloud = mpcs_to_points(&est, &trx, None);
        assert!(detect_spurious_arcs(&cloud, &ArcDetectConfig::default()).is_empty());
    }
}

#[test]
fn simulated_single_walls_give_no_arc() {
    // includes the iso-range ghosts SAGE leaves around a strong specular return
    for (k, (material, d)) in [("Ti", 2.5), ("Cement", 3.0), ("Wood", 3.5)].into_iter().enumerate() {
        let scene = build_scene(
            vec![WallSegment::new(Point2::new(-2.5, d), Point2::new(2.5, d), material, -25.0)],
            TrxConfig::default(),
        )
        .unwrap();
        let sim = simulate(scene, &SimNoiseConfig::with_snr(25.0, k as u64));
        let cloud = mpcs_to_points(&sage_detections(&sim.response, &sim.scene.trx), &sim.scene.trx, None);
        let arcs = detect_spurious_arcs(&cloud, &ArcDetectConfig::default());
        assert!(arcs.is_empty(), "{material} at {d} m: {arcs:?}");
    }
}

#[test]
fn blind_detection_finds_simulated_corner_arcs() {
    for (k, (d, gamma, rho)) in [(3.0, 45.0, 10.0), (3.6, 35.0, 25.0), (2.8, 55.0, 0.0)].into_iter().enumerate() {
        let scene = corner(d, gamma, rho, ["Cement", "Wood"]);
        let sim = simulate(scene, &SimNoiseConfig::with_snr(25.0, 30 + k as u64));
        let cloud = mpcs_to_points(&sage_detections(&sim.response, &sim.scene.trx), &sim.scene.trx, None);
        let arcs = detect_spurious_arcs(&cloud, &ArcDetectConfig::default());
        let want = d - sim.scene.trx.uca_radius;
        assert_eq!(arcs.len(), 1, "corner {k}: {arcs:?}");
        assert!((arcs[0].radius - want).abs() <= 0.015, "corner {k}: {} vs {want}", arcs[0].radius);
    }
}

#[test]
fn known_corner_radius() {
    let scene = build_scene(
        vec![
            WallSegment::new(Point2::new(-1.5, 2.5), Point2::new(0.0, 3.0), "Cement", -25.0),
            WallSegment::new(Point2::new(0.0, 3.0), Point2::new(1.5, 2.5), "Cement", -25.0),
        ],
        TrxConfig::default(),
    )
    .unwrap();
    let arcs = arcs_for_known_corners(&scene);
    assert_eq!(arcs.len(), 1);
    assert!((arcs[0].radius - 2.77).abs() < 1e-12);
    assert!(arcs[0].contains(PI / 2.0, 0.0));
}

#[test]
fn removal_examples() {
    let trx = TrxConfig::default();
    let arc = ArcModel {
        center: trx.position,
        radius: 2.77,
        angular_span: [30.0, 65.0],
        support_count: 40,
    };
    let on_arc: Vec<MpcEstimate> = (0..40).map(|i| est_at(2.77, 30.0 + 35.0 * i as f64 / 39.0)).collect();
    let flagged = remove_spurious(&mpcs_to_points(&on_arc, &trx, None), std::slice::from_ref(&arc), &RemovalConfig::default());
    assert_eq!(flagged.n_spurious(), 40);

    let cloud = mpcs_to_points(&arc_and_wall(2.77, 35.0, 47.5, 135.0, 2.0, 2), &trx, None);
    let out = remove_spurious(&cloud, std::slice::from_ref(&arc), &RemovalConfig::default());
    let pad = RemovalConfig::default().hpbw_deg / 2.0;
    for p in &out.points[40..] {
        if !arc.contains(p.azimuth(trx.position), pad) {
            assert!(!p.spurious);
        }
    }
    assert_eq!(out.points[..40].iter().filter(|p| p.spurious).count(), 40);
}

#[test]
fn simulated_corner_removal_precision_and_recall() {
    let (mut corner_pts, mut corner_hit, mut wall_pts, mut wall_hit) = (0, 0, 0, 0);
    for (k, (d, gamma, rho)) in [(3.0, 45.0, 10.0), (3.4, 40.0, 30.0)].into_iter().enumerate() {
        let scene = corner(d, gamma, rho, ["Steel", "Cement"]);
        let sim = simulate(scene, &SimNoiseConfig::with_snr(25.0, 40 + k as u64));
        let cloud = mpcs_to_points(&sage_detections(&sim.response, &sim.scene.trx), &sim.scene.trx, None);
        let out = remove_spurious(&cloud, &known_arcs(&sim.scene, &cloud), &RemovalConfig::default());
        let labels = label_origins(&out, &sim.paths, &sim.scene.trx, 0.05e-9, 2.0);
        for (p, l) in out.points.iter().zip(labels) {
            match l {
                Some(PathKind::CornerRetro) => {
                    corner_pts += 1;
                    corner_hit += p.spurious as usize;
                }
                Some(PathKind::WallScatter) => {
                    wall_pts += 1;
                    wall_hit += p.spurious as usize;
                }
                None => {}
            }
        }
    }
    assert!(corner_pts > 0 && wall_pts > 0);
    assert!(corner_hit as f64 >= 0.95 * corner_pts as f64, "{corner_hit}/{corner_pts}");
    assert!(wall_hit as f64 <= 0.05 * wall_pts as f64, "{wall_hit}/{wall_pts}");
}

#[test]
fn removal_lowers_error_on_corner_scenes() {
    let scenes = [reference_scene(), corner(3.2, 50.0, 15.0, ["Wood", "Ceramic"])];
    for (k, scene) in scenes.into_iter().enumerate() {
        let sim = simulate(scene, &SimNoiseConfig::with_snr(25.0, 50 + k as u64));
        let cloud = mpcs_to_points(&sage_detections(&sim.response, &sim.scene.trx), &sim.scene.trx, None);
        let out = remove_spurious(&cloud, &known_arcs(&sim.scene, &cloud), &RemovalConfig::default());
        let before = ranging_error(&out, &sim.scene, true).unwrap();
        let after = ranging_error(&out, &sim.scene, false).unwrap();
        assert!(after.n_removed > 0);
        assert!(after.mde_cm < before.mde_cm, "scene {k}: {} vs {}", after.mde_cm, before.mde_cm);
    }
}

#[test]
fn ranging_examples() {
    let scene = build_scene(
        vec![WallSegment::new(Point2::new(-5.0, 3.0), Point2::new(5.0, 3.0), "Cement", -25.0)],
        TrxConfig::default(),
    )
    .unwrap();
    let r = scene.trx.uca_radius;
    let on_wall: Vec<MpcEstimate> = [80.0, 90.0, 100.0]
        .iter()
        .map(|&az: &f64| est_at(3.0 / az.to_radians().sin() - r, az))
        .collect();
    let rep = ranging_error(&mpcs_to_points(&on_wall, &scene.trx, None), &scene, false).unwrap();
    assert!(rep.mde_cm < 1e-9 && rep.rmse_cm < 1e-9);

    let off = [est_at(2.99 - r, 90.0), est_at(2.97 - r, 90.0)];
    let rep = ranging_error(&mpcs_to_points(&off, &scene.trx, None), &scene, false).unwrap();
    assert!((rep.mde_cm - 2.0).abs() < 1e-9);
    assert!((rep.rmse_cm - 5f64.sqrt()).abs() < 1e-9);
}

fn arb_cloud() -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((0.5..5.0f64, 0.0..360.0f64), 1..80)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rmse_dominates_mde(pts in arb_cloud()) {
        let scene = reference_scene();
        let est: Vec<MpcEstimate> = pts.iter().map(|&(d, az)| est_at(d, az)).collect();
        let rep = ranging_error(&mpcs_to_points(&est, &scene.trx, None), &scene, true).unwrap();
        prop_assert!(rep.mde_cm >= 0.0 && rep.rmse_cm >= rep.mde_cm);
    }

    #[test]
    fn removal_is_idempotent(pts in arb_cloud(), radius in 1.0..4.0f64, start in 0.0..360.0f64, width in 16.0..90.0f64) {
        let trx = TrxConfig::default();
        let est: Vec<MpcEstimate> = pts.iter().map(|&(d, az)| est_at(d, az)).collect();
        let cloud = mpcs_to_points(&est, &trx, None);
        let arc = ArcModel { center: trx.position, radius, angular_span: [start, start + width], support_count: 0 };
        let once = remove_spurious(&cloud, std::slice::from_ref(&arc), &RemovalConfig::default());
        let twice = remove_spurious(&once, std::slice::from_ref(&arc), &RemovalConfig::default());
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn ranging_is_rotation_equivariant(pts in arb_cloud(), angle in -PI..PI) {
        let scene = reference_scene();
        let est: Vec<MpcEstimate> = pts.iter().map(|&(d, az)| est_at(d, az)).collect();
        let turned: Vec<MpcEstimate> = est.iter().map(|e| MpcEstimate::new(e.alpha, e.tau, e.theta + angle)).collect();
        let a = ranging_error(&mpcs_to_points(&est, &scene.trx, None), &scene, true).unwrap();
        let rotated = scene.rotated_about_trx(angle);
        let b = ranging_error(&mpcs_to_points(&turned, &rotated.trx, None), &rotated, true).unwrap();
        prop_assert!((a.mde_cm - b.mde_cm).abs() < 1e-9 && (a.rmse_cm - b.rmse_cm).abs() < 1e-9);
    }
}

#[test]
fn map_csv_has_expected_columns() {
    let trx = TrxConfig::default();
    let cloud = mpcs_to_points(&[est_at(2.0, 45.0), path_est()], &trx, None);
    let mut buf = Vec::new();
    thzmap_core::mapper::write_map_csv(&mut buf, &cloud).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("x_m,y_m,power_db,tau_ns,theta_deg,spurious"));
    assert_eq!(lines.count(), 2);
}

fn path_est() -> MpcEstimate {
    let p = path(Complex64::new(1e-3, 0.0), 15e-9, 100.0);
    MpcEstimate::new(p.alpha, p.tau, p.theta)
}

#[test]
fn arc_spans_grow_over_contiguous_points_only() {
    let trx = TrxConfig::default();
    let arc = ArcModel {
        center: trx.position,
        radius: 2.77,
        angular_span: [80.0, 100.0],
        support_count: 0,
    };
    // contiguous 60°..120° in 2° steps, then a 20° hole and one stray point at 140°
    let mut est: Vec<MpcEstimate> = (0..=30).map(|i| est_at(2.77, 60.0 + 2.0 * i as f64)).collect();
    est.push(est_at(2.77, 140.0));
    est.push(est_at(2.2, 40.0));
    let cloud = mpcs_to_points(&est, &trx, None);
    let grown = extend_arc_spans(&cloud, std::slice::from_ref(&arc), 0.03, 8.0);
    assert_eq!(grown.len(), 1);
    assert!((grown[0].angular_span[0] - 60.0).abs() < 1e-6, "{:?}", grown[0].angular_span);
    assert!((grown[0].width_deg() - 60.0).abs() < 1e-6, "{:?}", grown[0].angular_span);
    assert_eq!(grown[0].radius, 2.77);
}
