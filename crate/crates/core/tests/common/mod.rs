#![allow(dead_code)]

use num_complex::Complex64;
use thzmap_core::materials::MaterialDb;
use thzmap_core::scene::{build_scene, FrequencyGrid, Point2, Scene, TrxConfig, WallSegment};
use thzmap_core::sim::{
    enumerate_paths, synthesize_response, ChannelResponse, GroundTruthPath, PathEnumeration, PathKind,
    SimNoiseConfig,
};

/// Point-like TRx: no array offset, isotropic-ish unit gain.
pub fn bare_trx() -> TrxConfig {
    TrxConfig {
        uca_radius: 0.0,
        antenna_gain_dbi: 0.0,
        ..TrxConfig::default()
    }
}

pub fn path(alpha: Complex64, tau: f64, theta_deg: f64) -> GroundTruthPath {
    GroundTruthPath {
        alpha,
        tau,
        theta: theta_deg.to_radians(),
        kind: PathKind::WallScatter,
        source_feature: 0,
    }
}

/// Cement wall in front, wood wall to the right forming a corner, and a
/// small steel frame on the left — the reference indoor layout.
pub fn reference_scene() -> Scene {
    build_scene(
        vec![
            WallSegment::new(Point2::new(-2.5, 3.0), Point2::new(2.0, 3.0), "Cement", -25.0).with_tag("wall"),
            WallSegment::new(Point2::new(2.0, 3.0), Point2::new(2.0, 0.4), "Wood", -25.0),
            WallSegment::new(Point2::new(-2.3285, 0.767), Point2::new(-1.8285, 1.633), "Steel", -25.0)
                .with_tag("frame"),
        ],
        TrxConfig::default(),
    )
    .unwrap()
}

pub struct Simulated {
    pub scene: Scene,
    pub paths: Vec<GroundTruthPath>,
    pub response: ChannelResponse,
}

pub fn simulate(scene: Scene, noise: &SimNoiseConfig) -> Simulated {
    let grid = FrequencyGrid::default();
    let paths = enumerate_paths(&scene, &grid, &MaterialDb::seed(), &PathEnumeration::default()).unwrap();
    let response = synthesize_response(&paths, &grid, &scene.trx, noise).unwrap();
    Simulated {
        scene,
        paths,
        response,
    }
}

/// Strongest path of the given kind.
pub fn strongest(paths: &[GroundTruthPath], kind: PathKind) -> &GroundTruthPath {
    paths
        .iter()
        .filter(|p| p.kind == kind)
        .max_by(|a, b| a.alpha.norm().total_cmp(&b.alpha.norm()))
        .unwrap()
}

/// Two walls meeting at an apex `d` metres away at azimuth `gamma_deg`,
/// running toward −x and −y from the apex, rotated by `rho_deg`.
pub fn corner(d: f64, gamma_deg: f64, rho_deg: f64, materials: [&str; 2]) -> Scene {
    let (g, r) = (gamma_deg.to_radians(), rho_deg.to_radians());
    let apex = Point2::new(d * g.cos(), d * g.sin());
    let p1 = Point2::new(-1.0, apex.y);
    let p2 = Point2::new(apex.x, 0.3 * apex.y);
    build_scene(
        vec![
            WallSegment::new(p1.rotated(r), apex.rotated(r), materials[0], -25.0),
            WallSegment::new(apex.rotated(r), p2.rotated(r), materials[1], -25.0),
        ],
        TrxConfig::default(),
    )
    .unwrap()
}

/// SAGE estimates kept above the cell floor plus the stop margin.
pub fn sage_detections(h: &ChannelResponse, trx: &TrxConfig) -> Vec<thzmap_core::estimator::MpcEstimate> {
    use thzmap_core::antenna::GaussianPattern;
    use thzmap_core::estimator::{sage_run, SageConfig};
    let cfg = SageConfig::default();
    let mut rep = sage_run(h, trx, &GaussianPattern::from_trx(trx), &cfg).unwrap();
    let cut = rep.cell_floor_db + cfg.stop_margin_db;
    rep.estimates.retain(|e| e.power_db >= cut);
    rep.estimates
}
