#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thzmap::pipeline::{build_maps, estimate, ranging, simulate, Estimation, MapSettings, Maps, Simulation};
use thzmap::Method;
use thzmap_core::estimator::SageConfig;
use thzmap_core::mapper::{label_origins, RangingReport};
use thzmap_core::materials::MaterialDb;
use thzmap_core::scene::{FrequencyGrid, Point2, SceneDescription, TrxConfig, TrxDescription, WallSegment};
use thzmap_core::sim::{PathKind, SimNoiseConfig};

pub const MATERIALS: [&str; 8] = ["Ti", "Sn", "Steel", "Cement", "Ceramic", "Fiber cement", "Cardboard", "Wood"];

pub fn describe(walls: Vec<WallSegment>) -> SceneDescription {
    SceneDescription {
        walls,
        trx: TrxDescription::from(&TrxConfig::default()),
        frequency: FrequencyGrid::default(),
        corners: None,
    }
}

/// Randomised room corner in front of a TRx at the origin.
///
/// The canonical corner has its apex at `d·(cos γ, sin γ)` with one wall
/// running toward −x (long enough to contain its specular point) and one
/// toward −y; the pair is rotated by `ρ`. The apex sits 30–60° away from
/// both wall normals so the corner arc is clear of the specular glints.
pub fn corner_scene(seed: u64) -> SceneDescription {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC0_4E_E5 ^ seed);
    let d = rng.random_range(2.6..4.0);
    let gamma = rng.random_range(30f64..60.0).to_radians();
    let rho = rng.random_range(0f64..40.0).to_radians();
    let (ax, ay) = (d * gamma.cos(), d * gamma.sin());
    let l1 = ax + rng.random_range(0.5..1.5);
    let l2 = ay * rng.random_range(0.5..0.85);
    let apex = Point2::new(ax, ay);
    let p1 = Point2::new(ax - l1, ay);
    let p2 = Point2::new(ax, ay - l2);
    let m1 = MATERIALS[rng.random_range(0..MATERIALS.len())];
    let m2 = MATERIALS[rng.random_range(0..MATERIALS.len())];
    let bs1 = rng.random_range(-30.0..-20.0);
    let bs2 = rng.random_range(-30.0..-20.0);
    describe(vec![
        WallSegment::new(p1.rotated(rho), apex.rotated(rho), m1, bs1),
        WallSegment::new(apex.rotated(rho), p2.rotated(rho), m2, bs2),
    ])
}

pub struct SceneRun {
    pub sim: Simulation,
    pub est: Estimation,
    pub maps: Maps,
    pub ranging: BTreeMap<Method, RangingReport>,
}

/// Simulates at `snr_db` below the strongest path and runs every method.
pub fn run_scene(desc: &SceneDescription, snr_db: f64, seed: u64) -> SceneRun {
    let sim = simulate(desc, &MaterialDb::seed(), &SimNoiseConfig::with_snr(snr_db, seed)).expect("simulate");
    let est = estimate(&sim.response, &sim.scene, Method::SagePlusRemoval, &SageConfig::default()).expect("estimate");
    let maps = build_maps(
        &sim.scene,
        &Method::ALL,
        |m| est.estimates(m).to_vec(),
        &MapSettings::default(),
    );
    let ranging = ranging(&sim.scene, &maps).expect("ranging");
    SceneRun {
        sim,
        est,
        maps,
        ranging,
    }
}

/// `(corner points, corner points flagged, wall points, wall points flagged)`
/// of the removal map, with origins labelled from the simulator paths.
pub fn flag_counts(run: &SceneRun) -> (usize, usize, usize, usize) {
    let cloud = &run.maps.clouds[&Method::SagePlusRemoval];
    let labels = label_origins(
        cloud,
        &run.sim.paths,
        &run.sim.scene.trx,
        run.sim.grid.delay_resolution(),
        2.0,
    );
    let mut c = (0, 0, 0, 0);
    for (p, l) in cloud.points.iter().zip(labels) {
        match l {
            Some(PathKind::CornerRetro) => {
                c.0 += 1;
                c.1 += p.spurious as usize;
            }
            Some(PathKind::WallScatter) => {
                c.2 += 1;
                c.3 += p.spurious as usize;
            }
            None => {}
        }
    }
    c
}
