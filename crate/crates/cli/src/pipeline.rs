//! Simulate → estimate → map → identify, and the artifacts of a full run.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thzmap_core::antenna::GaussianPattern;
use thzmap_core::estimator::{
    cell_noise_floor_db, compute_padp, estimate_noise_floor, max_search_baseline, sage_run, to_cir, write_mpc_csv,
    write_padp_csv, MpcEstimate, Padp, SageConfig, SageReport, Window,
};
use thzmap_core::mapper::{
    arcs_for_known_corners, detect_spurious_arcs, extend_arc_spans, mpcs_to_points, ranging_error, remove_spurious, render_svg,
    write_map_csv, ArcDetectConfig, ArcModel, MapCloud, RangingReport, RemovalConfig,
};
use thzmap_core::materials::{extract_reflection_loss, identify_material, IdentificationReport, MaterialDb};
use thzmap_core::scene::{FrequencyGrid, Scene, SceneDescription};
use thzmap_core::sim::{
    enumerate_paths, synthesize_response, ChannelResponse, GroundTruthPath, PathEnumeration, PathKind, SimNoiseConfig,
};
use thzmap_core::{Error, Result};

use crate::config::{file_hash, ArcMode, Method, PipelineConfig};

/// Output of the forward model.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub scene: Scene,
    pub grid: FrequencyGrid,
    pub paths: Vec<GroundTruthPath>,
    pub response: ChannelResponse,
}

pub fn simulate(desc: &SceneDescription, db: &MaterialDb, noise: &SimNoiseConfig) -> Result<Simulation> {
    let scene = desc.build()?;
    let grid = desc.frequency;
    let paths = enumerate_paths(&scene, &grid, db, &PathEnumeration::default())?;
    let response = synthesize_response(&paths, &grid, &scene.trx, noise)?;
    Ok(Simulation {
        scene,
        grid,
        paths,
        response,
    })
}

/// Number of ground-truth paths per kind, keyed by the serialised kind name.
pub fn path_counts(paths: &[GroundTruthPath]) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    for kind in [PathKind::WallScatter, PathKind::CornerRetro] {
        let name = serde_json::to_value(kind)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default();
        counts.insert(name, paths.iter().filter(|p| p.kind == kind).count());
    }
    counts
}

/// Estimates above the detection threshold of each method.
#[derive(Debug, Clone)]
pub struct Estimation {
    pub padp: Padp,
    /// Per-frequency-sample noise floor estimated from the PADP, dB.
    pub noise_floor_db: f64,
    pub max_search: Vec<MpcEstimate>,
    pub sage: Option<SageReport>,
}

impl Estimation {
    /// Detections feeding the map of `method` (removal reuses SAGE's).
    pub fn estimates(&self, method: Method) -> &[MpcEstimate] {
        match method {
            Method::MaxSearch => &self.max_search,
            _ => self.sage.as_ref().map(|r| r.estimates.as_slice()).unwrap_or(&[]),
        }
    }
}

/// Runs the baseline and, when `method` needs it, SAGE.
///
/// Baseline peaks are kept when they clear the cell-domain floor by the
/// expected maximum of `n_delay` exponential noise cells plus the SAGE stop
/// margin, and lie within SAGE's dynamic range of the strongest peak. SAGE
/// estimates are kept above the cell floor plus the stop margin.
pub fn estimate(h: &ChannelResponse, scene: &Scene, method: Method, sage: &SageConfig) -> Result<Estimation> {
    let padp = compute_padp(&to_cir(h, Window::Rectangular));
    let noise_floor_db = estimate_noise_floor(&padp);
    let cell_floor = cell_noise_floor_db(noise_floor_db, padp.noise_bandwidth);
    let n_delay = padp.delay_axis.len().max(2) as f64;
    let peak_cut = cell_floor + 10.0 * n_delay.ln().log10() + sage.stop_margin_db;

    let raw = max_search_baseline(&padp, &scene.trx);
    let strongest = raw.iter().map(|e| e.power_db).fold(f64::NEG_INFINITY, f64::max);
    let max_search = raw
        .into_iter()
        .filter(|e| e.power_db >= peak_cut && e.power_db >= strongest - sage.dynamic_range_db)
        .collect();

    let sage = if method.uses_sage() {
        let pattern = GaussianPattern::from_trx(&scene.trx);
        let mut report = sage_run(h, &scene.trx, &pattern, sage)?;
        let cut = report.cell_floor_db + sage.stop_margin_db;
        report.estimates.retain(|e| e.power_db >= cut);
        Some(report)
    } else {
        None
    };
    Ok(Estimation {
        padp,
        noise_floor_db,
        max_search,
        sage,
    })
}

/// Map-stage settings.
#[derive(Debug, Clone, Copy, Default)]
pub struct MapSettings {
    pub arc_mode: ArcMode,
    pub arc_detect: ArcDetectConfig,
    pub removal: RemovalConfig,
}

impl MapSettings {
    pub fn from_config(cfg: &PipelineConfig) -> Self {
        MapSettings {
            arc_mode: cfg.arc_mode,
            arc_detect: cfg.arc_detect,
            removal: cfg.removal,
        }
    }
}

/// Map clouds per method plus the arcs used for removal.
#[derive(Debug, Clone)]
pub struct Maps {
    pub clouds: BTreeMap<Method, MapCloud>,
    pub arcs: Vec<ArcModel>,
}

/// Arcs for removal according to `mode`; beam widths follow the scene TRx.
/// Known-corner arcs are widened over the points that continue them.
pub fn removal_arcs(
    scene: &Scene,
    cloud: &MapCloud,
    mode: ArcMode,
    detect: &ArcDetectConfig,
    removal: &RemovalConfig,
) -> Vec<ArcModel> {
    let known = match mode {
        ArcMode::KnownCorner => true,
        ArcMode::Blind => false,
        ArcMode::Auto => !scene.corners.is_empty(),
    };
    if known {
        extend_arc_spans(
            cloud,
            &arcs_for_known_corners(scene),
            removal.tolerance_cm / 100.0,
            detect.max_gap_deg,
        )
    } else {
        let cfg = ArcDetectConfig {
            hpbw_deg: scene.trx.hpbw_deg,
            ..*detect
        };
        detect_spurious_arcs(cloud, &cfg)
    }
}

pub fn build_maps(
    scene: &Scene,
    methods: &[Method],
    estimates: impl Fn(Method) -> Vec<MpcEstimate>,
    settings: &MapSettings,
) -> Maps {
    let mut clouds = BTreeMap::new();
    let mut arcs = Vec::new();
    for &m in methods {
        let cloud = match m {
            Method::MaxSearch | Method::Sage => mpcs_to_points(&estimates(m), &scene.trx, None),
            Method::SagePlusRemoval => {
                let raw = mpcs_to_points(&estimates(m), &scene.trx, None);
                arcs = removal_arcs(scene, &raw, settings.arc_mode, &settings.arc_detect, &settings.removal);
                let cfg = RemovalConfig {
                    hpbw_deg: scene.trx.hpbw_deg,
                    ..settings.removal
                };
                remove_spurious(&raw, &arcs, &cfg)
            }
        };
        clouds.insert(m, cloud);
    }
    Maps { clouds, arcs }
}

pub fn ranging(scene: &Scene, maps: &Maps) -> Result<BTreeMap<Method, RangingReport>> {
    maps.clouds
        .iter()
        .map(|(&m, cloud)| Ok((m, ranging_error(cloud, scene, m != Method::SagePlusRemoval)?)))
        .collect()
}

/// Material identification of one user-tagged wall.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceIdentification {
    pub tag: String,
    pub wall_index: usize,
    pub method: Method,
    pub echo: MpcEstimate,
    pub report: IdentificationReport,
}

/// Identifies every tagged wall from its specular echo: the strongest
/// retained map point within `tolerance_m` of the wall line and within half
/// a beamwidth of the wall's normal foot. Walls whose foot lies off the
/// segment, or without such a point, produce a warning instead.
pub fn identify_tagged_surfaces(
    scene: &Scene,
    cloud: &MapCloud,
    method: Method,
    db: &MaterialDb,
    f_query: f64,
    tolerance_m: f64,
) -> Result<(Vec<SurfaceIdentification>, Vec<String>)> {
    let trx = &scene.trx;
    let mut found = Vec::new();
    let mut warnings = Vec::new();
    for (i, wall) in scene.walls.iter().enumerate() {
        let Some(tag) = &wall.tag else { continue };
        let (foot, _) = wall.line_foot(trx.position);
        if wall.distance_to(foot) > 1e-9 {
            warnings.push(format!("surface '{tag}' (wall {i}): no specular point on the segment"));
            continue;
        }
        let foot_az = (foot - trx.position).azimuth();
        let half_beam = trx.hpbw_rad() / 2.0;
        let echo = cloud
            .retained()
            .filter(|p| {
                let (_, d) = wall.line_foot(p.position);
                d <= tolerance_m
                    && thzmap_core::wrap_pi(p.azimuth(trx.position) - foot_az).abs() <= half_beam
                    && p.source.tau > 0.0
            })
            .max_by(|a, b| a.source.power_db.total_cmp(&b.source.power_db));
        let Some(echo) = echo else {
            warnings.push(format!("surface '{tag}' (wall {i}): no specular echo found"));
            continue;
        };
        let rl = extract_reflection_loss(&echo.source, trx, f_query)?;
        let m = identify_material(rl, db, f_query)?;
        let mut report = IdentificationReport::new(rl, f_query, m);
        report.surface = Some(tag.clone());
        found.push(SurfaceIdentification {
            tag: tag.clone(),
            wall_index: i,
            method,
            echo: echo.source,
            report,
        });
    }
    Ok((found, warnings))
}

/// Tolerance between a tagged wall and its specular map point.
pub const IDENTIFY_TOLERANCE_M: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub scene_hash: String,
    pub seed: u64,
    pub versions: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scene: String,
    pub methods: Vec<Method>,
    pub ground_truth_paths: BTreeMap<String, usize>,
    pub noise_floor_db: f64,
    pub n_estimates: BTreeMap<Method, usize>,
    pub ranging: BTreeMap<Method, RangingReport>,
    pub arcs: Vec<ArcModel>,
    pub identifications: Vec<SurfaceIdentification>,
    pub warnings: Vec<String>,
    /// Files written next to the report, relative to the output directory.
    pub artifacts: Vec<String>,
    pub provenance: Provenance,
}

pub const REPORT_FILE: &str = "report.json";
pub const RESPONSE_FILE: &str = "response.bin";
pub const PADP_FILE: &str = "padp.csv";
pub const PADP_DEBUG_FILE: &str = "padp_debug.csv";
pub const RANGING_FILE: &str = "ranging.json";
pub const IDENTIFICATION_FILE: &str = "identification.json";

pub fn mpc_file(m: Method) -> String {
    format!("mpc_{m}.csv")
}

pub fn map_csv_file(m: Method) -> String {
    format!("map_{m}.csv")
}

pub fn map_svg_file(m: Method) -> String {
    format!("map_{m}.svg")
}

pub fn versions() -> BTreeMap<String, String> {
    BTreeMap::from([
        ("thzmap".to_string(), env!("CARGO_PKG_VERSION").to_string()),
        ("report_format".to_string(), "1".to_string()),
    ])
}

pub(crate) fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    File::create(&path).map(BufWriter::new).map_err(|e| Error::Io { path, source: e })
}

pub(crate) fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    let path = dir.join(name);
    std::fs::write(&path, text).map_err(|e| Error::Io { path, source: e })
}

pub(crate) fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

pub(crate) fn write_padp(dir: &Path, name: &str, padp: &Padp) -> Result<()> {
    let mut w = create(dir, name)?;
    write_padp_csv(&mut w, padp)?;
    flush(w, &dir.join(name))
}

pub(crate) fn write_mpcs(dir: &Path, name: &str, est: &[MpcEstimate]) -> Result<()> {
    let mut w = create(dir, name)?;
    write_mpc_csv(&mut w, est)?;
    flush(w, &dir.join(name))
}

pub(crate) fn write_maps(dir: &Path, scene: &Scene, maps: &Maps, artifacts: &mut Vec<String>) -> Result<()> {
    for (&m, cloud) in &maps.clouds {
        let csv = map_csv_file(m);
        let mut w = create(dir, &csv)?;
        write_map_csv(&mut w, cloud)?;
        flush(w, &dir.join(&csv))?;
        let svg = map_svg_file(m);
        let path = dir.join(&svg);
        std::fs::write(&path, render_svg(cloud, scene)).map_err(|e| Error::Io { path, source: e })?;
        artifacts.push(csv);
        artifacts.push(svg);
    }
    Ok(())
}

pub(crate) fn file_name(p: &Path) -> String {
    p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn flush(w: BufWriter<File>, path: &Path) -> Result<()> {
    w.into_inner().map(|_| ()).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e.into_error(),
    })
}

/// Fails with a numerical error (after dumping the PADP) when `method`
/// produced nothing to map.
pub(crate) fn require_detections(est: &Estimation, method: Method, dir: &Path) -> Result<()> {
    if !est.estimates(method).is_empty() {
        return Ok(());
    }
    ensure_dir(dir)?;
    write_padp(dir, PADP_DEBUG_FILE, &est.padp)?;
    Err(Error::Numerical(format!(
        "{method}: no paths above the detection threshold (noise floor {:.1} dB per sample); PADP written to {}",
        est.noise_floor_db,
        dir.join(PADP_DEBUG_FILE).display()
    )))
}

/// Full run: simulate the configured scene, estimate with the selected
/// method chain, map, score, identify tagged surfaces and write every
/// artifact plus `report.json` into the output directory.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<RunReport> {
    cfg.validate()?;
    let desc = SceneDescription::load(&cfg.scene_path)?;
    let db = cfg.material_db()?;
    let out: PathBuf = cfg.output_dir.clone();
    let scene_hash = file_hash(&cfg.scene_path)?;

    let sim = simulate(&desc, &db, &cfg.effective_noise())?;
    let est = estimate(&sim.response, &sim.scene, cfg.method, &cfg.sage)?;
    for &m in cfg.method.chain() {
        require_detections(&est, m, &out)?;
    }
    ensure_dir(&out)?;

    let mut artifacts = Vec::new();
    let sidecar = sim
        .response
        .save(out.join(RESPONSE_FILE), Some(cfg.seed), Some(scene_hash.clone()))?;
    artifacts.push(RESPONSE_FILE.to_string());
    artifacts.push(file_name(&sidecar));
    write_padp(&out, PADP_FILE, &est.padp)?;
    artifacts.push(PADP_FILE.to_string());

    let methods = cfg.method.chain().to_vec();
    for &m in &methods {
        if m != Method::SagePlusRemoval {
            write_mpcs(&out, &mpc_file(m), est.estimates(m))?;
            artifacts.push(mpc_file(m));
        }
    }

    let maps = build_maps(
        &sim.scene,
        &methods,
        |m| est.estimates(m).to_vec(),
        &MapSettings::from_config(cfg),
    );
    for (m, cloud) in &maps.clouds {
        if cloud.points.is_empty() {
            return Err(Error::Numerical(format!("{m}: map is empty")));
        }
    }
    let ranging = ranging(&sim.scene, &maps)?;
    write_maps(&out, &sim.scene, &maps, &mut artifacts)?;
    write_json(&out, RANGING_FILE, &ranging)?;
    artifacts.push(RANGING_FILE.to_string());

    // the selected (most refined) method supplies the echoes
    let id_method = cfg.method;
    let (identifications, warnings) = identify_tagged_surfaces(
        &sim.scene,
        &maps.clouds[&id_method],
        id_method,
        &db,
        sim.grid.center(),
        IDENTIFY_TOLERANCE_M,
    )?;
    let id_reports: Vec<&IdentificationReport> = identifications.iter().map(|s| &s.report).collect();
    write_json(&out, IDENTIFICATION_FILE, &id_reports)?;
    artifacts.push(IDENTIFICATION_FILE.to_string());

    let report = RunReport {
        scene: file_name(&cfg.scene_path),
        methods: methods.clone(),
        ground_truth_paths: path_counts(&sim.paths),
        noise_floor_db: est.noise_floor_db,
        n_estimates: methods.iter().map(|&m| (m, est.estimates(m).len())).collect(),
        ranging,
        arcs: maps.arcs,
        identifications,
        warnings,
        artifacts,
        provenance: Provenance {
            config_hash: cfg.hash(),
            scene_hash,
            seed: cfg.seed,
            versions: versions(),
        },
    };
    write_json(&out, REPORT_FILE, &report)?;
    Ok(report)
}
