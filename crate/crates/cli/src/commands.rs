//! Subcommand implementations. Stages communicate through files in the
//! output directory, so `simulate`, `estimate`, `map` and `identify` can be
//! run one after another or replaced by `pipeline`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thzmap_core::estimator::{read_mpc_csv, MpcEstimate};
use thzmap_core::mapper::RangingReport;
use thzmap_core::materials::{identify_material, IdentificationReport, MaterialDb};
use thzmap_core::scene::SceneDescription;
use thzmap_core::sim::ChannelResponse;
use thzmap_core::{Error, Result};

use crate::config::{file_hash, Method, PipelineConfig};
use crate::pipeline::{
    build_maps, ensure_dir, estimate, identify_tagged_surfaces, map_csv_file, mpc_file, path_counts,
    ranging, require_detections, run_pipeline, simulate, write_json, write_maps, write_mpcs, write_padp, MapSettings,
    RunReport, IDENTIFICATION_FILE, IDENTIFY_TOLERANCE_M, PADP_FILE, RANGING_FILE, RESPONSE_FILE,
};

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub method: Option<Method>,
    pub output: Option<PathBuf>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut PipelineConfig) {
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(m) = self.method {
            cfg.method = m;
        }
        if let Some(o) = &self.output {
            cfg.output_dir = o.clone();
        }
    }
}

/// Loads the config file and layers the flags on top.
pub fn load_config(path: &Path, overrides: &Overrides) -> Result<PipelineConfig> {
    let mut cfg = PipelineConfig::load(path)?;
    overrides.apply(&mut cfg);
    Ok(cfg)
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulateOutcome {
    pub response: PathBuf,
    pub sidecar: PathBuf,
    pub n_freq: usize,
    pub n_scan: usize,
    pub paths: BTreeMap<String, usize>,
}

pub fn cmd_simulate(cfg: &PipelineConfig) -> Result<SimulateOutcome> {
    cfg.validate()?;
    let desc = SceneDescription::load(&cfg.scene_path)?;
    let sim = simulate(&desc, &cfg.material_db()?, &cfg.effective_noise())?;
    ensure_dir(&cfg.output_dir)?;
    let response = cfg.output_dir.join(RESPONSE_FILE);
    let sidecar = sim
        .response
        .save(&response, Some(cfg.seed), Some(file_hash(&cfg.scene_path)?))?;
    Ok(SimulateOutcome {
        response,
        sidecar,
        n_freq: sim.response.n_freq(),
        n_scan: sim.response.n_scan(),
        paths: path_counts(&sim.paths),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct EstimateOutcome {
    pub noise_floor_db: f64,
    pub n_estimates: BTreeMap<Method, usize>,
    pub artifacts: Vec<String>,
}

/// Estimates from a stored response (`input`, default `<output>/response.bin`).
pub fn cmd_estimate(cfg: &PipelineConfig, input: Option<&Path>) -> Result<EstimateOutcome> {
    cfg.validate()?;
    let scene = SceneDescription::load(&cfg.scene_path)?.build()?;
    let input = input.map(Path::to_path_buf).unwrap_or_else(|| cfg.output_dir.join(RESPONSE_FILE));
    let (h, _) = ChannelResponse::load(&input)?;
    if h.n_scan() != scene.trx.scan_angles_deg().len() {
        return Err(Error::Validation(format!(
            "{} has {} scan angles but the scene scans {}",
            input.display(),
            h.n_scan(),
            scene.trx.scan_angles_deg().len()
        )));
    }
    let est = estimate(&h, &scene, cfg.method, &cfg.sage)?;
    for &m in cfg.method.chain() {
        require_detections(&est, m, &cfg.output_dir)?;
    }
    ensure_dir(&cfg.output_dir)?;
    write_padp(&cfg.output_dir, PADP_FILE, &est.padp)?;
    let mut artifacts = vec![PADP_FILE.to_string()];
    let mut n_estimates = BTreeMap::new();
    for &m in cfg.method.chain() {
        if m != Method::SagePlusRemoval {
            write_mpcs(&cfg.output_dir, &mpc_file(m), est.estimates(m))?;
            artifacts.push(mpc_file(m));
        }
        n_estimates.insert(m, est.estimates(m).len());
    }
    Ok(EstimateOutcome {
        noise_floor_db: est.noise_floor_db,
        n_estimates,
        artifacts,
    })
}

/// Estimates file feeding `m`'s map (removal reuses the SAGE estimates).
fn mpc_source(m: Method) -> String {
    match m {
        Method::MaxSearch => mpc_file(Method::MaxSearch),
        _ => mpc_file(Method::Sage),
    }
}

fn read_stage_estimates(dir: &Path, methods: &[Method]) -> Result<BTreeMap<Method, Vec<MpcEstimate>>> {
    methods
        .iter()
        .map(|&m| Ok((m, read_mpc_csv(dir.join(mpc_source(m)))?)))
        .collect()
}

/// Maps the stored estimates of the selected method chain and scores them.
pub fn cmd_map(cfg: &PipelineConfig) -> Result<BTreeMap<Method, RangingReport>> {
    cfg.validate()?;
    let scene = SceneDescription::load(&cfg.scene_path)?.build()?;
    let methods = cfg.method.chain();
    let est = read_stage_estimates(&cfg.output_dir, methods)?;
    let maps = build_maps(&scene, methods, |m| est[&m].clone(), &MapSettings::from_config(cfg));
    for (m, cloud) in &maps.clouds {
        if cloud.points.is_empty() {
            return Err(Error::Numerical(format!("{m}: no estimates to map")));
        }
    }
    let report = ranging(&scene, &maps)?;
    let mut artifacts = Vec::new();
    write_maps(&cfg.output_dir, &scene, &maps, &mut artifacts)?;
    write_json(&cfg.output_dir, RANGING_FILE, &report)?;
    Ok(report)
}

/// Identifies the scene's tagged surfaces from the selected method's estimates.
pub fn cmd_identify(cfg: &PipelineConfig) -> Result<(Vec<IdentificationReport>, Vec<String>)> {
    cfg.validate()?;
    let desc = SceneDescription::load(&cfg.scene_path)?;
    let scene = desc.build()?;
    let db = cfg.material_db()?;
    let m = cfg.method;
    let est = read_stage_estimates(&cfg.output_dir, &[m])?;
    let maps = build_maps(&scene, &[m], |m| est[&m].clone(), &MapSettings::from_config(cfg));
    let (found, warnings) = identify_tagged_surfaces(
        &scene,
        &maps.clouds[&m],
        m,
        &db,
        desc.frequency.center(),
        IDENTIFY_TOLERANCE_M,
    )?;
    let reports: Vec<IdentificationReport> = found.into_iter().map(|s| s.report).collect();
    write_json(&cfg.output_dir, IDENTIFICATION_FILE, &reports)?;
    Ok((reports, warnings))
}

pub fn cmd_pipeline(cfg: &PipelineConfig) -> Result<RunReport> {
    run_pipeline(cfg)
}

/// Merges the records of `source` into the database at `target` (created
/// from the seed table when missing) and returns the merged record count.
pub fn cmd_db_import(source: &Path, target: &Path) -> Result<usize> {
    let incoming = MaterialDb::load(source)?;
    let mut db = if target.exists() {
        MaterialDb::load(target)?
    } else {
        MaterialDb::seed()
    };
    for r in incoming.records() {
        db.upsert(r.clone())?;
    }
    if let Some(dir) = target.parent().filter(|d| !d.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    db.save(target)?;
    Ok(db.len())
}

pub fn cmd_db_query(rl_db: f64, f_hz: f64, db_path: Option<&Path>) -> Result<IdentificationReport> {
    if !rl_db.is_finite() || !(f_hz > 0.0) {
        return Err(Error::Validation("query needs a finite --rl and a positive --f".into()));
    }
    let db = match db_path {
        Some(p) => MaterialDb::load(p)?,
        None => MaterialDb::seed(),
    };
    Ok(IdentificationReport::new(rl_db, f_hz, identify_material(rl_db, &db, f_hz)?))
}

/// Paths of the map CSVs a pipeline run writes, for callers comparing runs.
pub fn map_csv_paths(cfg: &PipelineConfig) -> Vec<PathBuf> {
    cfg.method.chain().iter().map(|&m| cfg.output_dir.join(map_csv_file(m))).collect()
}

