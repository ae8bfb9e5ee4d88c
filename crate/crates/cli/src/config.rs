//! Run configuration: one JSON file, with command-line flags layered on top.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thzmap_core::estimator::SageConfig;
use thzmap_core::mapper::{ArcDetectConfig, RemovalConfig};
use thzmap_core::materials::MaterialDb;
use thzmap_core::sim::SimNoiseConfig;
use thzmap_core::{Error, Result};

/// Ranging method. Selecting a method also reports its prerequisites, see
/// [`Method::chain`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    MaxSearch,
    Sage,
    #[default]
    SagePlusRemoval,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::MaxSearch, Method::Sage, Method::SagePlusRemoval];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::MaxSearch => "max_search",
            Method::Sage => "sage",
            Method::SagePlusRemoval => "sage_plus_removal",
        }
    }

    /// Methods evaluated when `self` is selected. The baseline is always
    /// included (its PADP is computed anyway), and removal needs SAGE output.
    pub fn chain(self) -> &'static [Method] {
        match self {
            Method::MaxSearch => &[Method::MaxSearch],
            Method::Sage => &[Method::MaxSearch, Method::Sage],
            Method::SagePlusRemoval => &Method::ALL,
        }
    }

    pub fn uses_sage(self) -> bool {
        self != Method::MaxSearch
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "max_search" => Ok(Method::MaxSearch),
            "sage" => Ok(Method::Sage),
            "sage_plus_removal" => Ok(Method::SagePlusRemoval),
            other => Err(Error::Validation(format!(
                "unknown method '{other}' (expected max_search, sage or sage_plus_removal)"
            ))),
        }
    }
}

/// Source of the arcs handed to spurious-point removal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArcMode {
    /// Known corners when the scene has any, otherwise blind detection.
    #[default]
    Auto,
    KnownCorner,
    Blind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub scene_path: PathBuf,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub method: Method,
    #[serde(default)]
    pub sage: SageConfig,
    #[serde(default)]
    pub noise: SimNoiseConfig,
    /// Material database CSV; the built-in seed table when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub db_path: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub arc_mode: ArcMode,
    #[serde(default)]
    pub removal: RemovalConfig,
    #[serde(default)]
    pub arc_detect: ArcDetectConfig,
}

impl PipelineConfig {
    pub fn new(scene_path: impl Into<PathBuf>, output_dir: impl Into<PathBuf>) -> Self {
        PipelineConfig {
            scene_path: scene_path.into(),
            output_dir: output_dir.into(),
            method: Method::default(),
            sage: SageConfig::default(),
            noise: SimNoiseConfig::default(),
            db_path: None,
            seed: 0,
            arc_mode: ArcMode::default(),
            removal: RemovalConfig::default(),
            arc_detect: ArcDetectConfig::default(),
        }
    }

    /// Reads a config file; relative paths inside it are resolved against
    /// the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let mut cfg: PipelineConfig = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            msg: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut cfg.scene_path);
        resolve(&mut cfg.output_dir);
        if let Some(db) = cfg.db_path.as_mut() {
            resolve(db);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.scene_path.is_file() {
            return Err(Error::Validation(format!(
                "scene file {} does not exist",
                self.scene_path.display()
            )));
        }
        if let Some(db) = &self.db_path {
            if !db.is_file() {
                return Err(Error::Validation(format!("database {} does not exist", db.display())));
            }
        }
        if self.output_dir.as_os_str().is_empty() {
            return Err(Error::Validation("output_dir must not be empty".into()));
        }
        self.sage.validate()?;
        self.noise.validate()?;
        if !(self.removal.tolerance_cm > 0.0) {
            return Err(Error::Validation("removal.tolerance_cm must be > 0".into()));
        }
        if !(self.arc_detect.radial_bin_cm > 0.0) || !(self.arc_detect.min_span_deg >= 0.0) {
            return Err(Error::Validation("arc_detect bins and spans must be positive".into()));
        }
        Ok(())
    }

    /// Noise settings used for the run: the run seed drives the noise stream.
    pub fn effective_noise(&self) -> SimNoiseConfig {
        SimNoiseConfig {
            seed: self.seed,
            ..self.noise
        }
    }

    pub fn material_db(&self) -> Result<MaterialDb> {
        match &self.db_path {
            Some(p) => MaterialDb::load(p),
            None => Ok(MaterialDb::seed()),
        }
    }

    /// SHA-256 of the canonical JSON form, excluding the output directory so
    /// that identical runs written to different places hash alike.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        c.noise.seed = self.seed;
        let json = serde_json::to_vec(&c).expect("config serialises");
        hex(&Sha256::digest(&json))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// SHA-256 of a file's bytes, hex encoded.
pub fn file_hash(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(hex(&Sha256::digest(&bytes)))
}
