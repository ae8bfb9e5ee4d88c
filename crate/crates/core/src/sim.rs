//! Forward channel model for a rotating, co-located transceiver.
//!
//! A scene is reduced to discrete multipath components: every wall is
//! discretised into point scatterers and every concave corner contributes a
//! retro-directive double-bounce return. The channel frequency response at
//! frequency `f_k` and scan angle `φ_m` is
//!
//! ```text
//! H(f_k, φ_m) = Σ_ℓ α_ℓ · e^{−j2π f_k τ_ℓ} · e^{j4π f_k R cos(θ_ℓ − φ_m)/c} · g(θ_ℓ − φ_m) + W
//! ```
//!
//! with `g` the two-way normalised antenna pattern. Corner returns come back
//! along whichever direction illuminates them, so for those the array phase is
//! evaluated at boresight while the pattern is still weighted toward the apex.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::antenna::{AntennaPattern, GaussianPattern};
use crate::materials::MaterialDb;
use crate::scene::{FrequencyGrid, Point2, Scene, TrxConfig};
use crate::{wrap_angle, Error, Result, SPEED_OF_LIGHT};

/// Maximum number of matrix entries a synthesis may allocate.
pub const MAX_RESPONSE_ENTRIES: usize = 100_000_000;

/// Free-space path loss `20·log10(4π d f / c)` in dB.
pub fn fspl_db(distance: f64, f: f64) -> f64 {
    20.0 * (4.0 * PI * distance * f / SPEED_OF_LIGHT).log10()
}

/// Echo amplitude in dB from the link budget
/// `G_t + G_r − FSPL(path, f_c) − RL − falloff`.
pub fn link_budget_db(
    gain_dbi: f64,
    path_length: f64,
    f_c: f64,
    rl_db: f64,
    falloff_db: f64,
) -> f64 {
    2.0 * gain_dbi - fspl_db(path_length, f_c) - rl_db - falloff_db
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathKind {
    WallScatter,
    CornerRetro,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthPath {
    pub alpha: Complex64,
    /// Round-trip delay referenced to the array rim, s.
    pub tau: f64,
    /// Azimuth of the scatterer (or apex) seen from the TRx, `[0, 2π)`.
    pub theta: f64,
    pub kind: PathKind,
    /// Wall index for scatter paths, corner index for retro paths.
    pub source_feature: usize,
}

impl GroundTruthPath {
    pub fn power_db(&self) -> f64 {
        crate::db20(self.alpha.norm())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathEnumeration {
    /// Wall discretisation pitch, m.
    pub spacing_m: f64,
    /// Exponent `n` of the `cosⁿ(ψ)` diffuse falloff.
    pub lambert_exponent: f64,
    /// Corner return level below the strongest specular return of its walls, dB.
    pub corner_offset_db: f64,
}

impl Default for PathEnumeration {
    fn default() -> Self {
        PathEnumeration {
            spacing_m: 0.02,
            lambert_exponent: 40.0,
            corner_offset_db: 6.0,
        }
    }
}

/// Delay of an echo from a point `distance` metres from the rotation centre.
pub fn rim_delay(distance: f64, uca_radius: f64) -> f64 {
    2.0 * (distance - uca_radius) / SPEED_OF_LIGHT
}

/// Specular return level of wall `w` (dB), evaluated at its normal distance.
fn specular_level_db(scene: &Scene, w: usize, db: &MaterialDb, f_c: f64) -> Result<f64> {
    let wall = &scene.walls[w];
    let trx = &scene.trx;
    let rl = db.reflection_loss(&wall.material_name, f_c)?;
    let (_, d) = wall.line_foot(trx.position);
    let path = SPEED_OF_LIGHT * rim_delay(d, trx.uca_radius);
    Ok(link_budget_db(trx.antenna_gain_dbi, path, f_c, rl, 0.0))
}

/// Ground-truth multipath components of a scene.
///
/// Walls are sampled every `cfg.spacing_m`; the sample closest to the
/// specular foot carries the full specular return, all others are diffuse
/// scatterers weighted by the wall's backscatter level and `cosⁿ(ψ)`.
pub fn enumerate_paths(
    scene: &Scene,
    grid: &FrequencyGrid,
    db: &MaterialDb,
    cfg: &PathEnumeration,
) -> Result<Vec<GroundTruthPath>> {
    if scene.walls.is_empty() {
        return Err(Error::validation("scene has no walls"));
    }
    if !(cfg.spacing_m > 0.0) || !(cfg.lambert_exponent >= 0.0) {
        return Err(Error::validation("invalid path enumeration parameters"));
    }
    let trx = &scene.trx;
    let f_c = grid.center();
    let mut paths = Vec::new();

    for (wi, wall) in scene.walls.iter().enumerate() {
        let rl = db.reflection_loss(&wall.material_name, f_c)?;
        let len = wall.length();
        let n_pts = (len / cfg.spacing_m - 1e-9).ceil().max(1.0) as usize + 1;
        let normal = wall.unit_normal();
        let ab = wall.b - wall.a;
        let t_foot = (trx.position - wall.a).dot(ab) / ab.dot(ab);
        let specular_idx = (0.0..=1.0)
            .contains(&t_foot)
            .then(|| (t_foot * (n_pts - 1) as f64).round() as usize);

        for k in 0..n_pts {
            let p = wall.a + ab * (k as f64 / (n_pts - 1) as f64);
            let v = p - trx.position;
            let dist = v.norm();
            let tau = rim_delay(dist, trx.uca_radius);
            let cos_psi = (normal.dot(v) / dist).abs().min(1.0);
            let falloff_db = if cos_psi > 0.0 {
                -20.0 * cfg.lambert_exponent * cos_psi.log10()
            } else {
                f64::INFINITY
            };
            let mut level = link_budget_db(
                trx.antenna_gain_dbi,
                SPEED_OF_LIGHT * tau,
                f_c,
                rl,
                falloff_db,
            );
            if specular_idx != Some(k) {
                level += wall.backscatter_db_per_point;
            }
            let mag = if level.is_finite() {
                10f64.powf(level / 20.0)
            } else {
                0.0
            };
            if mag > 0.0 {
                paths.push(GroundTruthPath {
                    alpha: Complex64::new(mag, 0.0),
                    tau,
                    theta: v.azimuth(),
                    kind: PathKind::WallScatter,
                    source_feature: wi,
                });
            }
        }
    }

    for (ci, corner) in scene.corners.iter().enumerate() {
        let strongest = corner
            .wall_ids
            .iter()
            .map(|&w| specular_level_db(scene, w, db, f_c))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .fold(f64::NEG_INFINITY, f64::max);
        let level = strongest - cfg.corner_offset_db;
        paths.push(GroundTruthPath {
            alpha: Complex64::new(10f64.powf(level / 20.0), 0.0),
            tau: rim_delay(corner.direct_distance_d, trx.uca_radius),
            theta: (corner.apex - trx.position).azimuth(),
            kind: PathKind::CornerRetro,
            source_feature: ci,
        });
    }
    Ok(paths)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct SimNoiseConfig {
    /// Mean `|W|²` per matrix entry in dB; `None` synthesises a noiseless
    /// response unless `snr_db` is set.
    pub noise_floor_dbm_per_point: Option<f64>,
    /// Alternative to the absolute floor: noise per entry this many dB below
    /// the strongest path's `|α|²`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub snr_db: Option<f64>,
    pub seed: u64,
}

impl SimNoiseConfig {
    pub fn noiseless() -> Self {
        SimNoiseConfig::default()
    }

    pub fn with_floor(noise_floor_db: f64, seed: u64) -> Self {
        SimNoiseConfig {
            noise_floor_dbm_per_point: Some(noise_floor_db),
            snr_db: None,
            seed,
        }
    }

    pub fn with_snr(snr_db: f64, seed: u64) -> Self {
        SimNoiseConfig {
            noise_floor_dbm_per_point: None,
            snr_db: Some(snr_db),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match (self.noise_floor_dbm_per_point, self.snr_db) {
            (Some(_), Some(_)) => Err(Error::validation(
                "noise: set either noise_floor_dbm_per_point or snr_db, not both",
            )),
            (Some(v), None) | (None, Some(v)) if !v.is_finite() => {
                Err(Error::validation("noise level must be finite"))
            }
            _ => Ok(()),
        }
    }

    /// Resolves `snr_db` against the given paths into an absolute floor.
    pub fn resolved(&self, paths: &[GroundTruthPath]) -> Result<SimNoiseConfig> {
        self.validate()?;
        let floor = match self.snr_db {
            Some(snr) if !paths.is_empty() => Some(strongest_path_db(paths) - snr),
            Some(_) => None,
            None => self.noise_floor_dbm_per_point,
        };
        Ok(SimNoiseConfig {
            noise_floor_dbm_per_point: floor,
            snr_db: None,
            seed: self.seed,
        })
    }
}

/// Complex frequency response `H(f, φ)`, rows = frequency, columns = scan angle.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelResponse {
    pub h: Array2<Complex64>,
    pub grid: FrequencyGrid,
    pub scan_angles_deg: Vec<f64>,
}

/// Sidecar metadata stored next to the binary response file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseSidecar {
    pub n_points: usize,
    pub scan_angles_deg: Vec<f64>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub scene_hash: Option<String>,
}

impl ChannelResponse {
    pub fn new(
        h: Array2<Complex64>,
        grid: FrequencyGrid,
        scan_angles_deg: Vec<f64>,
    ) -> Result<Self> {
        let r = ChannelResponse {
            h,
            grid,
            scan_angles_deg,
        };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if self.h.nrows() != self.grid.n_points || self.h.ncols() != self.scan_angles_deg.len() {
            return Err(Error::validation(format!(
                "response is {}x{}, expected {}x{}",
                self.h.nrows(),
                self.h.ncols(),
                self.grid.n_points,
                self.scan_angles_deg.len()
            )));
        }
        if self
            .h
            .iter()
            .any(|z| !z.re.is_finite() || !z.im.is_finite())
        {
            return Err(Error::Numerical(
                "response contains non-finite entries".into(),
            ));
        }
        Ok(())
    }

    pub fn n_freq(&self) -> usize {
        self.h.nrows()
    }

    pub fn n_scan(&self) -> usize {
        self.h.ncols()
    }

    pub fn scan_angles_rad(&self) -> Vec<f64> {
        self.scan_angles_deg
            .iter()
            .map(|d| d.to_radians())
            .collect()
    }

    /// Total energy `Σ|H|²`.
    pub fn energy(&self) -> f64 {
        self.h.iter().map(|z| z.norm_sqr()).sum()
    }

    /// Writes the little-endian binary file (header `n_freq: u32, n_scan: u32,
    /// f_start: f64, f_stop: f64`, then row-major `(re, im)` pairs).
    pub fn write_binary<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let n_freq = u32::try_from(self.n_freq()).map_err(std::io::Error::other)?;
        let n_scan = u32::try_from(self.n_scan()).map_err(std::io::Error::other)?;
        let mut buf = Vec::with_capacity(24 + 16 * self.h.len());
        buf.extend_from_slice(&n_freq.to_le_bytes());
        buf.extend_from_slice(&n_scan.to_le_bytes());
        buf.extend_from_slice(&self.grid.f_start.to_le_bytes());
        buf.extend_from_slice(&self.grid.f_stop.to_le_bytes());
        for z in self.h.iter() {
            buf.extend_from_slice(&z.re.to_le_bytes());
            buf.extend_from_slice(&z.im.to_le_bytes());
        }
        w.write_all(&buf)
    }

    /// Reads the binary payload; scan angles come from the caller (sidecar).
    pub fn read_binary<R: Read>(mut r: R, scan_angles_deg: Vec<f64>) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)
            .map_err(|e| Error::io("<response>", e))?;
        if bytes.len() < 24 {
            return Err(Error::validation("response file truncated (header)"));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let n_freq = u32_at(0) as usize;
        let n_scan = u32_at(4) as usize;
        let grid = FrequencyGrid::new(f64_at(8), f64_at(16), n_freq)?;
        let expected = 24 + 16 * n_freq * n_scan;
        if bytes.len() != expected {
            return Err(Error::validation(format!(
                "response file has {} bytes, expected {expected}",
                bytes.len()
            )));
        }
        if scan_angles_deg.len() != n_scan {
            return Err(Error::validation("sidecar scan list does not match n_scan"));
        }
        let data: Vec<Complex64> = (0..n_freq * n_scan)
            .map(|i| Complex64::new(f64_at(24 + 16 * i), f64_at(32 + 16 * i)))
            .collect();
        let h = Array2::from_shape_vec((n_freq, n_scan), data)
            .map_err(|e| Error::validation(e.to_string()))?;
        ChannelResponse::new(h, grid, scan_angles_deg)
    }

    /// Writes `path` (binary) and `path` with a `.json` extension (sidecar).
    pub fn save(
        &self,
        path: impl AsRef<Path>,
        seed: Option<u64>,
        scene_hash: Option<String>,
    ) -> Result<PathBuf> {
        let path = path.as_ref();
        let mut bin = Vec::new();
        self.write_binary(&mut bin)
            .map_err(|e| Error::io(path, e))?;
        std::fs::write(path, bin).map_err(|e| Error::io(path, e))?;
        let side = sidecar_path(path);
        let meta = ResponseSidecar {
            n_points: self.n_freq(),
            scan_angles_deg: self.scan_angles_deg.clone(),
            seed,
            scene_hash,
        };
        std::fs::write(&side, serde_json::to_string_pretty(&meta)?)
            .map_err(|e| Error::io(&side, e))?;
        Ok(side)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, ResponseSidecar)> {
        let path = path.as_ref();
        let side = sidecar_path(path);
        let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
        let meta: ResponseSidecar = serde_json::from_str(&text)?;
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let resp = ChannelResponse::read_binary(
            std::io::BufReader::new(file),
            meta.scan_angles_deg.clone(),
        )?;
        Ok((resp, meta))
    }
}

pub fn sidecar_path(bin: &Path) -> PathBuf {
    bin.with_extension("json")
}

/// Synthesises `H(f, φ)` for the given paths using the Gaussian horn pattern
/// of `trx`.
pub fn synthesize_response(
    paths: &[GroundTruthPath],
    grid: &FrequencyGrid,
    trx: &TrxConfig,
    noise: &SimNoiseConfig,
) -> Result<ChannelResponse> {
    synthesize_with_pattern(paths, grid, trx, &GaussianPattern::from_trx(trx), noise)
}

pub fn synthesize_with_pattern(
    paths: &[GroundTruthPath],
    grid: &FrequencyGrid,
    trx: &TrxConfig,
    pattern: &dyn AntennaPattern,
    noise: &SimNoiseConfig,
) -> Result<ChannelResponse> {
    if paths.is_empty() {
        return Err(Error::validation("no paths to synthesise"));
    }
    grid.validate()?;
    let scan = trx.scan_angles_deg();
    let n_freq = grid.n_points;
    let n_scan = scan.len();
    if n_freq.saturating_mul(n_scan) > MAX_RESPONSE_ENTRIES {
        return Err(Error::validation(format!(
            "response of {n_freq}x{n_scan} entries exceeds the {MAX_RESPONSE_ENTRIES} limit"
        )));
    }
    let noise = noise.resolved(paths)?;
    let sigma = noise
        .noise_floor_dbm_per_point
        .map(|db| (10f64.powf(db / 10.0) / 2.0).sqrt());

    let uca_delay = 2.0 * trx.uca_radius / SPEED_OF_LIGHT;
    let f0 = grid.f_start;
    let df = grid.step();
    let mut h = Array2::<Complex64>::zeros((n_freq, n_scan));
    let mut col = vec![Complex64::new(0.0, 0.0); n_freq];

    for (m, phi_deg) in scan.iter().enumerate() {
        let phi = phi_deg.to_radians();
        col.iter_mut().for_each(|z| *z = Complex64::new(0.0, 0.0));
        for p in paths {
            let delta = p.theta - phi;
            let amp = p.alpha * pattern.two_way_amplitude(delta);
            if amp.norm_sqr() == 0.0 {
                continue;
            }
            let array_shift = match p.kind {
                PathKind::WallScatter => uca_delay * delta.cos(),
                PathKind::CornerRetro => uca_delay,
            };
            accumulate_path(&mut col, amp, p.tau - array_shift, f0, df);
        }
        if let Some(sigma) = sigma {
            add_column_noise(&mut col, sigma, noise.seed, m as u64);
        }
        h.column_mut(m)
            .iter_mut()
            .zip(&col)
            .for_each(|(d, s)| *d = *s);
    }
    ChannelResponse::new(h, *grid, scan)
}

/// Adds `amp · e^{−j2π f_k τ}` for `f_k = f0 + k·df` to `col`.
pub(crate) fn accumulate_path(col: &mut [Complex64], amp: Complex64, tau: f64, f0: f64, df: f64) {
    let mut ph = amp * Complex64::cis(-2.0 * PI * (f0 * tau).fract_phase());
    let step = Complex64::cis(-2.0 * PI * (df * tau).fract_phase());
    for (k, z) in col.iter_mut().enumerate() {
        *z += ph;
        ph *= step;
        // re-anchor periodically to bound accumulated rounding
        if k % 512 == 511 {
            let next = (k + 1) as f64;
            ph = amp * Complex64::cis(-2.0 * PI * ((f0 + next * df) * tau).fract_phase());
        }
    }
}

/// Complex white Gaussian noise for scan column `stream`; the stream index
/// keeps the output independent of evaluation order.
fn add_column_noise(col: &mut [Complex64], sigma: f64, seed: u64, stream: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let normal = Normal::new(0.0, sigma).expect("finite sigma");
    for z in col.iter_mut() {
        let re = normal.sample(&mut rng);
        let im = normal.sample(&mut rng);
        *z += Complex64::new(re, im);
    }
}

/// Reduces a cycle count `x` to its fractional part so that `2πx` phases are
/// evaluated accurately for large `f·τ` products.
pub(crate) trait FractPhase {
    fn fract_phase(self) -> f64;
}

impl FractPhase for f64 {
    fn fract_phase(self) -> f64 {
        self - self.round()
    }
}

/// Strongest ground-truth amplitude in dB, used to convert an SNR into an
/// absolute noise floor.
pub fn strongest_path_db(paths: &[GroundTruthPath]) -> f64 {
    paths
        .iter()
        .map(|p| p.power_db())
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Mapping-ready location of a ground-truth scatterer (inverse of the delay
/// convention): `r_S + (cτ/2 + R)·[cos θ, sin θ]`.
pub fn path_location(p: &GroundTruthPath, trx: &TrxConfig) -> Point2 {
    let r = SPEED_OF_LIGHT * p.tau / 2.0 + trx.uca_radius;
    trx.position + Point2::from_polar(r, wrap_angle(p.theta))
}
