//! Planar scene geometry: walls, derived corners and the rotating transceiver.
//!
//! Everything lives in the azimuth plane. The transceiver height is kept only
//! as metadata in [`TrxConfig::height_m`].

use std::f64::consts::{PI, TAU};
use std::ops::{Add, Mul, Sub};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{wrap_angle, Error, Result};

const APEX_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const ORIGIN: Point2 = Point2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Point2 { x, y }
    }

    /// Unit vector pointing at azimuth `theta` (radians).
    pub fn from_polar(r: f64, theta: f64) -> Self {
        Point2::new(r * theta.cos(), r * theta.sin())
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dot(self, o: Point2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn cross(self, o: Point2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn distance(self, o: Point2) -> f64 {
        (self - o).norm()
    }

    /// Azimuth of the vector in `[0, 2π)`.
    pub fn azimuth(self) -> f64 {
        wrap_angle(self.y.atan2(self.x))
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    /// Rotates about the origin by `angle` radians.
    pub fn rotated(self, angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Point2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }
}

impl From<[f64; 2]> for Point2 {
    fn from(v: [f64; 2]) -> Self {
        Point2::new(v[0], v[1])
    }
}

impl From<Point2> for [f64; 2] {
    fn from(p: Point2) -> Self {
        [p.x, p.y]
    }
}

impl Add for Point2 {
    type Output = Point2;
    fn add(self, o: Point2) -> Point2 {
        Point2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Point2 {
    type Output = Point2;
    fn sub(self, o: Point2) -> Point2 {
        Point2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Point2 {
    type Output = Point2;
    fn mul(self, k: f64) -> Point2 {
        Point2::new(self.x * k, self.y * k)
    }
}

/// A straight wall (or frame, or any flat reflector) in the scan plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WallSegment {
    pub a: Point2,
    pub b: Point2,
    #[serde(rename = "material")]
    pub material_name: String,
    /// Diffuse backscatter strength of each discretised scatterer relative
    /// to the specular return, dB.
    #[serde(rename = "backscatter_db", default = "default_backscatter")]
    pub backscatter_db_per_point: f64,
    /// Optional user label ("wall", "window", ...) used to request material
    /// identification for this surface.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag: Option<String>,
}

fn default_backscatter() -> f64 {
    -20.0
}

impl WallSegment {
    pub fn new(a: Point2, b: Point2, material: impl Into<String>, backscatter_db: f64) -> Self {
        WallSegment {
            a,
            b,
            material_name: material.into(),
            backscatter_db_per_point: backscatter_db,
            tag: None,
        }
    }

    pub fn with_tag(mut self, tag: impl Into<String>) -> Self {
        self.tag = Some(tag.into());
        self
    }

    pub fn length(&self) -> f64 {
        self.a.distance(self.b)
    }

    /// Closest point of the segment to `p`.
    pub fn closest_point(&self, p: Point2) -> Point2 {
        let ab = self.b - self.a;
        let t = ((p - self.a).dot(ab) / ab.dot(ab)).clamp(0.0, 1.0);
        self.a + ab * t
    }

    pub fn distance_to(&self, p: Point2) -> f64 {
        self.closest_point(p).distance(p)
    }

    /// Foot of the perpendicular from `p` onto the infinite wall line, and
    /// the normal distance.
    pub fn line_foot(&self, p: Point2) -> (Point2, f64) {
        let ab = self.b - self.a;
        let t = (p - self.a).dot(ab) / ab.dot(ab);
        let foot = self.a + ab * t;
        (foot, foot.distance(p))
    }

    /// Unit normal of the wall line.
    pub fn unit_normal(&self) -> Point2 {
        let d = self.b - self.a;
        let n = Point2::new(-d.y, d.x);
        n * (1.0 / n.norm())
    }
}

/// Concave wall-pair intersection as seen from the transceiver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CornerFeature {
    pub apex: Point2,
    pub wall_ids: [usize; 2],
    /// Distance from the transceiver (rotation centre) to the apex, m.
    pub direct_distance_d: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrxConfig {
    pub position: Point2,
    pub uca_radius: f64,
    pub antenna_gain_dbi: f64,
    pub hpbw_deg: f64,
    pub scan_start_deg: f64,
    pub scan_step_deg: f64,
    pub scan_stop_deg: f64,
    /// Mounting height; recorded but unused by the planar model.
    pub height_m: f64,
}

impl Default for TrxConfig {
    fn default() -> Self {
        TrxConfig {
            position: Point2::ORIGIN,
            uca_radius: 0.23,
            antenna_gain_dbi: 26.0,
            hpbw_deg: 8.0,
            scan_start_deg: 0.0,
            scan_step_deg: 1.0,
            scan_stop_deg: 180.0,
            height_m: 2.0,
        }
    }
}

impl TrxConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.position.is_finite() {
            return Err(Error::validation("TRx position must be finite"));
        }
        if !(self.uca_radius > 0.0) || !self.uca_radius.is_finite() {
            return Err(Error::validation("uca_radius must be > 0"));
        }
        if !(self.hpbw_deg > 0.0) {
            return Err(Error::validation("hpbw_deg must be > 0"));
        }
        if !self.antenna_gain_dbi.is_finite() {
            return Err(Error::validation("antenna_gain_dbi must be finite"));
        }
        if !(self.scan_step_deg > 0.0) {
            return Err(Error::validation("scan step must be > 0"));
        }
        if !(self.scan_stop_deg >= self.scan_start_deg) {
            return Err(Error::validation("scan list is empty (stop < start)"));
        }
        Ok(())
    }

    /// Scan angles in degrees, `start..=stop` by `step`.
    pub fn scan_angles_deg(&self) -> Vec<f64> {
        let n = ((self.scan_stop_deg - self.scan_start_deg) / self.scan_step_deg + 1e-9).floor()
            as usize
            + 1;
        (0..n)
            .map(|i| self.scan_start_deg + i as f64 * self.scan_step_deg)
            .collect()
    }

    pub fn hpbw_rad(&self) -> f64 {
        self.hpbw_deg.to_radians()
    }
}

/// Uniform frequency sampling of the measured band.
///
/// The band `[f_start, f_stop)` is sampled at `n_points` bins spaced
/// `B / n_points`, so the inverse DFT delay bins are exactly `1 / B` apart.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrequencyGrid {
    #[serde(rename = "start_hz")]
    pub f_start: f64,
    #[serde(rename = "stop_hz")]
    pub f_stop: f64,
    pub n_points: usize,
}

impl Default for FrequencyGrid {
    fn default() -> Self {
        FrequencyGrid {
            f_start: 290e9,
            f_stop: 310e9,
            n_points: 2001,
        }
    }
}

impl FrequencyGrid {
    pub fn new(f_start: f64, f_stop: f64, n_points: usize) -> Result<Self> {
        let g = FrequencyGrid {
            f_start,
            f_stop,
            n_points,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.f_start.is_finite() && self.f_stop.is_finite()) || !(self.f_stop > self.f_start) {
            return Err(Error::validation(
                "frequency grid requires f_stop > f_start",
            ));
        }
        if self.n_points < 2 {
            return Err(Error::validation("frequency grid needs at least 2 points"));
        }
        Ok(())
    }

    pub fn bandwidth(&self) -> f64 {
        self.f_stop - self.f_start
    }

    pub fn step(&self) -> f64 {
        self.bandwidth() / self.n_points as f64
    }

    pub fn frequency(&self, k: usize) -> f64 {
        self.f_start + k as f64 * self.step()
    }

    pub fn frequencies(&self) -> Vec<f64> {
        (0..self.n_points).map(|k| self.frequency(k)).collect()
    }

    pub fn center(&self) -> f64 {
        0.5 * (self.f_start + self.f_stop)
    }

    /// Delay bin spacing of the inverse DFT, `1 / B`.
    pub fn delay_resolution(&self) -> f64 {
        1.0 / self.bandwidth()
    }

    /// Unambiguous delay window `n_points / B`.
    pub fn max_delay(&self) -> f64 {
        self.n_points as f64 / self.bandwidth()
    }

    /// One-way distance resolution `c / B` (recorded metadata).
    pub fn distance_resolution(&self) -> f64 {
        crate::SPEED_OF_LIGHT / self.bandwidth()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scene {
    pub walls: Vec<WallSegment>,
    pub corners: Vec<CornerFeature>,
    pub trx: TrxConfig,
}

/// User-declared corner, overriding geometric derivation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CornerOverride {
    pub apex: Point2,
    pub walls: [usize; 2],
}

/// Scene file as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneDescription {
    pub walls: Vec<WallSegment>,
    pub trx: TrxDescription,
    #[serde(default)]
    pub frequency: FrequencyGrid,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corners: Option<Vec<CornerOverride>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrxDescription {
    pub position: Point2,
    #[serde(default = "d_radius")]
    pub uca_radius: f64,
    #[serde(default = "d_gain")]
    pub antenna_gain_dbi: f64,
    #[serde(default = "d_hpbw")]
    pub hpbw_deg: f64,
    /// `[start, step, stop]` in degrees.
    #[serde(default = "d_scan")]
    pub scan: [f64; 3],
    #[serde(default = "d_height")]
    pub height_m: f64,
}

fn d_radius() -> f64 {
    0.23
}
fn d_gain() -> f64 {
    26.0
}
fn d_hpbw() -> f64 {
    8.0
}
fn d_scan() -> [f64; 3] {
    [0.0, 1.0, 180.0]
}
fn d_height() -> f64 {
    2.0
}

impl From<&TrxDescription> for TrxConfig {
    fn from(t: &TrxDescription) -> Self {
        TrxConfig {
            position: t.position,
            uca_radius: t.uca_radius,
            antenna_gain_dbi: t.antenna_gain_dbi,
            hpbw_deg: t.hpbw_deg,
            scan_start_deg: t.scan[0],
            scan_step_deg: t.scan[1],
            scan_stop_deg: t.scan[2],
            height_m: t.height_m,
        }
    }
}

impl From<&TrxConfig> for TrxDescription {
    fn from(t: &TrxConfig) -> Self {
        TrxDescription {
            position: t.position,
            uca_radius: t.uca_radius,
            antenna_gain_dbi: t.antenna_gain_dbi,
            hpbw_deg: t.hpbw_deg,
            scan: [t.scan_start_deg, t.scan_step_deg, t.scan_stop_deg],
            height_m: t.height_m,
        }
    }
}

impl SceneDescription {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            msg: e.to_string(),
        })
    }

    pub fn build(&self) -> Result<Scene> {
        self.frequency.validate()?;
        let trx = TrxConfig::from(&self.trx);
        match &self.corners {
            None => build_scene(self.walls.clone(), trx),
            Some(manual) => build_scene_with_corners(self.walls.clone(), trx, manual),
        }
    }
}

/// Validates walls and transceiver and derives the concave corners.
pub fn build_scene(walls: Vec<WallSegment>, trx: TrxConfig) -> Result<Scene> {
    validate_geometry(&walls, &trx)?;
    let corners = derive_corners(&walls, trx.position);
    Ok(Scene {
        walls,
        corners,
        trx,
    })
}

/// Like [`build_scene`], but with user-declared corners instead of derived ones.
pub fn build_scene_with_corners(
    walls: Vec<WallSegment>,
    trx: TrxConfig,
    manual: &[CornerOverride],
) -> Result<Scene> {
    validate_geometry(&walls, &trx)?;
    let mut corners = Vec::with_capacity(manual.len());
    for c in manual {
        for &w in &c.walls {
            let wall = walls
                .get(w)
                .ok_or_else(|| Error::validation(format!("corner references missing wall {w}")))?;
            if wall.distance_to(c.apex) > APEX_TOL * (1.0 + c.apex.norm()) {
                return Err(Error::validation(format!(
                    "corner apex ({}, {}) does not lie on wall {w}",
                    c.apex.x, c.apex.y
                )));
            }
        }
        corners.push(CornerFeature {
            apex: c.apex,
            wall_ids: c.walls,
            direct_distance_d: c.apex.distance(trx.position),
        });
    }
    sort_corners(&mut corners, trx.position);
    Ok(Scene {
        walls,
        corners,
        trx,
    })
}

fn validate_geometry(walls: &[WallSegment], trx: &TrxConfig) -> Result<()> {
    trx.validate()?;
    for (i, w) in walls.iter().enumerate() {
        if !w.a.is_finite() || !w.b.is_finite() {
            return Err(Error::validation(format!(
                "wall {i} has non-finite endpoints"
            )));
        }
        if !(w.length() > 0.0) {
            return Err(Error::validation(format!(
                "wall {i} is degenerate (zero length)"
            )));
        }
        if !w.backscatter_db_per_point.is_finite() {
            return Err(Error::validation(format!(
                "wall {i} backscatter_db must be finite"
            )));
        }
        if w.distance_to(trx.position) <= trx.uca_radius {
            return Err(Error::validation(format!(
                "wall {i} passes through the TRx array disc"
            )));
        }
    }
    for i in 0..walls.len() {
        for j in (i + 1)..walls.len() {
            if collinear_overlap(&walls[i], &walls[j]) {
                return Err(Error::validation(format!("walls {i} and {j} overlap")));
            }
        }
    }
    Ok(())
}

fn collinear_overlap(w1: &WallSegment, w2: &WallSegment) -> bool {
    let d1 = w1.b - w1.a;
    let scale = d1.norm();
    let tol = 1e-9 * scale.max(1.0);
    let off_a = d1.cross(w2.a - w1.a) / scale;
    let off_b = d1.cross(w2.b - w1.a) / scale;
    if off_a.abs() > tol || off_b.abs() > tol {
        return false;
    }
    // project w2 onto w1's axis
    let t0 = d1.dot(w2.a - w1.a) / scale;
    let t1 = d1.dot(w2.b - w1.a) / scale;
    let (lo, hi) = (t0.min(t1), t0.max(t1));
    let overlap = hi.min(scale) - lo.max(0.0);
    overlap > tol
}

/// Intersection of two segments (including touching endpoints).
fn segment_intersection(w1: &WallSegment, w2: &WallSegment) -> Option<Point2> {
    let r = w1.b - w1.a;
    let s = w2.b - w2.a;
    let denom = r.cross(s);
    if denom.abs() < 1e-15 * r.norm() * s.norm() {
        return None;
    }
    let qp = w2.a - w1.a;
    let t = qp.cross(s) / denom;
    let u = qp.cross(r) / denom;
    let eps = 1e-12;
    if (-eps..=1.0 + eps).contains(&t) && (-eps..=1.0 + eps).contains(&u) {
        // snap to shared endpoints so the apex lies on both segments exactly
        for e in [w1.a, w1.b] {
            if e.distance(w2.a) < APEX_TOL || e.distance(w2.b) < APEX_TOL {
                return Some(e);
            }
        }
        Some(w1.a + r * t.clamp(0.0, 1.0))
    } else {
        None
    }
}

/// True when the transceiver sits inside a wedge (< 180°) bounded by one
/// ray of each wall, i.e. the corner is concave from the TRx viewpoint.
fn is_concave_from(apex: Point2, w1: &WallSegment, w2: &WallSegment, trx: Point2) -> bool {
    let mut rays: Vec<(f64, usize)> = Vec::with_capacity(4);
    for (id, w) in [(0usize, w1), (1usize, w2)] {
        for e in [w.a, w.b] {
            if e.distance(apex) > APEX_TOL {
                rays.push(((e - apex).azimuth(), id));
            }
        }
    }
    if rays.len() < 2 {
        return false;
    }
    rays.sort_by(|a, b| a.0.total_cmp(&b.0));
    let view = (trx - apex).azimuth();
    for k in 0..rays.len() {
        let (lo, lo_id) = rays[k];
        let (hi, hi_id) = rays[(k + 1) % rays.len()];
        let width = (hi - lo).rem_euclid(TAU);
        let offset = (view - lo).rem_euclid(TAU);
        if offset > 1e-12 && offset < width - 1e-12 {
            return lo_id != hi_id && width < PI - 1e-12;
        }
    }
    false
}

fn derive_corners(walls: &[WallSegment], trx: Point2) -> Vec<CornerFeature> {
    let mut corners = Vec::new();
    for i in 0..walls.len() {
        for j in (i + 1)..walls.len() {
            if let Some(apex) = segment_intersection(&walls[i], &walls[j]) {
                if is_concave_from(apex, &walls[i], &walls[j], trx) {
                    corners.push(CornerFeature {
                        apex,
                        wall_ids: [i, j],
                        direct_distance_d: apex.distance(trx),
                    });
                }
            }
        }
    }
    sort_corners(&mut corners, trx);
    corners
}

fn sort_corners(corners: &mut [CornerFeature], trx: Point2) {
    corners.sort_by(|a, b| {
        let az_a = (a.apex - trx).azimuth();
        let az_b = (b.apex - trx).azimuth();
        az_a.total_cmp(&az_b)
            .then(a.direct_distance_d.total_cmp(&b.direct_distance_d))
            .then(a.wall_ids.cmp(&b.wall_ids))
    });
}

/// Euclidean distance from `p` to the closest wall; `+∞` for a wall-less scene.
pub fn nearest_surface_distance(p: Point2, scene: &Scene) -> f64 {
    scene
        .walls
        .iter()
        .map(|w| w.distance_to(p))
        .fold(f64::INFINITY, f64::min)
}

impl Scene {
    /// Returns a copy rotated by `angle` about the transceiver position.
    pub fn rotated_about_trx(&self, angle: f64) -> Scene {
        let c = self.trx.position;
        let rot = |p: Point2| (p - c).rotated(angle) + c;
        Scene {
            walls: self
                .walls
                .iter()
                .map(|w| WallSegment {
                    a: rot(w.a),
                    b: rot(w.b),
                    ..w.clone()
                })
                .collect(),
            corners: self
                .corners
                .iter()
                .map(|k| CornerFeature {
                    apex: rot(k.apex),
                    ..k.clone()
                })
                .collect(),
            trx: self.trx.clone(),
        }
    }

    /// Index of the wall closest to `p`.
    pub fn nearest_wall(&self, p: Point2) -> Option<(usize, f64)> {
        self.walls
            .iter()
            .enumerate()
            .map(|(i, w)| (i, w.distance_to(p)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
    }
}
