//! Map reconstruction from multipath estimates.
//!
//! Every estimate becomes a point `r_S + (R + cτ/2)·Ω(θ)`: the rim-referenced
//! echo distance `d_E = cτ/2` plus the array radius. Second-order corner
//! returns leak through the antenna pattern and show up as an arc of constant
//! `d_E` around the TRx; those arcs are detected (blind or from known corner
//! geometry) and their points flagged as spurious.

use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::estimator::MpcEstimate;
use crate::scene::{Point2, Scene, TrxConfig};
use crate::sim::{GroundTruthPath, PathKind};
use crate::{wrap_angle, wrap_pi, Error, Result, SPEED_OF_LIGHT};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapPoint {
    pub position: Point2,
    pub source: MpcEstimate,
    pub spurious: bool,
    /// `c·τ/2`, m.
    pub distance_d_e: f64,
}

impl MapPoint {
    pub fn azimuth(&self, trx_position: Point2) -> f64 {
        (self.position - trx_position).azimuth()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapCloud {
    pub points: Vec<MapPoint>,
    pub trx_position: Point2,
}

impl MapCloud {
    pub fn retained(&self) -> impl Iterator<Item = &MapPoint> {
        self.points.iter().filter(|p| !p.spurious)
    }

    pub fn n_spurious(&self) -> usize {
        self.points.iter().filter(|p| p.spurious).count()
    }
}

/// Circular arc of constant echo distance centred on the TRx.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArcModel {
    pub center: Point2,
    /// Echo distance `d_E` of the arc, m.
    pub radius: f64,
    /// `[start, end]` in degrees, counter-clockwise; `start ∈ [0, 360)`,
    /// `end ≥ start`.
    pub angular_span: [f64; 2],
    pub support_count: usize,
}

impl ArcModel {
    pub fn width_deg(&self) -> f64 {
        self.angular_span[1] - self.angular_span[0]
    }

    /// Whether azimuth `az` (rad) lies inside the span widened by `pad_deg`
    /// on both sides.
    pub fn contains(&self, az: f64, pad_deg: f64) -> bool {
        let start = self.angular_span[0] - pad_deg;
        let rel = (az.to_degrees() - start).rem_euclid(360.0);
        rel <= self.width_deg() + 2.0 * pad_deg
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RangingReport {
    pub mde_cm: f64,
    pub rmse_cm: f64,
    pub n_points: usize,
    pub n_removed: usize,
}

/// Maps estimates to points, dropping those weaker than `min_power_db`.
pub fn mpcs_to_points(
    estimates: &[MpcEstimate],
    trx: &TrxConfig,
    min_power_db: Option<f64>,
) -> MapCloud {
    let points = estimates
        .iter()
        .filter(|e| min_power_db.is_none_or(|c| e.power_db >= c))
        .map(|e| {
            let d_e = SPEED_OF_LIGHT * e.tau / 2.0;
            MapPoint {
                position: trx.position + Point2::from_polar(trx.uca_radius + d_e, e.theta),
                source: *e,
                spurious: false,
                distance_d_e: d_e,
            }
        })
        .collect();
    MapCloud {
        points,
        trx_position: trx.position,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArcDetectConfig {
    pub min_span_deg: f64,
    pub radial_bin_cm: f64,
    pub hpbw_deg: f64,
    /// Azimuth gap that splits the support of a bin into separate clusters.
    pub max_gap_deg: f64,
    pub min_support: usize,
}

impl Default for ArcDetectConfig {
    fn default() -> Self {
        ArcDetectConfig {
            min_span_deg: 15.0,
            radial_bin_cm: 1.5,
            hpbw_deg: 8.0,
            max_gap_deg: 8.0,
            min_support: 4,
        }
    }
}

/// Blind arc detection from a radial histogram of echo distances.
///
/// A histogram bin together with its two neighbours supplies candidate
/// points; these are split into azimuth clusters. A cluster becomes an arc
/// when it spans at least `min_span_deg` and twice the HPBW, and a circle
/// about the TRx explains it better than a straight line. The line test keeps
/// flat walls (whose radius is nearly constant around their normal) from
/// being mistaken for arcs. Finally no straight surface in the cloud may touch
/// the cluster at its range inside its span; that rejects the iso-range ghosts
/// a strong specular return leaves around the foot of its wall.
pub fn detect_spurious_arcs(cloud: &MapCloud, cfg: &ArcDetectConfig) -> Vec<ArcModel> {
    let bin = cfg.radial_bin_cm / 100.0;
    if cloud.points.is_empty() || !(bin > 0.0) {
        return Vec::new();
    }
    let idx: Vec<i64> = cloud
        .points
        .iter()
        .map(|p| (p.distance_d_e / bin).floor() as i64)
        .collect();
    let mut consumed = vec![false; cloud.points.len()];
    let mut arcs = Vec::new();

    loop {
        let mut counts = std::collections::BTreeMap::<i64, usize>::new();
        for (i, &b) in idx.iter().enumerate() {
            if !consumed[i] {
                *counts.entry(b).or_default() += 1;
            }
        }
        let window = |b: i64| {
            (b - 1..=b + 1)
                .map(|k| counts.get(&k).copied().unwrap_or(0))
                .sum::<usize>()
        };
        let mut candidates: Vec<(usize, i64)> = counts.keys().map(|&b| (window(b), b)).collect();
        candidates.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));

        let mut found = None;
        for &(count, b) in &candidates {
            if count < cfg.min_support {
                break;
            }
            let members: Vec<usize> = (0..idx.len())
                .filter(|&i| !consumed[i] && (idx[i] - b).abs() <= 1)
                .collect();
            for cluster in azimuth_clusters(cloud, &members, cfg.max_gap_deg) {
                if cluster.len() < cfg.min_support {
                    continue;
                }
                let (start, width) = cluster_span(cloud, &cluster);
                if width < cfg.min_span_deg || width < 2.0 * cfg.hpbw_deg {
                    continue;
                }
                if !circle_beats_line(cloud, &cluster)
                    || tangent_to_wall(cloud, &cluster, start, width, cfg.hpbw_deg)
                {
                    continue;
                }
                let radius = cluster
                    .iter()
                    .map(|&i| cloud.points[i].distance_d_e)
                    .sum::<f64>()
                    / cluster.len() as f64;
                found = Some((
                    ArcModel {
                        center: cloud.trx_position,
                        radius,
                        angular_span: [start, start + width],
                        support_count: cluster.len(),
                    },
                    cluster,
                ));
                break;
            }
            if found.is_some() {
                break;
            }
        }
        match found {
            Some((arc, cluster)) => {
                for i in cluster {
                    consumed[i] = true;
                }
                arcs.push(arc);
            }
            None => break,
        }
    }
    arcs.sort_by(|a, b| a.radius.total_cmp(&b.radius));
    arcs
}

/// Splits points into groups separated by azimuth gaps wider than `max_gap`.
fn azimuth_clusters(cloud: &MapCloud, members: &[usize], max_gap_deg: f64) -> Vec<Vec<usize>> {
    if members.is_empty() {
        return Vec::new();
    }
    let mut by_az: Vec<(f64, usize)> = members
        .iter()
        .map(|&i| (cloud.points[i].azimuth(cloud.trx_position).to_degrees(), i))
        .collect();
    by_az.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    // rotate so that the sequence starts after the widest gap (handles wrap)
    let n = by_az.len();
    let gap = |k: usize| (by_az[(k + 1) % n].0 - by_az[k].0).rem_euclid(360.0);
    let widest = (0..n)
        .max_by(|&a, &b| gap(a).total_cmp(&gap(b)).then(b.cmp(&a)))
        .unwrap();
    let ordered: Vec<(f64, usize)> = (1..=n).map(|k| by_az[(widest + k) % n]).collect();

    let mut out = vec![vec![ordered[0].1]];
    for w in ordered.windows(2) {
        if (w[1].0 - w[0].0).rem_euclid(360.0) > max_gap_deg && n > 1 {
            out.push(Vec::new());
        }
        out.last_mut().unwrap().push(w[1].1);
    }
    out
}

/// Start azimuth (deg, `[0, 360)`) and counter-clockwise width of a cluster
/// produced by [`azimuth_clusters`].
fn cluster_span(cloud: &MapCloud, cluster: &[usize]) -> (f64, f64) {
    let az = |i: usize| cloud.points[i].azimuth(cloud.trx_position).to_degrees();
    let start = az(cluster[0]);
    let width = cluster
        .iter()
        .map(|&i| (az(i) - start).rem_euclid(360.0))
        .fold(0.0, f64::max);
    (start, width)
}

/// Robust model comparison: median absolute residual of an iso-range circle
/// about the TRx against a least-median-of-squares line (pairs of points).
fn circle_beats_line(cloud: &MapCloud, cluster: &[usize]) -> bool {
    let pts: Vec<Point2> = cluster.iter().map(|&i| cloud.points[i].position).collect();
    let radii: Vec<f64> = pts.iter().map(|p| p.distance(cloud.trx_position)).collect();
    let r_med = median(radii.clone());
    let circle = median(radii.iter().map(|r| (r - r_med).abs()).collect());

    // deterministic pair subsample keeps this O(n·pairs) for large clusters
    let n = pts.len();
    let stride = (n / 40).max(1);
    let mut line = f64::INFINITY;
    let mut resid = Vec::with_capacity(n);
    for a in (0..n).step_by(stride) {
        for b in (a + 1..n).step_by(stride) {
            let d = pts[b] - pts[a];
            let len = d.norm();
            if len < 1e-9 {
                continue;
            }
            resid.clear();
            resid.extend(
                pts.iter()
                    .map(|p| ((p.x - pts[a].x) * d.y - (p.y - pts[a].y) * d.x).abs() / len),
            );
            line = line.min(median(resid.clone()));
        }
    }
    circle < line
}

/// Whether a straight surface in the cloud touches the cluster: the foot of
/// the perpendicular from the TRx to a line through the other points near
/// the span lies inside the span, at the cluster's range. Iso-range ghosts of
/// a strong specular return sit just there; a corner arc lies well behind the
/// feet of its walls.
fn tangent_to_wall(cloud: &MapCloud, cluster: &[usize], start: f64, width: f64, flank_deg: f64) -> bool {
    const INLIER: f64 = 0.015;
    const RANGE_TOL: f64 = 0.10;
    const MIN_INLIERS: usize = 5;
    let o = cloud.trx_position;
    let range = |p: &MapPoint| p.position.distance(o);
    let r = cluster.iter().map(|&i| range(&cloud.points[i])).sum::<f64>() / cluster.len() as f64;
    let mut member = vec![false; cloud.points.len()];
    cluster.iter().for_each(|&i| member[i] = true);
    let pts: Vec<Point2> = cloud
        .points
        .iter()
        .enumerate()
        .filter(|&(i, p)| {
            let rel = (p.azimuth(o).to_degrees() - start + flank_deg).rem_euclid(360.0);
            !member[i] && rel <= width + 2.0 * flank_deg && range(p) > r - RANGE_TOL
        })
        .map(|(_, p)| p.position)
        .collect();
    let n = pts.len();
    if n < MIN_INLIERS {
        return false;
    }
    // deterministic pair subsample, as in circle_beats_line
    let stride = (n / 40).max(1);
    for a in (0..n).step_by(stride) {
        for b in (a + 1..n).step_by(stride) {
            let d = pts[b] - pts[a];
            let len = d.norm();
            if len < 0.1 {
                continue;
            }
            let u = Point2::new(d.x / len, d.y / len);
            let inliers = pts
                .iter()
                .filter(|p| ((p.x - pts[a].x) * u.y - (p.y - pts[a].y) * u.x).abs() <= INLIER)
                .count();
            if inliers < MIN_INLIERS {
                continue;
            }
            let t = (o.x - pts[a].x) * u.x + (o.y - pts[a].y) * u.y;
            let foot = Point2::new(pts[a].x + t * u.x, pts[a].y + t * u.y);
            if (foot.distance(o) - r).abs() <= RANGE_TOL
                && ((foot - o).azimuth().to_degrees() - start).rem_euclid(360.0) <= width
            {
                return true;
            }
        }
    }
    false
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        0.0
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Ground-truth origin of each map point, for scoring against the simulator.
///
/// A corner return reaches every scan angle (at worst through the sidelobe
/// floor), so it explains a point by delay alone; a wall scatterer explains a
/// point by delay and angle (angle scaled by the HPBW).
/// Costs are in delay bins; the cheapest path wins, and points no path
/// explains within `max_cost` bins get `None`.
pub fn label_origins(
    cloud: &MapCloud,
    paths: &[GroundTruthPath],
    trx: &TrxConfig,
    delay_bin: f64,
    max_cost: f64,
) -> Vec<Option<PathKind>> {
    let hpbw = trx.hpbw_rad();
    cloud
        .points
        .iter()
        .map(|pt| {
            let (tau, theta) = (pt.source.tau, pt.source.theta);
            let mut best: Option<(f64, PathKind)> = None;
            for p in paths {
                let dtau = (tau - p.tau).abs() / delay_bin;
                let dth = wrap_pi(theta - p.theta).abs();
                let cost = match p.kind {
                    PathKind::CornerRetro => dtau,
                    PathKind::WallScatter => dtau.hypot(dth / hpbw),
                };
                if best.is_none_or(|(c, _)| cost < c) {
                    best = Some((cost, p.kind));
                }
            }
            best.filter(|&(c, _)| c <= max_cost).map(|(_, k)| k)
        })
        .collect()
}

/// Arc implied by each known corner: `d_E = d − R`, centred on the apex
/// azimuth and spanning `±2·HPBW`.
pub fn arcs_for_known_corners(scene: &Scene) -> Vec<ArcModel> {
    let trx = &scene.trx;
    scene
        .corners
        .iter()
        .map(|c| {
            let az = wrap_angle((c.apex - trx.position).azimuth()).to_degrees();
            let half = 2.0 * trx.hpbw_deg;
            ArcModel {
                center: trx.position,
                radius: c.direct_distance_d - trx.uca_radius,
                angular_span: [
                    (az - half).rem_euclid(360.0),
                    (az - half).rem_euclid(360.0) + 2.0 * half,
                ],
                support_count: 0,
            }
        })
        .collect()
}

/// Widens each arc's span over the cloud points that continue it: points
/// within `tolerance_m` of the arc radius, chained outward from either end
/// with azimuth gaps no wider than `max_gap_deg`. A corner return leaks
/// through the sidelobes well beyond the main lobe, so the nominal span of a
/// known corner misses part of its own arc.
pub fn extend_arc_spans(cloud: &MapCloud, arcs: &[ArcModel], tolerance_m: f64, max_gap_deg: f64) -> Vec<ArcModel> {
    arcs.iter()
        .map(|arc| {
            let half = 0.5 * arc.width_deg();
            let mid = arc.angular_span[0] + half;
            let mut offsets: Vec<f64> = cloud
                .points
                .iter()
                .filter(|p| (p.distance_d_e - arc.radius).abs() <= tolerance_m)
                .map(|p| (p.azimuth(cloud.trx_position).to_degrees() - mid + 180.0).rem_euclid(360.0) - 180.0)
                .collect();
            offsets.sort_by(f64::total_cmp);
            let mut hi = half;
            for &o in offsets.iter().filter(|&&o| o > half) {
                if o - hi > max_gap_deg {
                    break;
                }
                hi = o;
            }
            let mut lo = -half;
            for &o in offsets.iter().rev().filter(|&&o| o < -half) {
                if lo - o > max_gap_deg {
                    break;
                }
                lo = o;
            }
            let start = (mid + lo).rem_euclid(360.0);
            ArcModel {
                angular_span: [start, start + (hi - lo).min(360.0)],
                ..*arc
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemovalConfig {
    pub tolerance_cm: f64,
    pub hpbw_deg: f64,
    /// Retained neighbours (within twice the tolerance) that exempt a point.
    pub consensus_neighbors: usize,
}

impl Default for RemovalConfig {
    fn default() -> Self {
        RemovalConfig {
            tolerance_cm: 3.0,
            hpbw_deg: 8.0,
            consensus_neighbors: 3,
        }
    }
}

/// Flags points lying on any arc.
///
/// A point on an arc (echo distance within tolerance, azimuth inside the
/// span padded by HPBW/2) is kept anyway when enough points off every arc sit
/// right next to it — that is a real surface crossing the arc.
pub fn remove_spurious(cloud: &MapCloud, arcs: &[ArcModel], cfg: &RemovalConfig) -> MapCloud {
    let tol = cfg.tolerance_cm / 100.0;
    let on_arc: Vec<bool> = cloud
        .points
        .iter()
        .map(|p| {
            let az = p.azimuth(cloud.trx_position);
            arcs.iter().any(|a| {
                (p.distance_d_e - a.radius).abs() <= tol && a.contains(az, cfg.hpbw_deg / 2.0)
            })
        })
        .collect();
    let anchors: Vec<Point2> = cloud
        .points
        .iter()
        .zip(&on_arc)
        .filter(|(p, &c)| !c && !p.spurious)
        .map(|(p, _)| p.position)
        .collect();
    let mut out = cloud.clone();
    for (p, &cand) in out.points.iter_mut().zip(&on_arc) {
        if !cand || p.spurious {
            continue;
        }
        let support = anchors
            .iter()
            .filter(|a| a.distance(p.position) <= 2.0 * tol)
            .count();
        if support < cfg.consensus_neighbors {
            p.spurious = true;
        }
    }
    out
}

/// Mean and RMS distance (cm) of points to the nearest wall.
pub fn ranging_error(
    cloud: &MapCloud,
    scene: &Scene,
    include_spurious: bool,
) -> Result<RangingReport> {
    if scene.walls.is_empty() {
        return Err(Error::validation("ranging error needs at least one wall"));
    }
    let dists: Vec<f64> = cloud
        .points
        .iter()
        .filter(|p| include_spurious || !p.spurious)
        .map(|p| crate::scene::nearest_surface_distance(p.position, scene))
        .collect();
    if dists.is_empty() {
        return Err(Error::validation("no map points to score"));
    }
    let n = dists.len() as f64;
    let mde = dists.iter().sum::<f64>() / n;
    let rmse = (dists.iter().map(|d| d * d).sum::<f64>() / n).sqrt();
    Ok(RangingReport {
        mde_cm: mde * 100.0,
        rmse_cm: rmse.max(mde) * 100.0,
        n_points: dists.len(),
        n_removed: if include_spurious {
            0
        } else {
            cloud.n_spurious()
        },
    })
}

/// `x_m,y_m,power_db,tau_ns,theta_deg,spurious`.
pub fn write_map_csv<W: Write>(w: W, cloud: &MapCloud) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let csv_err = |e: csv::Error| Error::validation(format!("csv write: {e}"));
    wtr.write_record(["x_m", "y_m", "power_db", "tau_ns", "theta_deg", "spurious"])
        .map_err(csv_err)?;
    for p in &cloud.points {
        wtr.write_record([
            format!("{:.6}", p.position.x),
            format!("{:.6}", p.position.y),
            format!("{:.4}", p.source.power_db),
            format!("{:.6}", p.source.tau * 1e9),
            format!("{:.4}", p.source.theta.to_degrees()),
            (p.spurious as u8).to_string(),
        ])
        .map_err(csv_err)?;
    }
    wtr.flush().map_err(|e| Error::io("<map csv>", e))
}

/// Top-down SVG of walls, TRx and map points on a 1 m grid.
pub fn render_svg(cloud: &MapCloud, scene: &Scene) -> String {
    let mut xs: Vec<f64> = vec![cloud.trx_position.x];
    let mut ys: Vec<f64> = vec![cloud.trx_position.y];
    for w in &scene.walls {
        xs.extend([w.a.x, w.b.x]);
        ys.extend([w.a.y, w.b.y]);
    }
    for p in &cloud.points {
        xs.push(p.position.x);
        ys.push(p.position.y);
    }
    let min = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min).floor() - 1.0;
    let max = |v: &[f64]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max).ceil() + 1.0;
    let (x0, x1, y0, y1) = (min(&xs), max(&xs), min(&ys), max(&ys));
    let scale = 100.0;
    let (w, h) = ((x1 - x0) * scale, (y1 - y0) * scale);
    let px = |x: f64| (x - x0) * scale;
    let py = |y: f64| (y1 - y) * scale;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.0} {h:.0}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let mut gx = x0;
    while gx <= x1 + 1e-9 {
        let _ = writeln!(
            s,
            r##"<line x1="{:.2}" y1="0" x2="{:.2}" y2="{h:.2}" stroke="#ddd" stroke-width="1"/>"##,
            px(gx),
            px(gx)
        );
        gx += 1.0;
    }
    let mut gy = y0;
    while gy <= y1 + 1e-9 {
        let _ = writeln!(
            s,
            r##"<line x1="0" y1="{:.2}" x2="{w:.2}" y2="{:.2}" stroke="#ddd" stroke-width="1"/>"##,
            py(gy),
            py(gy)
        );
        gy += 1.0;
    }
    for wall in &scene.walls {
        let _ = writeln!(
            s,
            r##"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#333" stroke-width="3"/>"##,
            px(wall.a.x),
            py(wall.a.y),
            px(wall.b.x),
            py(wall.b.y)
        );
    }
    for p in &cloud.points {
        let (fill, r) = if p.spurious {
            ("#d62728", 2.5)
        } else {
            ("#1f77b4", 2.0)
        };
        let _ = writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="{r}" fill="{fill}"/>"#,
            px(p.position.x),
            py(p.position.y)
        );
    }
    let _ = writeln!(
        s,
        r##"<rect x="{:.2}" y="{:.2}" width="10" height="10" fill="#2ca02c"/>"##,
        px(cloud.trx_position.x) - 5.0,
        py(cloud.trx_position.y) - 5.0
    );
    s.push_str("</svg>\n");
    s
}
