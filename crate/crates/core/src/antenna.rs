//! Horn antenna radiation patterns.
//!
//! The transmit and receive horns are identical and co-located, so the
//! two-way amplitude factor of a path seen `Δθ` off boresight is
//! `√G(Δθ)·√G(Δθ) / G₀ = G(Δθ) / G₀`. Absolute antenna gains are carried by
//! the link budget of each path amplitude instead.

use std::path::Path;

use crate::scene::TrxConfig;
use crate::{wrap_pi, Error, Result};

/// Sidelobe floor relative to the boresight gain, dB.
pub const SIDELOBE_FLOOR_DB: f64 = -30.0;

/// Linear power gain of one horn `delta_theta` radians off boresight.
///
/// Gaussian mainlobe `G₀·exp(−4 ln2 (Δθ/HPBW)²)` floored at `G₀ − 30 dB`.
pub fn antenna_gain(delta_theta: f64, trx: &TrxConfig) -> f64 {
    let g0 = 10f64.powf(trx.antenna_gain_dbi / 10.0);
    g0 * GaussianPattern::from_trx(trx).normalized_power(delta_theta)
}

/// Normalised power pattern `G(Δθ)/G₀` of a single horn.
pub trait AntennaPattern: Send + Sync {
    /// Normalised power gain at `delta` radians off boresight.
    fn normalized_power(&self, delta: f64) -> f64;

    /// Half-width (radians) of the region where the pattern rises above its
    /// sidelobe floor. Estimators may treat the pattern as zero outside it.
    fn support(&self) -> f64;

    /// Two-way amplitude factor applied to a path seen `delta` off boresight.
    fn two_way_amplitude(&self, delta: f64) -> f64 {
        self.normalized_power(delta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianPattern {
    pub hpbw_rad: f64,
    pub floor: f64,
}

impl GaussianPattern {
    pub fn from_trx(trx: &TrxConfig) -> Self {
        GaussianPattern {
            hpbw_rad: trx.hpbw_rad(),
            floor: 10f64.powf(SIDELOBE_FLOOR_DB / 10.0),
        }
    }
}

impl AntennaPattern for GaussianPattern {
    fn normalized_power(&self, delta: f64) -> f64 {
        let d = wrap_pi(delta) / self.hpbw_rad;
        (-4.0 * std::f64::consts::LN_2 * d * d)
            .exp()
            .max(self.floor)
    }

    fn support(&self) -> f64 {
        self.hpbw_rad * ((1.0 / self.floor).ln() / (4.0 * std::f64::consts::LN_2)).sqrt()
    }
}

/// Measured pattern loaded from a `delta_deg,gain_db` table (dB relative to
/// boresight, symmetric in `Δθ`, linear interpolation in dB).
#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedPattern {
    delta_rad: Vec<f64>,
    gain_db: Vec<f64>,
}

impl TabulatedPattern {
    pub fn new(delta_deg: Vec<f64>, gain_db: Vec<f64>) -> Result<Self> {
        if delta_deg.len() < 2 || delta_deg.len() != gain_db.len() {
            return Err(Error::validation("pattern table needs >= 2 matching rows"));
        }
        if delta_deg.windows(2).any(|w| !(w[1] > w[0])) || delta_deg[0] < 0.0 {
            return Err(Error::validation(
                "pattern angles must be non-negative and strictly increasing",
            ));
        }
        Ok(TabulatedPattern {
            delta_rad: delta_deg.iter().map(|d| d.to_radians()).collect(),
            gain_db,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg: e.to_string(),
        })?;
        let (mut d, mut g) = (Vec::new(), Vec::new());
        for (i, rec) in rdr.records().enumerate() {
            let parse_err = |msg: String| Error::Parse {
                path: path.to_path_buf(),
                line: i + 2,
                msg,
            };
            let rec = rec.map_err(|e| parse_err(e.to_string()))?;
            let field = |k: usize| -> Result<f64> {
                rec.get(k)
                    .ok_or_else(|| parse_err("missing column".into()))?
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| parse_err(e.to_string()))
            };
            d.push(field(0)?);
            g.push(field(1)?);
        }
        TabulatedPattern::new(d, g)
    }
}

impl AntennaPattern for TabulatedPattern {
    fn normalized_power(&self, delta: f64) -> f64 {
        let x = wrap_pi(delta).abs();
        let n = self.delta_rad.len();
        let db = if x <= self.delta_rad[0] {
            self.gain_db[0]
        } else if x >= self.delta_rad[n - 1] {
            self.gain_db[n - 1]
        } else {
            let k = self.delta_rad.partition_point(|&d| d <= x) - 1;
            let t = (x - self.delta_rad[k]) / (self.delta_rad[k + 1] - self.delta_rad[k]);
            self.gain_db[k] + t * (self.gain_db[k + 1] - self.gain_db[k])
        };
        10f64.powf(db / 10.0)
    }

    fn support(&self) -> f64 {
        let floor = self.gain_db.iter().copied().fold(f64::INFINITY, f64::min);
        let last_above = self
            .gain_db
            .iter()
            .rposition(|&g| g > floor)
            .map(|k| (k + 1).min(self.delta_rad.len() - 1))
            .unwrap_or(0);
        self.delta_rad[last_above]
    }
}
