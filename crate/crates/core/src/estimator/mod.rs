//! Channel preprocessing and multipath parameter estimation.
//!
//! Frequency responses are transformed into channel impulse responses (CIR)
//! per scan angle, from which the power-angle-delay profile (PADP) follows.
//! Paths are then extracted either by the per-angle maximum search baseline
//! or by the joint delay/angle SAGE estimator in [`sage`].

use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::scene::TrxConfig;
use crate::sim::ChannelResponse;
use crate::{wrap_angle, Error, Result, SPEED_OF_LIGHT};

mod sage;

pub use sage::{
    sage_estimate, sage_estimate_with_pattern, sage_objective, sage_run, SageConfig, SageReport,
};

/// dB value reported for exact zeros.
pub const DB_FLOOR: f64 = -200.0;

/// `−ln(0.95)`: the 5th percentile of an exponential variable relative to
/// its mean. The median of the lowest decile sits at that percentile.
const LOW_DECILE_MEDIAN_RATIO: f64 = 0.051_293_294_387_550_53;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MpcEstimate {
    pub alpha: Complex64,
    /// Round-trip delay referenced to the array rim, s.
    pub tau: f64,
    /// Angle of arrival, `[0, 2π)`.
    pub theta: f64,
    pub power_db: f64,
}

impl MpcEstimate {
    pub fn new(alpha: Complex64, tau: f64, theta: f64) -> Self {
        MpcEstimate {
            alpha,
            tau,
            theta: wrap_angle(theta),
            power_db: crate::db20(alpha.norm()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    #[default]
    Rectangular,
    Hann,
}

impl Window {
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            Window::Rectangular => vec![1.0; n],
            Window::Hann if n < 2 => vec![1.0; n],
            Window::Hann => (0..n)
                .map(|k| {
                    0.5 * (1.0 - (2.0 * std::f64::consts::PI * k as f64 / (n - 1) as f64).cos())
                })
                .collect(),
        }
    }
}

/// Channel impulse response `g(τ, φ)`, rows = delay, columns = scan angle.
#[derive(Debug, Clone, PartialEq)]
pub struct Cir {
    pub g: Array2<Complex64>,
    pub delay_axis: Vec<f64>,
    pub scan_angles_deg: Vec<f64>,
    /// `Σw²/(Σw)²`: ratio between white-noise power in a delay bin and the
    /// per-sample noise power of the frequency response.
    pub noise_bandwidth: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Padp {
    pub p_db: Array2<f64>,
    pub delay_axis: Vec<f64>,
    pub scan_angles_deg: Vec<f64>,
    pub noise_bandwidth: f64,
}

impl Padp {
    /// Delay bin and scan column of the strongest cell.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = (0, 0);
        let mut v = f64::NEG_INFINITY;
        for ((i, j), &p) in self.p_db.indexed_iter() {
            if p > v {
                v = p;
                best = (i, j);
            }
        }
        best
    }
}

/// Divides out a reference (system) response element-wise.
pub fn calibrate(h_meas: &ChannelResponse, h_ref: &ChannelResponse) -> Result<ChannelResponse> {
    if h_meas.grid != h_ref.grid
        || h_meas.scan_angles_deg != h_ref.scan_angles_deg
        || h_meas.h.dim() != h_ref.h.dim()
    {
        return Err(Error::validation(
            "calibration reference grid or scan list mismatch",
        ));
    }
    if h_ref.h.iter().any(|z| !(z.norm() >= 1e-15)) {
        return Err(Error::Numerical(
            "calibration reference has near-zero entries".into(),
        ));
    }
    let h = &h_meas.h / &h_ref.h;
    ChannelResponse::new(h, h_meas.grid, h_meas.scan_angles_deg.clone())
}

/// Inverse DFT over frequency for every scan column.
///
/// `g[n] = Σ_k w_k H_k e^{j2πkn/N} / Σ_k w_k`, so a unit path yields a unit
/// peak and the delay spacing is `1/B`.
pub fn to_cir(h: &ChannelResponse, window: Window) -> Cir {
    to_cir_oversampled(h, window, 1)
}

/// As [`to_cir`], zero-padded to `oversampling · N` delay bins spaced
/// `1/(oversampling · B)`.
pub fn to_cir_oversampled(h: &ChannelResponse, window: Window, oversampling: usize) -> Cir {
    let n = h.n_freq();
    let os = oversampling.max(1);
    let len = n * os;
    let w = window.coefficients(n);
    let wsum: f64 = w.iter().sum();
    let w2: f64 = w.iter().map(|x| x * x).sum();
    let fft = FftPlanner::new().plan_fft_inverse(len.max(1));
    let mut g = Array2::<Complex64>::zeros((len, h.n_scan()));
    let mut buf = vec![Complex64::new(0.0, 0.0); len];
    for m in 0..h.n_scan() {
        buf.iter_mut().for_each(|z| *z = Complex64::new(0.0, 0.0));
        for (k, z) in h.h.column(m).iter().enumerate() {
            buf[k] = z * (w[k] / wsum);
        }
        if len > 0 {
            fft.process(&mut buf);
        }
        g.column_mut(m)
            .iter_mut()
            .zip(&buf)
            .for_each(|(d, s)| *d = *s);
    }
    let dtau = 1.0 / (os as f64 * h.grid.bandwidth());
    Cir {
        g,
        delay_axis: (0..len).map(|i| i as f64 * dtau).collect(),
        scan_angles_deg: h.scan_angles_deg.clone(),
        noise_bandwidth: if wsum > 0.0 { w2 / (wsum * wsum) } else { 1.0 },
    }
}

pub fn compute_padp(cir: &Cir) -> Padp {
    Padp {
        p_db: cir.g.mapv(|z| crate::db20(z.norm())),
        delay_axis: cir.delay_axis.clone(),
        scan_angles_deg: cir.scan_angles_deg.clone(),
        noise_bandwidth: cir.noise_bandwidth,
    }
}

/// Per-frequency-sample noise level `E|W|²` (dB) implied by a PADP.
///
/// For every scan angle the median of the weakest tenth of delay bins is
/// taken; for exponentially distributed noise power that median is
/// `−ln(0.95)` times the mean. Column means are averaged and referred back
/// through the window's noise bandwidth.
pub fn estimate_noise_floor(padp: &Padp) -> f64 {
    let (n_delay, n_scan) = padp.p_db.dim();
    if n_delay == 0 || n_scan == 0 {
        return DB_FLOOR;
    }
    let mut acc = 0.0;
    let mut col = Vec::with_capacity(n_delay);
    for m in 0..n_scan {
        col.clear();
        col.extend(padp.p_db.column(m).iter().map(|&p| {
            if p <= DB_FLOOR {
                0.0
            } else {
                10f64.powf(p / 10.0)
            }
        }));
        col.sort_by(f64::total_cmp);
        let decile = &col[..(n_delay / 10).max(1)];
        let median = decile[decile.len() / 2];
        acc += median / LOW_DECILE_MEDIAN_RATIO;
    }
    let mean = acc / n_scan as f64;
    if !(mean > 0.0) {
        return DB_FLOOR;
    }
    10.0 * mean.log10() - 10.0 * padp.noise_bandwidth.log10()
}

/// Noise level (dB) of a single PADP cell given the per-sample floor.
pub fn cell_noise_floor_db(floor_db: f64, noise_bandwidth: f64) -> f64 {
    if floor_db <= DB_FLOOR {
        DB_FLOOR
    } else {
        floor_db + 10.0 * noise_bandwidth.log10()
    }
}

/// One estimate per scan angle at the strongest delay bin, `θ = φ`.
///
/// The PADP peak sits at the boresight delay `τ − 2R/c`; the array offset is
/// added back so that estimates share the rim-referenced delay convention.
pub fn max_search_baseline(padp: &Padp, trx: &TrxConfig) -> Vec<MpcEstimate> {
    let n_delay = padp.delay_axis.len();
    if n_delay == 0 {
        return Vec::new();
    }
    let window = if n_delay > 1 {
        padp.delay_axis[1] * n_delay as f64
    } else {
        f64::INFINITY
    };
    let offset = 2.0 * trx.uca_radius / SPEED_OF_LIGHT;
    padp.scan_angles_deg
        .iter()
        .enumerate()
        .map(|(m, phi)| {
            let col = padp.p_db.column(m);
            let (n, p) = col
                .iter()
                .enumerate()
                .fold(
                    (0, f64::NEG_INFINITY),
                    |b, (i, &v)| if v > b.1 { (i, v) } else { b },
                );
            let mag = if p <= DB_FLOOR {
                0.0
            } else {
                10f64.powf(p / 20.0)
            };
            let tau = (padp.delay_axis[n] + offset).rem_euclid(window);
            MpcEstimate {
                alpha: Complex64::new(mag, 0.0),
                tau,
                theta: wrap_angle(phi.to_radians()),
                power_db: p.max(DB_FLOOR),
            }
        })
        .collect()
}

pub fn sort_by_power(est: &mut [MpcEstimate]) {
    est.sort_by(|a, b| {
        b.power_db
            .total_cmp(&a.power_db)
            .then(a.tau.total_cmp(&b.tau))
    });
}

/// `alpha_re,alpha_im,tau_s,theta_rad,power_db`, strongest first.
pub fn write_mpc_csv<W: Write>(w: W, est: &[MpcEstimate]) -> Result<()> {
    let mut sorted = est.to_vec();
    sort_by_power(&mut sorted);
    let mut wtr = csv::Writer::from_writer(w);
    let csv_err = |e: csv::Error| Error::validation(format!("csv write: {e}"));
    wtr.write_record(["alpha_re", "alpha_im", "tau_s", "theta_rad", "power_db"])
        .map_err(csv_err)?;
    for e in &sorted {
        wtr.write_record([
            format!("{:e}", e.alpha.re),
            format!("{:e}", e.alpha.im),
            format!("{:e}", e.tau),
            format!("{:e}", e.theta),
            format!("{:.6}", e.power_db),
        ])
        .map_err(csv_err)?;
    }
    wtr.flush().map_err(|e| Error::io("<mpc csv>", e))
}

/// Reads a file written by [`write_mpc_csv`]; `power_db` is recomputed.
pub fn read_mpc_csv(path: impl AsRef<Path>) -> Result<Vec<MpcEstimate>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(file);
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| parse_err(line, e.to_string()))?;
        if rec.len() < 4 {
            return Err(parse_err(
                line,
                format!("expected 5 fields, found {}", rec.len()),
            ));
        }
        let mut v = [0.0; 4];
        for (k, slot) in v.iter_mut().enumerate() {
            *slot = rec[k].trim().parse().map_err(|_| {
                parse_err(
                    line,
                    format!("field {} is not a number: '{}'", k + 1, &rec[k]),
                )
            })?;
        }
        out.push(MpcEstimate::new(Complex64::new(v[0], v[1]), v[2], v[3]));
    }
    Ok(out)
}

/// Delay (ns) in the first column, scan angles (deg) as the header row.
pub fn write_padp_csv<W: Write>(w: W, padp: &Padp) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let csv_err = |e: csv::Error| Error::validation(format!("csv write: {e}"));
    let mut header = vec!["delay_ns".to_string()];
    header.extend(padp.scan_angles_deg.iter().map(|a| format!("{a:.3}")));
    wtr.write_record(&header).map_err(csv_err)?;
    for (i, tau) in padp.delay_axis.iter().enumerate() {
        let mut row = vec![format!("{:.6}", tau * 1e9)];
        row.extend(padp.p_db.row(i).iter().map(|p| format!("{p:.4}")));
        wtr.write_record(&row).map_err(csv_err)?;
    }
    wtr.flush().map_err(|e| Error::io("<padp csv>", e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::FrequencyGrid;

    fn resp(h: Array2<Complex64>, grid: FrequencyGrid) -> ChannelResponse {
        let n = h.ncols();
        ChannelResponse::new(h, grid, (0..n).map(|m| m as f64).collect()).unwrap()
    }

    #[test]
    fn exact_bin_delay_is_a_single_peak() {
        let grid = FrequencyGrid::new(290e9, 310e9, 200).unwrap();
        let tau0 = 37.0 / grid.bandwidth();
        let h = Array2::from_shape_fn((200, 1), |(k, _)| {
            Complex64::cis(-2.0 * std::f64::consts::PI * grid.frequency(k) * tau0)
        });
        let cir = to_cir(&resp(h, grid), Window::Rectangular);
        assert!((cir.delay_axis[1] - 0.05e-9).abs() < 1e-22);
        for (i, z) in cir.g.column(0).iter().enumerate() {
            if i == 37 {
                assert!((z.norm() - 1.0).abs() < 1e-9);
            } else {
                assert!(z.norm() < 1e-9);
            }
        }
    }

    #[test]
    fn padp_db_values() {
        let g = Array2::from_shape_vec(
            (3, 1),
            vec![
                Complex64::new(1.0, 0.0),
                Complex64::new(0.0, 0.1),
                Complex64::new(0.0, 0.0),
            ],
        )
        .unwrap();
        let cir = Cir {
            g,
            delay_axis: vec![0.0, 1.0, 2.0],
            scan_angles_deg: vec![0.0],
            noise_bandwidth: 1.0,
        };
        let p = compute_padp(&cir);
        assert!(p.p_db[[0, 0]].abs() < 1e-12);
        assert!((p.p_db[[1, 0]] + 20.0).abs() < 1e-12);
        assert_eq!(p.p_db[[2, 0]], DB_FLOOR);
    }

    #[test]
    fn hann_noise_bandwidth() {
        let w = Window::Hann.coefficients(1001);
        let s: f64 = w.iter().sum();
        let s2: f64 = w.iter().map(|x| x * x).sum();
        // continuous limit 1.5/N
        assert!((s2 / (s * s) * 1001.0 - 1.5).abs() < 0.01);
    }

    #[test]
    fn all_zero_floor() {
        let grid = FrequencyGrid::new(290e9, 310e9, 50).unwrap();
        let r = resp(Array2::zeros((50, 4)), grid);
        assert_eq!(
            estimate_noise_floor(&compute_padp(&to_cir(&r, Window::Rectangular))),
            DB_FLOOR
        );
    }

    #[test]
    fn calibration_scalar_and_errors() {
        let grid = FrequencyGrid::new(290e9, 310e9, 4).unwrap();
        let h = resp(
            Array2::from_shape_fn((4, 2), |(k, m)| Complex64::new(k as f64, m as f64)),
            grid,
        );
        let two = resp(Array2::from_elem((4, 2), Complex64::new(2.0, 0.0)), grid);
        let c = calibrate(&h, &two).unwrap();
        assert_eq!(c.h, h.h.mapv(|z| z / 2.0));
        let zero = resp(Array2::zeros((4, 2)), grid);
        assert!(calibrate(&h, &zero).is_err());
        let other = resp(Array2::from_elem((4, 3), Complex64::new(1.0, 0.0)), grid);
        assert!(calibrate(&h, &other).is_err());
    }
}
