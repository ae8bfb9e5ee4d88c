//! Joint delay/angle SAGE estimation.
//!
//! Each path `ℓ` is modelled across the scan columns `m` as
//! `s_ℓ[k, m] = α_ℓ · g(θ_ℓ − φ_m) · e^{−j2π f_k (τ_ℓ − 2R cos(θ_ℓ − φ_m)/c)}`.
//! For a fixed `(τ, θ)` the maximum-likelihood gain is the projection
//! `α = ⟨X, u⟩/‖u‖²` of the residual `X` onto the unit-gain signature `u`, and
//! the concentrated objective `2Re⟨X, s⟩ − ‖s‖²` reduces to `|⟨X, u⟩|²/‖u‖²`.
//!
//! Paths are first hunted by successive interference cancellation, then
//! refined by coordinate-wise EM cycles (τ, then θ, then α). The pattern is
//! treated as zero beyond its support, which keeps every update local to the
//! few scan columns a path actually illuminates.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::{
    cell_noise_floor_db, compute_padp, estimate_noise_floor, sort_by_power, to_cir, MpcEstimate,
    Window,
};
use crate::antenna::{AntennaPattern, GaussianPattern};
use crate::scene::TrxConfig;
use crate::sim::{ChannelResponse, FractPhase};
use crate::{wrap_angle, wrap_pi, Error, Result, SPEED_OF_LIGHT};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SageConfig {
    pub max_paths: usize,
    pub max_em_iterations: usize,
    pub tau_grid_oversampling: usize,
    pub theta_grid_step_deg: f64,
    /// Relative log-likelihood change that ends the EM cycles.
    pub convergence_eps: f64,
    /// Hunting stops once a candidate falls below the noise floor plus this.
    pub stop_margin_db: f64,
    /// Hunting also stops this far below the strongest extracted path.
    pub dynamic_range_db: f64,
}

impl Default for SageConfig {
    fn default() -> Self {
        SageConfig {
            max_paths: 200,
            max_em_iterations: 30,
            tau_grid_oversampling: 8,
            theta_grid_step_deg: 0.25,
            convergence_eps: 1e-4,
            stop_margin_db: 6.0,
            dynamic_range_db: 50.0,
        }
    }
}

impl SageConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.max_paths > 0
            && self.max_em_iterations > 0
            && self.tau_grid_oversampling > 0
            && self.theta_grid_step_deg > 0.0
            && self.convergence_eps > 0.0
            && self.stop_margin_db >= 0.0
            && self.dynamic_range_db > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::validation("SAGE parameters must be positive"))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SageReport {
    /// Strongest first.
    pub estimates: Vec<MpcEstimate>,
    /// Per-frequency-sample noise level of the input, dB.
    pub noise_floor_db: f64,
    /// Noise level of one delay/angle cell, dB; the hunting threshold is
    /// relative to this.
    pub cell_floor_db: f64,
    /// Residual energy before the hunt and after every extraction.
    pub sic_residual_energy: Vec<f64>,
    /// `−‖residual‖²` after the hunt and after every EM cycle.
    pub log_likelihood: Vec<f64>,
    pub em_iterations: usize,
}

pub fn sage_estimate(
    h: &ChannelResponse,
    trx: &TrxConfig,
    cfg: &SageConfig,
) -> Result<Vec<MpcEstimate>> {
    Ok(sage_run(h, trx, &GaussianPattern::from_trx(trx), cfg)?.estimates)
}

pub fn sage_estimate_with_pattern(
    h: &ChannelResponse,
    trx: &TrxConfig,
    pattern: &dyn AntennaPattern,
    cfg: &SageConfig,
) -> Result<Vec<MpcEstimate>> {
    Ok(sage_run(h, trx, pattern, cfg)?.estimates)
}

/// Exact objective `|⟨H, u(τ, θ)⟩|²/‖u‖²` and the matching gain estimate.
pub fn sage_objective(
    h: &ChannelResponse,
    trx: &TrxConfig,
    pattern: &dyn AntennaPattern,
    tau: f64,
    theta: f64,
) -> (f64, Complex64) {
    let eng = Engine::new(h, trx, pattern, 1);
    let (num, den) = eng.exact_projection(tau, theta);
    if den > 0.0 {
        (num.norm_sqr() / den, num / den)
    } else {
        (0.0, Complex64::new(0.0, 0.0))
    }
}

pub fn sage_run(
    h: &ChannelResponse,
    trx: &TrxConfig,
    pattern: &dyn AntennaPattern,
    cfg: &SageConfig,
) -> Result<SageReport> {
    cfg.validate()?;
    h.validate()?;
    let padp = compute_padp(&to_cir(h, Window::Rectangular));
    let noise_floor_db = estimate_noise_floor(&padp);
    let cell_floor_db = cell_noise_floor_db(noise_floor_db, padp.noise_bandwidth);
    let mut report = SageReport {
        estimates: Vec::new(),
        noise_floor_db,
        cell_floor_db,
        sic_residual_energy: Vec::new(),
        log_likelihood: Vec::new(),
        em_iterations: 0,
    };

    let mut eng = Engine::new(h, trx, pattern, cfg.tau_grid_oversampling);
    let e0 = eng.energy();
    report.sic_residual_energy.push(e0);
    if e0 == 0.0 {
        return Ok(report);
    }
    eng.refresh_dirty();

    let search = Search {
        dtheta: cfg.theta_grid_step_deg.to_radians(),
    };
    let hunt_theta_steps = ((trx.hpbw_rad() / 2.0) / search.dtheta).ceil().max(1.0) as i64;
    let os = cfg.tau_grid_oversampling as i64;
    let mut paths: Vec<Path> = Vec::new();
    let mut strongest_db = f64::NEG_INFINITY;

    while paths.len() < cfg.max_paths {
        let Some((m, delay, v)) = eng.coarse_peak() else {
            break;
        };
        if !(v > 0.0) {
            break;
        }
        let (tau, theta) = search.climb(&eng, delay + eng.s, eng.phis[m], os, hunt_theta_steps);
        let (num, den) = eng.exact_projection(tau, theta);
        if !(den > 0.0) {
            break;
        }
        let alpha = num / den;
        let p_db = crate::db20(alpha.norm());
        if p_db < cell_floor_db + cfg.stop_margin_db || p_db < strongest_db - cfg.dynamic_range_db {
            break;
        }
        strongest_db = strongest_db.max(p_db);
        let path = Path { alpha, tau, theta };
        eng.apply(&path, -1.0);
        eng.refresh_dirty();
        paths.push(path);
        report.sic_residual_energy.push(eng.energy());
    }

    let mut ll_prev = -eng.energy();
    report.log_likelihood.push(ll_prev);
    eng.track_peaks = false;
    if !paths.is_empty() {
        for _ in 0..cfg.max_em_iterations {
            for path in paths.iter_mut() {
                eng.apply(path, 1.0);
                eng.refresh_dirty();
                let (num0, den0) = eng.projection(path.tau, path.theta);
                let obj0 = if den0 > 0.0 {
                    num0.norm_sqr() / den0
                } else {
                    0.0
                };
                let (tau, theta) = search.em_step(&eng, path.tau, path.theta, (os / 2).max(2), 4);
                let (num, den) = eng.projection(tau, theta);
                let obj = if den > 0.0 { num.norm_sqr() / den } else { 0.0 };
                if obj > obj0 {
                    path.tau = tau;
                    path.theta = theta;
                    path.alpha = num / den;
                } else if den0 > 0.0 {
                    path.alpha = num0 / den0;
                }
                eng.apply(path, -1.0);
            }
            report.em_iterations += 1;
            let ll = -eng.energy();
            report.log_likelihood.push(ll);
            let converged =
                ll_prev == 0.0 || ((ll - ll_prev) / ll_prev).abs() < cfg.convergence_eps;
            ll_prev = ll;
            if converged {
                break;
            }
        }
    }

    let window = eng.window;
    report.estimates = paths
        .iter()
        .map(|p| MpcEstimate::new(p.alpha, p.tau.rem_euclid(window), p.theta))
        .collect();
    sort_by_power(&mut report.estimates);
    Ok(report)
}

#[derive(Debug, Clone, Copy)]
struct Path {
    alpha: Complex64,
    tau: f64,
    theta: f64,
}

/// Residual state.
///
/// The residual is kept in the frequency domain (split re/im, one block per
/// scan column) and, per column, as a zero-padded delay-domain sequence that
/// is at least twice oversampled. Objective evaluations interpolate the
/// delay-domain sequence with a short Kaiser-windowed sinc, so a path
/// update only costs one FFT per touched column.
struct Engine<'a> {
    n: usize,
    f0: f64,
    df: f64,
    /// `f0 + k_c·Δf`, the carrier of the centred baseband sequence.
    fmid: f64,
    phis: Vec<f64>,
    /// Two-way array offset `2R/c`.
    s: f64,
    pattern: &'a dyn AntennaPattern,
    support: f64,
    xr: Vec<f64>,
    xi: Vec<f64>,
    /// Search step on the delay axis, `1/(oversampling·B)`.
    dtau: f64,
    window: f64,
    /// Zero-padded transform length.
    l: usize,
    fft: Arc<dyn Fft<f64>>,
    /// Centre index `k_c` of the baseband sequence.
    kc: usize,
    /// Centred delay-domain samples `Σ_k X[k] e^{j2π(k − k_c)n/L}`.
    spectra: Vec<Complex64>,
    col_peak: Vec<(f64, usize)>,
    dirty: Vec<bool>,
    fft_scratch: Vec<Complex64>,
    kernel: Kernel,
    /// Column peaks are only needed while hunting for new paths.
    track_peaks: bool,
}

impl<'a> Engine<'a> {
    fn new(
        h: &ChannelResponse,
        trx: &TrxConfig,
        pattern: &'a dyn AntennaPattern,
        os: usize,
    ) -> Self {
        let n = h.n_freq();
        let cols = h.n_scan();
        let mut xr = Vec::with_capacity(n * cols);
        let mut xi = Vec::with_capacity(n * cols);
        for m in 0..cols {
            for z in h.h.column(m) {
                xr.push(z.re);
                xi.push(z.im);
            }
        }
        let b = h.grid.bandwidth();
        let df = h.grid.step();
        let kc = n.saturating_sub(1) / 2;
        let l = (2 * n).max(4 * KERNEL_HALF).next_power_of_two();
        let fft = FftPlanner::new().plan_fft_inverse(l);
        let fft_scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
        Engine {
            n,
            f0: h.grid.f_start,
            df,
            fmid: h.grid.f_start + kc as f64 * df,
            phis: h.scan_angles_rad(),
            s: 2.0 * trx.uca_radius / SPEED_OF_LIGHT,
            pattern,
            support: pattern.support().min(PI),
            xr,
            xi,
            dtau: 1.0 / (os as f64 * b),
            window: n as f64 / b,
            l,
            fft,
            kc,
            spectra: Vec::new(),
            col_peak: vec![(0.0, 0); cols],
            dirty: vec![true; cols],
            fft_scratch,
            kernel: Kernel::new(),
            track_peaks: true,
        }
    }

    fn energy(&self) -> f64 {
        self.xr
            .iter()
            .zip(&self.xi)
            .map(|(a, b)| a * a + b * b)
            .sum()
    }

    /// Columns illuminated by a path at `theta`: `(m, g, cos Δ)`.
    fn weights(&self, theta: f64) -> impl Iterator<Item = (usize, f64, f64)> + '_ {
        self.phis.iter().enumerate().filter_map(move |(m, &phi)| {
            let d = wrap_pi(theta - phi);
            (d.abs() <= self.support).then(|| (m, self.pattern.two_way_amplitude(d), d.cos()))
        })
    }

    /// Adds `sign · s(path)` to the residual.
    fn apply(&mut self, p: &Path, sign: f64) {
        let w: Vec<_> = self.weights(p.theta).collect();
        let n = self.n;
        for &(m, g, c) in &w {
            let amp = p.alpha * (sign * g);
            let t = p.tau - self.s * c;
            let (xr, xi) = (
                &mut self.xr[m * n..(m + 1) * n],
                &mut self.xi[m * n..(m + 1) * n],
            );
            let step = Complex64::cis(-2.0 * PI * (self.df * t).fract_phase());
            let mut k0 = 0;
            while k0 < n {
                let k1 = (k0 + ANCHOR).min(n);
                let f = self.f0 + k0 as f64 * self.df;
                let mut ph = amp * Complex64::cis(-2.0 * PI * (f * t).fract_phase());
                for k in k0..k1 {
                    xr[k] += ph.re;
                    xi[k] += ph.im;
                    ph *= step;
                }
                k0 = k1;
            }
            self.dirty[m] = true;
        }
    }

    /// `Y_m(t) = Σ_k X_m[k] e^{j2π f_k t}` by direct summation.
    fn exact_y(&self, m: usize, t: f64) -> Complex64 {
        let n = self.n;
        let (xr, xi) = (&self.xr[m * n..(m + 1) * n], &self.xi[m * n..(m + 1) * n]);
        let step = Complex64::cis(2.0 * PI * (self.df * t).fract_phase());
        let mut acc = Complex64::new(0.0, 0.0);
        let mut k0 = 0;
        while k0 < n {
            let k1 = (k0 + ANCHOR).min(n);
            let f = self.f0 + k0 as f64 * self.df;
            let mut ph = Complex64::cis(2.0 * PI * (f * t).fract_phase());
            for k in k0..k1 {
                acc += Complex64::new(xr[k], xi[k]) * ph;
                ph *= step;
            }
            k0 = k1;
        }
        acc
    }

    /// `(⟨X, u⟩, ‖u‖²)` without interpolation.
    fn exact_projection(&self, tau: f64, theta: f64) -> (Complex64, f64) {
        let mut num = Complex64::new(0.0, 0.0);
        let mut den = 0.0;
        for (m, g, c) in self.weights(theta) {
            num += self.exact_y(m, tau - self.s * c) * g;
            den += g * g;
        }
        (num, den * self.n as f64)
    }

    /// `Y_m(t)` interpolated from the oversampled delay-domain samples.
    fn interp_y(&self, m: usize, t: f64) -> Complex64 {
        let u = t * self.l as f64 * self.df;
        let i0 = u.floor();
        let frac = u - i0;
        let base = &self.spectra[m * self.l..(m + 1) * self.l];
        let i0 = (i0 as i64).rem_euclid(self.l as i64) as usize;
        let b = if frac < 1e-12 {
            base[i0]
        } else {
            let mut acc = Complex64::new(0.0, 0.0);
            let sin_pf = (PI * frac).sin();
            for j in -(KERNEL_HALF as i64 - 1)..=KERNEL_HALF as i64 {
                let x = j as f64 - frac;
                // sin(π(j − f)) = −(−1)^j sin(πf)
                let sign = if j % 2 == 0 { -1.0 } else { 1.0 };
                let w = sign * sin_pf / (PI * x) * self.kernel.window(x);
                let idx = (i0 as i64 + j).rem_euclid(self.l as i64) as usize;
                acc += base[idx] * w;
            }
            acc
        };
        b * Complex64::cis(2.0 * PI * (self.fmid * t).fract_phase())
    }

    /// `(⟨X, u⟩, ‖u‖²)` from the interpolated delay-domain samples.
    fn projection(&self, tau: f64, theta: f64) -> (Complex64, f64) {
        let mut num = Complex64::new(0.0, 0.0);
        let mut den = 0.0;
        for (m, g, c) in self.weights(theta) {
            num += self.interp_y(m, tau - self.s * c) * g;
            den += g * g;
        }
        (num, den * self.n as f64)
    }

    /// Concentrated objective `|⟨X, u⟩|²/‖u‖²`.
    fn objective(&self, tau: f64, theta: f64) -> f64 {
        let (num, den) = self.projection(tau, theta);
        if den > 0.0 {
            num.norm_sqr() / den
        } else {
            0.0
        }
    }

    fn refresh_dirty(&mut self) {
        if self.spectra.is_empty() {
            self.spectra = vec![Complex64::new(0.0, 0.0); self.l * self.phis.len()];
        }
        let (n, l, kc) = (self.n, self.l, self.kc);
        for m in 0..self.phis.len() {
            if !self.dirty[m] {
                continue;
            }
            // placing X[k] at index k − k_c (mod L) centres the baseband
            let buf = &mut self.spectra[m * l..(m + 1) * l];
            let (xr, xi) = (&self.xr[m * n..(m + 1) * n], &self.xi[m * n..(m + 1) * n]);
            let head = n - kc;
            for (d, (&r, &i)) in buf[..head].iter_mut().zip(xr[kc..].iter().zip(&xi[kc..])) {
                *d = Complex64::new(r, i);
            }
            buf[head..l - kc].fill(Complex64::new(0.0, 0.0));
            for (d, (&r, &i)) in buf[l - kc..].iter_mut().zip(xr[..kc].iter().zip(&xi[..kc])) {
                *d = Complex64::new(r, i);
            }
            self.fft.process_with_scratch(buf, &mut self.fft_scratch);
            if self.track_peaks {
                let mut peak = (0.0, 0);
                for (i, z) in buf.iter().enumerate() {
                    let p = z.norm_sqr();
                    if p > peak.0 {
                        peak = (p, i);
                    }
                }
                self.col_peak[m] = peak;
            }
            self.dirty[m] = false;
        }
    }

    /// Strongest residual delay-domain sample: `(column, delay, power)`.
    fn coarse_peak(&self) -> Option<(usize, f64, f64)> {
        self.col_peak
            .iter()
            .enumerate()
            .max_by(|a, b| a.1 .0.total_cmp(&b.1 .0).then(b.0.cmp(&a.0)))
            .map(|(m, &(v, i))| (m, i as f64 / (self.l as f64 * self.df), v))
    }
}

/// Phasor recurrences are re-anchored this often to bound rounding drift.
const ANCHOR: usize = 256;

/// Half-length of the interpolation kernel (taps per side).
const KERNEL_HALF: usize = 8;

/// Tabulated Kaiser window over `[0, KERNEL_HALF]`, linearly interpolated.
struct Kernel {
    table: Vec<f64>,
    scale: f64,
}

impl Kernel {
    const BETA: f64 = 12.0;
    const SIZE: usize = 4096;

    fn new() -> Self {
        let i0b = bessel_i0(Self::BETA);
        let table = (0..=Self::SIZE)
            .map(|i| {
                let r = i as f64 / Self::SIZE as f64;
                bessel_i0(Self::BETA * (1.0 - r * r).max(0.0).sqrt()) / i0b
            })
            .collect();
        Kernel {
            table,
            scale: Self::SIZE as f64 / KERNEL_HALF as f64,
        }
    }

    fn window(&self, x: f64) -> f64 {
        let u = x.abs() * self.scale;
        let i = u as usize;
        if i >= Self::SIZE {
            return 0.0;
        }
        let f = u - i as f64;
        self.table[i] * (1.0 - f) + self.table[i + 1] * f
    }
}

fn bessel_i0(x: f64) -> f64 {
    let q = x * x / 4.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..200 {
        term *= q / (k as f64 * k as f64);
        sum += term;
        if term < 1e-17 * sum {
            break;
        }
    }
    sum
}

/// Grid-then-parabolic line searches over the interpolated objective.
struct Search {
    dtheta: f64,
}

#[derive(Clone, Copy)]
enum Axis {
    Tau,
    Theta,
}

impl Search {
    /// Best point on `x + j·step`, `|j| ≤ half`, followed by one parabolic
    /// refinement that is kept only if it improves the objective.
    fn line(&self, eng: &Engine, tau: f64, theta: f64, axis: Axis, half: i64) -> (f64, f64, f64) {
        let step = match axis {
            Axis::Tau => eng.dtau,
            Axis::Theta => self.dtheta,
        };
        let at = |x: f64| match axis {
            Axis::Tau => (tau + x, theta),
            Axis::Theta => (tau, theta + x),
        };
        let vals: Vec<f64> = (-half..=half)
            .map(|j| {
                let (t, th) = at(j as f64 * step);
                eng.objective(t, th)
            })
            .collect();
        // ties resolve toward the current point, then toward smaller offsets
        let mut bi = half as usize;
        for (i, &v) in vals.iter().enumerate() {
            if v > vals[bi] {
                bi = i;
            }
        }
        let bv = vals[bi];
        let mut best = (bi as f64 - half as f64, bv);
        if bi > 0 && bi + 1 < vals.len() {
            let (ym, y0, yp) = (vals[bi - 1], bv, vals[bi + 1]);
            let curv = ym - 2.0 * y0 + yp;
            if curv < 0.0 {
                let off = (0.5 * (ym - yp) / curv).clamp(-0.5, 0.5);
                let x = best.0 + off;
                let (t, th) = at(x * step);
                let v = eng.objective(t, th);
                if v > bv {
                    best = (x, v);
                }
            }
        }
        let (t, th) = at(best.0 * step);
        (t, th, best.1)
    }

    /// Coordinate ascent from a coarse start: one wide pass, then narrow
    /// passes until the estimate settles.
    fn climb(
        &self,
        eng: &Engine,
        tau0: f64,
        theta0: f64,
        tau_half: i64,
        theta_half: i64,
    ) -> (f64, f64) {
        let (mut tau, mut theta) = (tau0, theta0);
        let mut value = eng.objective(tau, theta);
        for round in 0..12 {
            let (ta_half, th_half) = if round == 0 {
                (tau_half, theta_half)
            } else {
                (2, 2)
            };
            let (t1, _, _) = self.line(eng, tau, theta, Axis::Tau, ta_half);
            let (t2, th2, v2) = self.line(eng, t1, theta, Axis::Theta, th_half);
            if v2 < value {
                break;
            }
            let moved =
                (t2 - tau).abs() > 1e-3 * eng.dtau || (th2 - theta).abs() > 1e-3 * self.dtheta;
            tau = t2;
            theta = th2;
            value = v2;
            if !moved {
                break;
            }
        }
        (tau, wrap_angle(theta))
    }

    /// One EM update: τ then θ, each a local grid plus parabolic step.
    fn em_step(
        &self,
        eng: &Engine,
        tau: f64,
        theta: f64,
        tau_half: i64,
        theta_half: i64,
    ) -> (f64, f64) {
        let (t1, _, _) = self.line(eng, tau, theta, Axis::Tau, tau_half);
        let (t2, th2, _) = self.line(eng, t1, theta, Axis::Theta, theta_half);
        (t2, wrap_angle(th2))
    }
}
