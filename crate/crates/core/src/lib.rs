//! Monostatic terahertz sensing toolkit.
//!
//! The crate covers the whole chain from a 2-D indoor scene to a reconstructed
//! map and identified surface materials:
//!
//! - [`scene`]: wall/corner geometry, transceiver configuration and
//!   ground-truth distance queries.
//! - [`sim`]: forward channel model producing `H(f, φ)` for a rotating,
//!   co-located transceiver.
//! - [`estimator`]: calibration, CIR/PADP processing, joint delay-angle SAGE
//!   and the per-angle maximum-search baseline.
//! - [`mapper`]: conversion of multipath estimates to map points, corner arc
//!   detection/removal and ranging error scoring.
//! - [`materials`]: reflection-loss database, TDS trace processing and
//!   material identification.

pub mod antenna;
pub mod error;
pub mod estimator;
pub mod mapper;
pub mod materials;
pub mod scene;
pub mod sim;

pub use error::{Error, Result};

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Wraps an angle to `[0, 2π)`.
pub fn wrap_angle(theta: f64) -> f64 {
    let w = theta.rem_euclid(std::f64::consts::TAU);
    // rem_euclid can return TAU for tiny negative inputs
    if w >= std::f64::consts::TAU {
        0.0
    } else {
        w
    }
}

/// Wraps an angle difference to `[-π, π]`.
pub fn wrap_pi(delta: f64) -> f64 {
    let w = (delta + std::f64::consts::PI).rem_euclid(std::f64::consts::TAU);
    w - std::f64::consts::PI
}

/// Converts a power-like linear quantity to dB, flooring exact zeros.
pub(crate) fn db20(mag: f64) -> f64 {
    if mag > 0.0 {
        20.0 * mag.log10()
    } else {
        crate::estimator::DB_FLOOR
    }
}
