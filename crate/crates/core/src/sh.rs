//! Degree-4 real spherical-harmonics direction encoding (bands 0..=3).
//!
//! Coefficients are ordered by band `l` and then `m = -l..=l`. The
//! Condon–Shortley phase is omitted.

use crate::error::{Error, Result};

pub const SH_COEFFS: usize = 16;

const C0: f64 = 0.282_094_791_773_878_14;
const C1: f64 = 0.488_602_511_902_919_9;
const C2_XY: f64 = 1.092_548_430_592_079_2;
const C2_Z: f64 = 0.315_391_565_252_520_05;
const C2_XX: f64 = 0.546_274_215_296_039_6;
const C3_A: f64 = 0.590_043_589_926_643_5;
const C3_B: f64 = 2.890_611_442_640_554;
const C3_C: f64 = 0.457_045_799_464_465_8;
const C3_D: f64 = 0.373_176_332_590_115_4;
const C3_E: f64 = 1.445_305_721_320_277;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DirectionEncoding(pub [f64; SH_COEFFS]);

impl DirectionEncoding {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Encodes a direction. Non-unit inputs are normalized first.
pub fn sh_encode(direction: [f64; 3]) -> Result<DirectionEncoding> {
    let n2 = direction.iter().map(|v| v * v).sum::<f64>();
    if !n2.is_finite() {
        return Err(Error::NonFinite("direction"));
    }
    if n2 <= f64::MIN_POSITIVE {
        return Err(Error::InvalidArgument("zero-length direction".into()));
    }
    let d = if (n2 - 1.0).abs() > 1e-12 {
        let n = n2.sqrt();
        direction.map(|v| v / n)
    } else {
        direction
    };
    Ok(DirectionEncoding(sh_unit(d)))
}

/// Evaluates the basis for an already-normalized direction.
#[inline]
pub fn sh_unit([x, y, z]: [f64; 3]) -> [f64; SH_COEFFS] {
    let (xx, yy, zz) = (x * x, y * y, z * z);
    [
        C0,
        C1 * y,
        C1 * z,
        C1 * x,
        C2_XY * x * y,
        C2_XY * y * z,
        C2_Z * (3.0 * zz - 1.0),
        C2_XY * x * z,
        C2_XX * (xx - yy),
        C3_A * y * (3.0 * xx - yy),
        C3_B * x * y * z,
        C3_C * y * (5.0 * zz - 1.0),
        C3_D * z * (5.0 * zz - 3.0),
        C3_C * x * (5.0 * zz - 1.0),
        C3_E * z * (xx - yy),
        C3_A * x * (xx - 3.0 * yy),
    ]
}
