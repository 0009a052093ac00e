//! Source-container geometry.
//!
//! A container is an upright right circular cylinder described by its inner
//! diameter and height. When tilted about the lowest rim point, the liquid
//! it can hold is bounded by the horizontal plane through that point.

use alloc::string::String;
use core::f64::consts::{FRAC_PI_2, PI};

use thiserror::Error;

/// Cubic millimetres per millilitre.
const MM3_PER_ML: f64 = 1000.0;

/// Relative tolerance for the tilted-capacity quadrature.
pub const QUADRATURE_REL_TOL: f64 = 1e-8;

/// Absolute angular tolerance guaranteed by [`critical_angle`].
pub const CRITICAL_ANGLE_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("container `{name}`: diameter and height must be finite and positive (d={d}, h={h})")]
    InvalidDimensions { name: String, d: f64, h: f64 },
    #[error("tilt angle {0} rad is outside [0, pi/2]")]
    AngleOutOfRange(f64),
    #[error("volume {volume} mL is outside [0, {capacity}] mL")]
    VolumeOutOfRange { volume: f64, capacity: f64 },
}

/// Inner dimensions of a source container, in millimetres.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ContainerSpec {
    pub name: String,
    /// Inner diameter (mm).
    pub d: f64,
    /// Inner height (mm).
    pub h: f64,
}

impl ContainerSpec {
    pub fn new(name: impl Into<String>, d: f64, h: f64) -> Result<Self, GeometryError> {
        let spec = Self { name: name.into(), d, h };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if self.d.is_finite() && self.h.is_finite() && self.d > 0.0 && self.h > 0.0 {
            Ok(())
        } else {
            Err(GeometryError::InvalidDimensions { name: self.name.clone(), d: self.d, h: self.h })
        }
    }

    #[inline]
    pub fn radius(&self) -> f64 {
        0.5 * self.d
    }

    /// Volume (mL) held when upright and filled to the rim.
    pub fn capacity_upright(&self) -> f64 {
        capacity_upright(self)
    }
}

pub fn capacity_upright(c: &ContainerSpec) -> f64 {
    let r = c.radius();
    PI * r * r * c.h / MM3_PER_ML
}

fn check_angle(theta: f64) -> Result<(), GeometryError> {
    if (0.0..=FRAC_PI_2).contains(&theta) {
        Ok(())
    } else {
        Err(GeometryError::AngleOutOfRange(theta))
    }
}

/// Volume (mL) retained by `c` when tilted by `theta` radians.
///
/// The liquid occupies the part of the cylinder below the horizontal plane
/// through the lowest rim point. Writing `x` for the coordinate across the
/// base along the tilt direction (rim at `x = r`), the column height is
/// `h - (r - x) tan(theta)`, integrated over the chord width
/// `2 sqrt(r^2 - x^2)`. The substitution `x = r cos(phi)` removes the square
/// root singularities at the chord ends so the integrand is smooth and
/// adaptive Simpson converges quickly.
pub fn tilted_capacity(c: &ContainerSpec, theta: f64) -> Result<f64, GeometryError> {
    check_angle(theta)?;
    if theta == 0.0 {
        return Ok(capacity_upright(c));
    }
    if theta >= FRAC_PI_2 {
        return Ok(0.0);
    }
    let r = c.radius();
    let h = c.h;
    let tan = libm::tan(theta);
    // Lower integration limit: the base is dry for x < x0.
    let x0 = (r - h / tan).max(-r);
    let phi_max = libm::acos((x0 / r).clamp(-1.0, 1.0));
    if phi_max <= 0.0 {
        return Ok(0.0);
    }
    let integrand = |phi: f64| {
        let s = libm::sin(phi);
        let column = h - r * (1.0 - libm::cos(phi)) * tan;
        2.0 * r * r * column.max(0.0) * s * s
    };
    let volume_mm3 = adaptive_simpson(&integrand, 0.0, phi_max, QUADRATURE_REL_TOL);
    Ok((volume_mm3 / MM3_PER_ML).max(0.0))
}

/// Closed form of [`tilted_capacity`] while the plane still crosses the
/// side wall only (`tan(theta) <= h / (2r)`); `None` once the base is exposed.
pub fn tilted_capacity_wall_case(c: &ContainerSpec, theta: f64) -> Option<f64> {
    let r = c.radius();
    let tan = libm::tan(theta);
    if !(0.0..FRAC_PI_2).contains(&theta) || tan > c.h / (2.0 * r) {
        return None;
    }
    Some((PI * r * r * c.h - PI * r * r * r * tan) / MM3_PER_ML)
}

/// Rate of change of the retained volume with tilt, `-dV/dtheta` (mL/rad).
///
/// Differentiating under the integral leaves `sec^2(theta)` times the first
/// moment of the wetted base chord about the rim; the boundary term vanishes
/// because the column height is zero at the lower limit.
pub fn spill_rate(c: &ContainerSpec, theta: f64) -> Result<f64, GeometryError> {
    check_angle(theta)?;
    if theta >= FRAC_PI_2 {
        return Ok(0.0);
    }
    let r = c.radius();
    let tan = libm::tan(theta);
    let x0 = if tan > 0.0 { (r - c.h / tan).max(-r) } else { -r };
    let phi_max = libm::acos((x0 / r).clamp(-1.0, 1.0));
    if phi_max <= 0.0 {
        return Ok(0.0);
    }
    let integrand = |phi: f64| {
        let s = libm::sin(phi);
        2.0 * r * r * r * (1.0 - libm::cos(phi)) * s * s
    };
    let moment = adaptive_simpson(&integrand, 0.0, phi_max, QUADRATURE_REL_TOL);
    let cos = libm::cos(theta);
    Ok(moment / (cos * cos) / MM3_PER_ML)
}

/// Smallest tilt at which a retained volume `volume` (mL) reaches the rim.
pub fn critical_angle(c: &ContainerSpec, volume: f64) -> Result<f64, GeometryError> {
    let capacity = capacity_upright(c);
    if !(0.0..=capacity).contains(&volume) {
        return Err(GeometryError::VolumeOutOfRange { volume, capacity });
    }
    if volume >= capacity {
        return Ok(0.0);
    }
    if volume <= 0.0 {
        return Ok(FRAC_PI_2);
    }
    // tilted_capacity is strictly decreasing, so bisection brackets the
    // unique root. Iterating to float resolution is far inside the tolerance.
    let (mut lo, mut hi) = (0.0, FRAC_PI_2);
    for _ in 0..64 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if tilted_capacity(c, mid)? > volume {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    debug_assert!(hi - lo <= CRITICAL_ANGLE_TOL);
    Ok(0.5 * (lo + hi))
}

fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

/// Adaptive Simpson quadrature with a tolerance relative to the coarse
/// whole-interval estimate.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, rel_tol: f64) -> f64 {
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = simpson(fa, fm, fb, a, b);
    // Seed with a finer estimate so the tolerance is not tied to a lucky
    // three-point value.
    let scale = {
        let n = 16;
        let step = (b - a) / n as f64;
        let mut acc = 0.0;
        for k in 0..n {
            let x0 = a + step * k as f64;
            acc += simpson(f(x0), f(x0 + 0.5 * step), f(x0 + step), x0, x0 + step);
        }
        libm::fabs(acc)
    };
    let eps = (rel_tol * scale).max(f64::MIN_POSITIVE);
    simpson_step(f, a, b, fa, fm, fb, whole, eps, 48)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    eps: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(fa, flm, fm, a, m);
    let right = simpson(fm, frm, fb, m, b);
    let delta = left + right - whole;
    if depth == 0 || libm::fabs(delta) <= 15.0 * eps {
        return left + right + delta / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, 0.5 * eps, depth - 1)
        + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * eps, depth - 1)
}
