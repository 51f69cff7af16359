//! Minimal 3-vector helpers for spin states.
//!
//! Spins are plain `[f64; 3]` in the lab frame (x̂, ŷ, ẑ) with ẑ the
//! pump/probe axis. Rotations are applied exactly (Rodrigues formula) so
//! the deterministic precession preserves |F| to rounding error.

pub type Vec3 = [f64; 3];

pub const ZERO: Vec3 = [0.0, 0.0, 0.0];
pub const Z_HAT: Vec3 = [0.0, 0.0, 1.0];

#[inline]
pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

/// Rotate `v` by `angle` (rad) about the unit axis `k` (Rodrigues).
///
/// The caller must pass a normalized axis; the rotation is then exactly
/// norm-preserving up to rounding.
#[inline]
pub fn rotate(v: Vec3, k: Vec3, angle: f64) -> Vec3 {
    let (s, c) = angle.sin_cos();
    rotate_sincos(v, k, s, c)
}

/// Rodrigues rotation with precomputed sin/cos, for hot loops with a
/// constant rotation per step.
#[inline]
pub fn rotate_sincos(v: Vec3, k: Vec3, sin: f64, cos: f64) -> Vec3 {
    let kxv = cross(k, v);
    let kdv = dot(k, v);
    let omc = 1.0 - cos;
    [
        v[0] * cos + kxv[0] * sin + k[0] * kdv * omc,
        v[1] * cos + kxv[1] * sin + k[1] * kdv * omc,
        v[2] * cos + kxv[2] * sin + k[2] * kdv * omc,
    ]
}

/// Rotate `v` about ẑ by `angle` (rad); used for the optical-Zeeman-shift
/// back-action term, which is a pure z-rotation.
#[inline]
pub fn rotate_z(v: Vec3, angle: f64) -> Vec3 {
    let (s, c) = angle.sin_cos();
    [v[0] * c - v[1] * s, v[0] * s + v[1] * c, v[2]]
}
