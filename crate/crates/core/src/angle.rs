//! Angle helpers shared by the velocity, mixture and flow-cost code.

use std::f64::consts::{PI, TAU};

/// Wraps an angle into `[0, 2π)`.
pub fn wrap_positive(theta: f64) -> f64 {
    let w = theta.rem_euclid(TAU);
    // rem_euclid can return TAU itself for tiny negative inputs.
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// Wraps an angle difference into `(-π, π]`.
pub fn wrap_signed(delta: f64) -> f64 {
    let w = wrap_positive(delta);
    if w > PI {
        w - TAU
    } else {
        w
    }
}

/// Shortest non-negative angular distance between two directions, in `[0, π]`.
pub fn angular_distance(a: f64, b: f64) -> f64 {
    wrap_signed(a - b).abs()
}
