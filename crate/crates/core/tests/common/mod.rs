//! Test-only oracles.  The library never consults these.
#![allow(dead_code)]

use std::f64::consts::PI;

/// Closed-form distance from 0 in the Heisenberg group with
/// X1 = ∂1 − (x2/2)∂3, X2 = ∂2 + (x1/2)∂3 (x3 is signed area).
///
/// A unit-speed geodesic of length L whose planar projection turns by the
/// angle φ is a circular arc with chord r = 2L sin(φ/2)/φ enclosing area
/// L²(φ − sin φ)/(2φ²); eliminating L gives |x3|/r² = (φ − sin φ)/(8 sin²(φ/2)).
pub fn heisenberg_distance(x: [f64; 3]) -> f64 {
    let r = x[0].hypot(x[1]);
    let z = x[2].abs();
    if z == 0.0 {
        return r;
    }
    if r == 0.0 {
        return (4.0 * PI * z).sqrt();
    }
    let target = z / (r * r);
    let mu = |phi: f64| (phi - phi.sin()) / (8.0 * (phi / 2.0).sin().powi(2));
    let (mut lo, mut hi) = (1e-12, 2.0 * PI - 1e-15);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mu(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let phi = 0.5 * (lo + hi);
    r * phi / (2.0 * (phi / 2.0).sin())
}

/// Group law a·b for the same Heisenberg coordinates.
pub fn heisenberg_mul(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2] + 0.5 * (a[0] * b[1] - a[1] * b[0])]
}

pub fn heisenberg_inv(a: [f64; 3]) -> [f64; 3] {
    [-a[0], -a[1], -a[2]]
}

pub fn heisenberg_dist2(a: [f64; 3], b: [f64; 3]) -> f64 {
    heisenberg_distance(heisenberg_mul(heisenberg_inv(a), b))
}

/// Lebesgue volume of the Heisenberg unit ball from the sphere profile.
///
/// The sphere is the surface of revolution of r(φ) = 2 sin(φ/2)/φ,
/// x3(φ) = (φ − sin φ)/(2φ²), φ ∈ [0, 2π].  By Green's theorem in the
/// (r, x3) half-plane the upper half has volume ∫ π r² dx3 along the profile.
pub fn heisenberg_unit_ball_volume() -> f64 {
    let r = |p: f64| if p == 0.0 { 1.0 } else { 2.0 * (p / 2.0).sin() / p };
    let dz = |p: f64| {
        if p < 1e-4 {
            // (φ − sin φ)/(2φ²) = φ/12 − φ³/240 + …
            1.0 / 12.0 - p * p / 80.0
        } else {
            ((1.0 - p.cos()) * p - 2.0 * (p - p.sin())) / (2.0 * p * p * p)
        }
    };
    let n = 20000;
    let h = 2.0 * PI / n as f64;
    let f = |p: f64| PI * r(p).powi(2) * dz(p);
    let mut s = f(0.0) + f(2.0 * PI);
    for i in 1..n {
        s += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    2.0 * s * h / 3.0
}
