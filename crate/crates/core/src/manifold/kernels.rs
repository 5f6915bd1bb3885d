//! Slice-level closed forms shared by the point API and the traced ops.
//!
//! Conventions: for `kappa != 0` points live in ambient coordinates of length
//! `d + 1`, on the sphere `<x,x> = 1/kappa` (kappa > 0) or the upper sheet of
//! the hyperboloid `<x,x>_L = 1/kappa` (kappa < 0). `kappa == 0` uses plain
//! `d`-vectors.

use super::GeometryError;
use crate::tensor::dot;

/// Inverse-trig arguments this far outside their domain are clamped.
pub const CLAMP_TOL: f64 = 1e-7;
/// Sphere pairs with `pi - sqrt(kappa) * d` below this are treated as antipodal.
pub const ANTIPODAL_TOL: f64 = 1e-9;
/// Injectivity guard for spherical exp maps.
pub const INJECTIVITY_MARGIN: f64 = 1e-6;

/// Switch to series expansions when `|kappa| n^2` is below this.
const SERIES_CUTOFF: f64 = 1e-2;

pub fn inner(x: &[f64], y: &[f64], kappa: f64) -> f64 {
    if kappa < 0.0 {
        -x[0] * y[0] + dot(&x[1..], &y[1..])
    } else {
        dot(x, y)
    }
}

/// Applies the diagonal metric `J` (flips the time-like sign when kappa < 0).
pub fn metric_flip_in_place(v: &mut [f64], kappa: f64) {
    if kappa < 0.0 {
        v[0] = -v[0];
    }
}

/// Norm of a tangent vector under the kappa metric. Tiny negative Lorentz
/// squares produced by rounding are treated as zero.
pub fn tangent_norm(t: &[f64], kappa: f64) -> f64 {
    inner(t, t, kappa).max(0.0).sqrt()
}

/// `(cos_k(z), sin_k(z))` with `cos_k(z) = cos(sqrt(k) z)`, `sin_k(z) = sin(sqrt(k) z)/sqrt(k)`
/// and their hyperbolic counterparts; `(1, z)` for flat space.
pub fn trig(z: f64, kappa: f64) -> (f64, f64) {
    if kappa > 0.0 {
        let s = kappa.sqrt();
        ((s * z).cos(), (s * z).sin() / s)
    } else if kappa < 0.0 {
        let s = (-kappa).sqrt();
        ((s * z).cosh(), (s * z).sinh() / s)
    } else {
        (1.0, z)
    }
}

/// `sin_k(n) / n`, finite at `n = 0`.
pub fn sin_ratio(n: f64, kappa: f64) -> f64 {
    let s = kappa * n * n;
    if s.abs() < SERIES_CUTOFF {
        1.0 - s / 6.0 + s * s / 120.0 - s * s * s / 5040.0
    } else {
        trig(n, kappa).1 / n
    }
}

/// `(n cos_k(n) - sin_k(n)) / (kappa n^3)`, the reduced derivative of
/// [`sin_ratio`]; tends to `-1/3` as `n -> 0`. Only meaningful for kappa != 0.
pub fn sin_ratio_slope(n: f64, kappa: f64) -> f64 {
    let s = kappa * n * n;
    if s.abs() < SERIES_CUTOFF {
        -1.0 / 3.0 + s / 30.0 - s * s / 840.0 + s * s * s / 45360.0
    } else {
        let (c, sn) = trig(n, kappa);
        (n * c - sn) / (kappa * n * n * n)
    }
}

/// Geodesic length from the pair `(z, |u|)` where `z = kappa <x,y>` and `u` is
/// the tangential residual `y - z x`. Uses `atan2`/`asinh` so short distances
/// keep full relative precision.
pub fn length_from_parts(z: f64, u_norm: f64, kappa: f64) -> f64 {
    let s = kappa.abs().sqrt();
    if kappa > 0.0 {
        (s * u_norm).atan2(z) / s
    } else if z > 1.5 {
        z.acosh() / s
    } else {
        (s * u_norm).asinh() / s
    }
}

fn check_cos_domain(z: f64, kappa: f64, tol: f64) -> Result<(), GeometryError> {
    let ok = if kappa > 0.0 {
        z.abs() <= 1.0 + tol
    } else {
        z >= 1.0 - tol
    };
    if ok && z.is_finite() {
        Ok(())
    } else {
        Err(GeometryError::Numeric(format!(
            "inverse-trig argument {z} outside its domain for curvature {kappa}"
        )))
    }
}

/// Decomposition of `y` relative to `x`: `(z, u, d)` with `z = kappa <x,y>`
/// and `u = y - z x`.
pub struct LogParts {
    pub z: f64,
    pub u: Vec<f64>,
    pub d: f64,
}

pub fn log_parts(x: &[f64], y: &[f64], kappa: f64) -> Result<LogParts, GeometryError> {
    debug_assert!(kappa != 0.0);
    // z - 1 = -(kappa/2) <y-x, y-x>: exact for nearby points even far from
    // the origin, where kappa <x,y> itself cancels catastrophically.
    let scale: f64 = x.iter().zip(y).map(|(a, b)| (a * b).abs()).sum();
    let slack = (16.0 * f64::EPSILON * kappa.abs() * scale).max(CLAMP_TOL);
    check_cos_domain(kappa * inner(x, y, kappa), kappa, slack)?;
    let diff: Vec<f64> = y.iter().zip(x).map(|(yi, xi)| yi - xi).collect();
    let w = -0.5 * kappa * inner(&diff, &diff, kappa);
    let w = if kappa < 0.0 {
        w.max(0.0)
    } else {
        w.clamp(-2.0, 0.0)
    };
    let z = 1.0 + w;
    let u: Vec<f64> = diff.iter().zip(x).map(|(di, xi)| di - w * xi).collect();
    let d = if x == y {
        0.0
    } else {
        length_from_parts(z, tangent_norm(&u, kappa), kappa)
    };
    Ok(LogParts { z, u, d })
}

fn check_antipodal(d: f64, kappa: f64) -> Result<(), GeometryError> {
    if kappa > 0.0 && std::f64::consts::PI - kappa.sqrt() * d < ANTIPODAL_TOL {
        return Err(GeometryError::Singular(
            "log map between antipodal points is undefined".into(),
        ));
    }
    Ok(())
}

pub fn distance(x: &[f64], y: &[f64], kappa: f64) -> Result<f64, GeometryError> {
    if kappa == 0.0 {
        return Ok(x
            .iter()
            .zip(y)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt());
    }
    if x == y {
        return Ok(0.0);
    }
    Ok(log_parts(x, y, kappa)?.d)
}

pub fn log_map(x: &[f64], y: &[f64], kappa: f64, out: &mut [f64]) -> Result<(), GeometryError> {
    if kappa == 0.0 {
        for ((o, a), b) in out.iter_mut().zip(x).zip(y) {
            *o = b - a;
        }
        return Ok(());
    }
    let parts = log_parts(x, y, kappa)?;
    check_antipodal(parts.d, kappa)?;
    let phi = 1.0 / sin_ratio(parts.d, kappa);
    for (o, u) in out.iter_mut().zip(&parts.u) {
        *o = phi * u;
    }
    Ok(())
}

/// Closed-form exponential map. No injectivity guard: beyond the radius on
/// the sphere the result is still a valid point, the map just stops being
/// invertible.
pub fn exp_map(x: &[f64], t: &[f64], kappa: f64, out: &mut [f64]) {
    let n = tangent_norm(t, kappa);
    let (c, _) = trig(n, kappa);
    let a = sin_ratio(n, kappa);
    for ((o, xi), ti) in out.iter_mut().zip(x).zip(t) {
        *o = c * xi + a * ti;
    }
}

/// `exp_o([0, a])` for a spatial tangent vector `a` at the origin.
pub fn exp_origin(a: &[f64], kappa: f64, out: &mut [f64]) {
    if kappa == 0.0 {
        out.copy_from_slice(a);
        return;
    }
    let s = kappa.abs().sqrt();
    let n = dot(a, a).sqrt();
    let (c, _) = trig(n, kappa);
    let ratio = sin_ratio(n, kappa);
    out[0] = c / s;
    for (o, ai) in out[1..].iter_mut().zip(a) {
        *o = ratio * ai;
    }
}

/// Spatial part of `log_o(p)`; its time-like component is identically zero.
pub fn log_origin(p: &[f64], kappa: f64, out: &mut [f64]) -> Result<(), GeometryError> {
    if kappa == 0.0 {
        out.copy_from_slice(p);
        return Ok(());
    }
    let (_, d) = origin_parts(p, kappa)?;
    check_antipodal(d, kappa)?;
    let phi = 1.0 / sin_ratio(d, kappa);
    for (o, pi) in out.iter_mut().zip(&p[1..]) {
        *o = phi * pi;
    }
    Ok(())
}

/// `(z, d)` for the pair `(o, p)`: `z = sqrt|kappa| p_0`, `d = d_kappa(o, p)`.
pub fn origin_parts(p: &[f64], kappa: f64) -> Result<(f64, f64), GeometryError> {
    let s = kappa.abs().sqrt();
    let z = s * p[0];
    check_cos_domain(z, kappa, CLAMP_TOL)?;
    let spatial = dot(&p[1..], &p[1..]).sqrt();
    Ok((z, length_from_parts(z, spatial, kappa)))
}

pub fn project(x: &[f64], kappa: f64, out: &mut [f64]) -> Result<(), GeometryError> {
    if kappa == 0.0 {
        out.copy_from_slice(x);
        return Ok(());
    }
    if x.iter().all(|&v| v == 0.0) {
        return Err(GeometryError::Domain(
            "cannot project the zero vector onto a curved manifold".into(),
        ));
    }
    if kappa > 0.0 {
        let scale = 1.0 / (kappa.sqrt() * dot(x, x).sqrt());
        for (o, v) in out.iter_mut().zip(x) {
            *o = v * scale;
        }
    } else {
        let spatial = dot(&x[1..], &x[1..]);
        out[0] = (1.0 / -kappa + spatial).sqrt();
        out[1..].copy_from_slice(&x[1..]);
    }
    Ok(())
}

pub fn project_tangent(x: &[f64], v: &[f64], kappa: f64, out: &mut [f64]) {
    if kappa == 0.0 {
        out.copy_from_slice(v);
        return;
    }
    let c = kappa * inner(x, v, kappa);
    for ((o, vi), xi) in out.iter_mut().zip(v).zip(x) {
        *o = vi - c * xi;
    }
}

/// Deviation of `x` from the manifold constraint `<x,x>_kappa = 1/kappa`.
pub fn constraint_violation(x: &[f64], kappa: f64) -> f64 {
    if kappa == 0.0 {
        return 0.0;
    }
    (inner(x, x, kappa) - 1.0 / kappa).abs()
}

/// Tolerance of the point invariant, `1e-9 (1 + 1/|kappa|)`.
pub fn constraint_tolerance(kappa: f64) -> f64 {
    if kappa == 0.0 {
        return 0.0;
    }
    1e-9 * (1.0 + 1.0 / kappa.abs())
}
