//! Constant-curvature geometry.
//!
//! Spheres (kappa > 0) are hyperspheres `<x,x> = 1/kappa` in `R^{d+1}`,
//! hyperbolic spaces (kappa < 0) are the upper sheet of the hyperboloid
//! `<x,x>_L = 1/kappa` with the Minkowski product `-x0 y0 + sum xi yi`, and
//! flat space (kappa = 0) is plain `R^d`. The reference origin is
//! `[1/sqrt|kappa|, 0, ..., 0]` on curved spaces and the zero vector in flat
//! space.
//!
//! Everything here is a pure function of its inputs.

pub mod kernels;
mod product;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use product::{
    parse_geometry_spec, product_distance_sq, Component, ProductDistance, ProductManifoldSpec,
    DEFAULT_EMBEDDING_DIM,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("singularity: {0}")]
    Singular(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("invalid geometry `{spec}`: offending token `{token}` ({reason})")]
    Parse {
        spec: String,
        token: String,
        reason: String,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CurvatureSign {
    Spherical,
    Flat,
    Hyperbolic,
}

/// Sectional curvature of a constant-curvature space. Always finite.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Curvature(f64);

impl Curvature {
    pub const SPHERE: Curvature = Curvature(1.0);
    pub const FLAT: Curvature = Curvature(0.0);
    pub const HYPERBOLIC: Curvature = Curvature(-1.0);

    pub fn new(kappa: f64) -> Result<Self, GeometryError> {
        if kappa.is_finite() {
            Ok(Self(kappa))
        } else {
            Err(GeometryError::Domain(format!(
                "curvature {kappa} is not finite"
            )))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn sign(self) -> CurvatureSign {
        if self.0 > 0.0 {
            CurvatureSign::Spherical
        } else if self.0 < 0.0 {
            CurvatureSign::Hyperbolic
        } else {
            CurvatureSign::Flat
        }
    }

    pub fn is_flat(self) -> bool {
        self.0 == 0.0
    }

    /// Number of ambient coordinates for an intrinsic dimension `d`.
    pub fn ambient_dim(self, d: usize) -> usize {
        if self.is_flat() {
            d
        } else {
            d + 1
        }
    }

    /// Intrinsic dimension for an ambient length.
    pub fn intrinsic_dim(self, ambient: usize) -> usize {
        if self.is_flat() {
            ambient
        } else {
            ambient - 1
        }
    }
}

impl TryFrom<f64> for Curvature {
    type Error = GeometryError;
    fn try_from(value: f64) -> Result<Self, Self::Error> {
        Curvature::new(value)
    }
}

impl From<Curvature> for f64 {
    fn from(k: Curvature) -> f64 {
        k.0
    }
}

impl fmt::Display for Curvature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A point on a constant-curvature space in ambient coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifoldPoint {
    coords: Vec<f64>,
    curvature: Curvature,
}

impl ManifoldPoint {
    /// Wraps coordinates after checking the manifold constraint.
    pub fn new(coords: Vec<f64>, curvature: Curvature) -> Result<Self, GeometryError> {
        let point = Self { coords, curvature };
        point.validate()?;
        Ok(point)
    }

    /// Wraps coordinates without checking them. Callers must guarantee the
    /// invariant, typically because the coordinates came out of
    /// [`kernels::project`].
    pub fn from_raw(coords: Vec<f64>, curvature: Curvature) -> Self {
        Self { coords, curvature }
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.coords
    }

    pub fn curvature(&self) -> Curvature {
        self.curvature
    }

    pub fn dim(&self) -> usize {
        self.curvature.intrinsic_dim(self.coords.len())
    }

    /// `|<x,x>_kappa - 1/kappa|`, zero in flat space.
    pub fn constraint_violation(&self) -> f64 {
        kernels::constraint_violation(&self.coords, self.curvature.0)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !self.coords.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::Numeric(
                "point has non-finite coordinates".into(),
            ));
        }
        let kappa = self.curvature.0;
        if kappa == 0.0 {
            return Ok(());
        }
        if self.coords.len() < 2 {
            return Err(GeometryError::Shape(
                "curved points need at least two ambient coordinates".into(),
            ));
        }
        let violation = self.constraint_violation();
        if violation > kernels::constraint_tolerance(kappa) {
            return Err(GeometryError::Domain(format!(
                "point violates <x,x> = 1/kappa by {violation:e}"
            )));
        }
        if kappa < 0.0 && self.coords[0] <= 0.0 {
            return Err(GeometryError::Domain(
                "hyperboloid point is not on the upper sheet".into(),
            ));
        }
        Ok(())
    }
}

/// A tangent vector together with its base point.
#[derive(Clone, Debug, PartialEq)]
pub struct TangentVector {
    coords: Vec<f64>,
    base: ManifoldPoint,
}

impl TangentVector {
    pub fn new(base: ManifoldPoint, coords: Vec<f64>) -> Result<Self, GeometryError> {
        if coords.len() != base.coords.len() {
            return Err(GeometryError::Shape(format!(
                "tangent has {} coordinates, base point has {}",
                coords.len(),
                base.coords.len()
            )));
        }
        let kappa = base.curvature.0;
        if kappa != 0.0 {
            let off = kernels::inner(&base.coords, &coords, kappa).abs();
            let scale = 1.0 + crate::tensor::norm(&coords);
            if off > 1e-9 * scale {
                return Err(GeometryError::Domain(format!(
                    "vector is not tangent at its base (off by {off:e})"
                )));
            }
        }
        Ok(Self { coords, base })
    }

    pub fn zero(base: ManifoldPoint) -> Self {
        let coords = vec![0.0; base.coords.len()];
        Self { coords, base }
    }

    pub(crate) fn from_raw(base: ManifoldPoint, coords: Vec<f64>) -> Self {
        Self { coords, base }
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn base(&self) -> &ManifoldPoint {
        &self.base
    }

    /// Length under the kappa metric.
    pub fn norm(&self) -> f64 {
        kernels::tangent_norm(&self.coords, self.base.curvature.0)
    }
}

fn same_curvature(a: &ManifoldPoint, b: &ManifoldPoint) -> Result<(), GeometryError> {
    if a.curvature != b.curvature {
        return Err(GeometryError::Shape(format!(
            "curvature mismatch: {} vs {}",
            a.curvature, b.curvature
        )));
    }
    if a.coords.len() != b.coords.len() {
        return Err(GeometryError::Shape(format!(
            "dimension mismatch: {} vs {}",
            a.coords.len(),
            b.coords.len()
        )));
    }
    Ok(())
}

/// Generalized cosine and sine for curvature `kappa`.
pub fn curvature_trig(z: f64, kappa: Curvature) -> Result<(f64, f64), GeometryError> {
    if !z.is_finite() {
        return Err(GeometryError::Domain(format!("argument {z} is not finite")));
    }
    Ok(kernels::trig(z, kappa.0))
}

/// Spherical/flat dot product or Lorentz product, depending on the sign of kappa.
pub fn inner_product(x: &[f64], y: &[f64], kappa: Curvature) -> Result<f64, GeometryError> {
    if x.len() != y.len() {
        return Err(GeometryError::Shape(format!(
            "inner product of lengths {} and {}",
            x.len(),
            y.len()
        )));
    }
    if x.is_empty() {
        return Ok(0.0);
    }
    Ok(kernels::inner(x, y, kappa.0))
}

pub fn origin(kappa: Curvature, d: usize) -> ManifoldPoint {
    let mut coords = vec![0.0; kappa.ambient_dim(d)];
    if !kappa.is_flat() {
        coords[0] = 1.0 / kappa.0.abs().sqrt();
    }
    ManifoldPoint {
        coords,
        curvature: kappa,
    }
}

pub fn exp_map(x: &ManifoldPoint, t: &TangentVector) -> Result<ManifoldPoint, GeometryError> {
    same_curvature(x, &t.base)?;
    let kappa = x.curvature.0;
    let n = kernels::tangent_norm(&t.coords, kappa);
    if n == 0.0 {
        return Ok(x.clone());
    }
    if kappa > 0.0 && kappa.sqrt() * n >= std::f64::consts::PI - kernels::INJECTIVITY_MARGIN {
        return Err(GeometryError::Domain(format!(
            "tangent of length {n} exceeds the injectivity radius {}",
            std::f64::consts::PI / kappa.sqrt()
        )));
    }
    let mut raw = vec![0.0; x.coords.len()];
    kernels::exp_map(&x.coords, &t.coords, kappa, &mut raw);
    let mut out = vec![0.0; raw.len()];
    kernels::project(&raw, kappa, &mut out)?;
    Ok(ManifoldPoint::from_raw(out, x.curvature))
}

pub fn log_map(x: &ManifoldPoint, y: &ManifoldPoint) -> Result<TangentVector, GeometryError> {
    same_curvature(x, y)?;
    if x.coords == y.coords {
        return Ok(TangentVector::zero(x.clone()));
    }
    let mut raw = vec![0.0; x.coords.len()];
    kernels::log_map(&x.coords, &y.coords, x.curvature.0, &mut raw)?;
    let mut coords = vec![0.0; raw.len()];
    kernels::project_tangent(&x.coords, &raw, x.curvature.0, &mut coords);
    Ok(TangentVector::from_raw(x.clone(), coords))
}

pub fn geodesic_distance(x: &ManifoldPoint, y: &ManifoldPoint) -> Result<f64, GeometryError> {
    same_curvature(x, y)?;
    kernels::distance(&x.coords, &y.coords, x.curvature.0)
}

/// Renormalizes ambient coordinates onto the manifold. For the hyperboloid the
/// spatial part is kept and the time-like coordinate is solved for.
pub fn project_to_manifold(raw: &[f64], kappa: Curvature) -> Result<ManifoldPoint, GeometryError> {
    if !raw.iter().all(|v| v.is_finite()) {
        return Err(GeometryError::Domain("non-finite coordinates".into()));
    }
    if !kappa.is_flat() && raw.len() < 2 {
        return Err(GeometryError::Shape(
            "curved points need at least two ambient coordinates".into(),
        ));
    }
    let mut out = vec![0.0; raw.len()];
    kernels::project(raw, kappa.0, &mut out)?;
    Ok(ManifoldPoint::from_raw(out, kappa))
}

pub fn project_to_tangent(x: &ManifoldPoint, raw: &[f64]) -> Result<TangentVector, GeometryError> {
    if raw.len() != x.coords.len() {
        return Err(GeometryError::Shape(format!(
            "vector has {} coordinates, point has {}",
            raw.len(),
            x.coords.len()
        )));
    }
    let mut out = vec![0.0; raw.len()];
    kernels::project_tangent(&x.coords, raw, x.curvature.0, &mut out);
    Ok(TangentVector::from_raw(x.clone(), out))
}

/// `exp_o([0, v])` for a spatial vector `v`.
pub fn exp_origin(v: &[f64], kappa: Curvature) -> ManifoldPoint {
    let mut raw = vec![0.0; kappa.ambient_dim(v.len())];
    kernels::exp_origin(v, kappa.0, &mut raw);
    if kappa.is_flat() {
        return ManifoldPoint::from_raw(raw, kappa);
    }
    let mut out = vec![0.0; raw.len()];
    kernels::project(&raw, kappa.0, &mut out).expect("exp_origin output is never zero");
    ManifoldPoint::from_raw(out, kappa)
}

/// Spatial coordinates of `log_o(p)`.
pub fn log_origin(p: &ManifoldPoint) -> Result<Vec<f64>, GeometryError> {
    let kappa = p.curvature;
    let mut out = vec![0.0; kappa.intrinsic_dim(p.coords.len())];
    kernels::log_origin(&p.coords, kappa.0, &mut out)?;
    Ok(out)
}
