//! Product manifolds `M_1 x ... x M_K` and the geometry-string grammar.
//!
//! A geometry string is `component ('x' component)*` with
//! `component = ('s' | 'e' | 'h') digits`, e.g. `s4xs8xh16`. Squared
//! distances add across components.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::{kernels, Curvature, GeometryError, ManifoldPoint};

/// Embedding dimension of the single-space variants (`h32`, `s32`, `e32`).
pub const DEFAULT_EMBEDDING_DIM: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub curvature: Curvature,
    pub dim: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProductManifoldSpec {
    components: Vec<Component>,
}

impl ProductManifoldSpec {
    pub fn new(components: Vec<Component>) -> Result<Self, GeometryError> {
        if components.is_empty() {
            return Err(GeometryError::Shape(
                "product needs at least one component".into(),
            ));
        }
        if let Some(c) = components.iter().find(|c| c.dim == 0) {
            return Err(GeometryError::Shape(format!(
                "component with curvature {} has zero dimension",
                c.curvature
            )));
        }
        Ok(Self { components })
    }

    /// Parses a geometry string; when `total_dim` is given the component
    /// dimensions must sum to it.
    pub fn parse(spec: &str, total_dim: Option<usize>) -> Result<Self, GeometryError> {
        let err = |token: &str, reason: &str| GeometryError::Parse {
            spec: spec.to_string(),
            token: token.to_string(),
            reason: reason.to_string(),
        };
        if spec.is_empty() {
            return Err(err("", "empty geometry"));
        }
        let mut components = Vec::new();
        for token in spec.split('x') {
            let mut chars = token.chars();
            let curvature = match chars.next() {
                Some('s') => Curvature::SPHERE,
                Some('e') => Curvature::FLAT,
                Some('h') => Curvature::HYPERBOLIC,
                _ => return Err(err(token, "expected a component starting with s, e or h")),
            };
            let digits = chars.as_str();
            if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
                return Err(err(token, "dimension must be a decimal integer"));
            }
            let dim: usize = digits
                .parse()
                .map_err(|_| err(token, "dimension out of range"))?;
            if dim == 0 {
                return Err(err(token, "dimension must be at least 1"));
            }
            components.push(Component { curvature, dim });
        }
        let total: usize = components.iter().map(|c| c.dim).sum();
        if let Some(expected) = total_dim.filter(|&e| e != total) {
            return Err(err(
                spec,
                &format!("dimensions sum to {total}, expected {expected}"),
            ));
        }
        Ok(Self { components })
    }

    /// Rescales component curvatures to the given magnitudes, keeping signs.
    pub fn with_magnitudes(mut self, magnitudes: &[f64]) -> Result<Self, GeometryError> {
        if magnitudes.len() != self.components.len() {
            return Err(GeometryError::Shape(format!(
                "{} magnitudes for {} components",
                magnitudes.len(),
                self.components.len()
            )));
        }
        for (c, &m) in self.components.iter_mut().zip(magnitudes) {
            if m.is_nan() || m <= 0.0 {
                return Err(GeometryError::Domain(format!(
                    "curvature magnitude {m} must be > 0"
                )));
            }
            let sign = c.curvature.value().signum();
            if sign != 0.0 {
                c.curvature = Curvature::new(sign * m)?;
            }
        }
        Ok(self)
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn total_dim(&self) -> usize {
        self.components.iter().map(|c| c.dim).sum()
    }
}

impl fmt::Display for ProductManifoldSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, c) in self.components.iter().enumerate() {
            if i > 0 {
                f.write_str("x")?;
            }
            let letter = match c.curvature.sign() {
                super::CurvatureSign::Spherical => 's',
                super::CurvatureSign::Flat => 'e',
                super::CurvatureSign::Hyperbolic => 'h',
            };
            write!(f, "{letter}{}", c.dim)?;
        }
        Ok(())
    }
}

/// Parses a geometry string. The embedding dimension is whatever the
/// components add up to; use [`ProductManifoldSpec::parse`] to pin it.
pub fn parse_geometry_spec(spec: &str) -> Result<ProductManifoldSpec, GeometryError> {
    ProductManifoldSpec::parse(spec, None)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProductDistance {
    pub per_component: Vec<f64>,
    pub total: f64,
}

/// Per-component squared geodesic distances and their sum.
pub fn product_distance_sq(
    u: &[ManifoldPoint],
    v: &[ManifoldPoint],
    spec: &ProductManifoldSpec,
) -> Result<ProductDistance, GeometryError> {
    if u.len() != spec.len() || v.len() != spec.len() {
        return Err(GeometryError::Shape(format!(
            "expected {} components, got {} and {}",
            spec.len(),
            u.len(),
            v.len()
        )));
    }
    let mut per_component = Vec::with_capacity(spec.len());
    for ((a, b), c) in u.iter().zip(v).zip(&spec.components) {
        for p in [a, b] {
            if p.curvature() != c.curvature || p.dim() != c.dim {
                return Err(GeometryError::Shape(format!(
                    "point of curvature {} and dim {} does not belong to component ({}, {})",
                    p.curvature(),
                    p.dim(),
                    c.curvature,
                    c.dim
                )));
            }
        }
        let d = kernels::distance(a.coords(), b.coords(), c.curvature.value())?;
        per_component.push(d * d);
    }
    let total = per_component.iter().sum();
    Ok(ProductDistance {
        per_component,
        total,
    })
}
