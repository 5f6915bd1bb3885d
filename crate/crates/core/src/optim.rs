//! Riemannian SGD: metric correction and tangent projection of Euclidean
//! gradients, then retraction along the exponential map.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifold::{self, kernels, ManifoldPoint, TangentVector};
use crate::model::{ModelParams, ParamKind};
use crate::tensor::Tensor;

/// Default learning-rate grid for Euclidean parameters.
pub const LR_GRID: [f64; 2] = [0.001, 0.003];
pub const DEFAULT_GEO_STEP: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamTag {
    pub kind: ParamKind,
    pub lr: f64,
    pub geo_step: f64,
}

impl ParamTag {
    pub fn euclidean(lr: f64) -> Self {
        Self {
            kind: ParamKind::Euclidean,
            lr,
            geo_step: DEFAULT_GEO_STEP,
        }
    }

    pub fn manifold(curvature: manifold::Curvature, geo_step: f64) -> Self {
        Self {
            kind: ParamKind::Manifold(curvature),
            lr: LR_GRID[0],
            geo_step,
        }
    }
}

fn riemannian_grad_raw(x: &[f64], grad: &[f64], kappa: f64) -> Vec<f64> {
    if kappa == 0.0 {
        return grad.to_vec();
    }
    let mut g = grad.to_vec();
    if kappa < 0.0 {
        g[0] = -g[0];
    }
    let mut out = vec![0.0; g.len()];
    kernels::project_tangent(x, &g, kappa, &mut out);
    out
}

/// Converts a Euclidean gradient at `x` into a tangent vector.
pub fn riemannian_grad(x: &ManifoldPoint, euclid_grad: &[f64]) -> Result<TangentVector> {
    if euclid_grad.len() != x.coords().len() {
        return Err(Error::Shape(format!(
            "gradient of length {} at a point of length {}",
            euclid_grad.len(),
            x.coords().len()
        )));
    }
    let g = riemannian_grad_raw(x.coords(), euclid_grad, x.curvature().value());
    Ok(manifold::project_to_tangent(x, &g)?)
}

/// One descent step. A non-finite gradient leaves `x` unchanged and logs a
/// warning.
pub fn rsgd_step(x: &Tensor, grad: &Tensor, tag: &ParamTag) -> Result<Tensor> {
    if x.shape() != grad.shape() {
        return Err(Error::Shape(format!(
            "gradient {:?} for a parameter {:?}",
            grad.shape(),
            x.shape()
        )));
    }
    if !grad.is_finite() {
        log::warn!("skipping update: non-finite gradient");
        return Ok(x.clone());
    }
    match tag.kind {
        ParamKind::Euclidean => Ok(x.zip_map(grad, |a, g| a - tag.lr * g)),
        ParamKind::Manifold(c) => {
            let kappa = c.value();
            let mut out = x.clone();
            let mut moved = vec![0.0; x.cols()];
            for r in 0..x.rows() {
                let step: Vec<f64> = riemannian_grad_raw(x.row(r), grad.row(r), kappa)
                    .into_iter()
                    .map(|v| -tag.geo_step * v)
                    .collect();
                if step.iter().all(|&v| v == 0.0) {
                    continue;
                }
                kernels::exp_map(x.row(r), &step, kappa, &mut moved);
                kernels::project(&moved, kappa, out.row_mut(r))?;
            }
            Ok(out)
        }
    }
}

/// Applies [`rsgd_step`] to every parameter with `grads[i]` for parameter `i`.
pub fn step_all(params: &mut ModelParams, grads: &[Tensor], lr: f64, geo_step: f64) -> Result<()> {
    if grads.len() != params.len() {
        return Err(Error::Shape(format!(
            "{} gradients for {} parameters",
            grads.len(),
            params.len()
        )));
    }
    for (p, g) in params.iter_mut().zip(grads) {
        let tag = ParamTag {
            kind: p.kind,
            lr,
            geo_step,
        };
        p.value = rsgd_step(&p.value, g, &tag)?;
    }
    Ok(())
}
