#![allow(dead_code)]

pub mod geometry;
pub mod gradients;
pub mod properties;
pub mod training;

use geospike::manifold::{self, Curvature, ManifoldPoint, TangentVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const KAPPAS: [f64; 6] = [-2.0, -1.0, -0.5, 0.5, 1.0, 2.0];
pub const DIMS: [usize; 3] = [2, 8, 32];

/// Result of one suite: whether it passed and a one-line summary.
#[derive(Clone, Debug)]
pub struct Verdict {
    pub passed: bool,
    pub detail: String,
}

impl Verdict {
    pub fn new(passed: bool, detail: impl Into<String>) -> Self {
        Self {
            passed,
            detail: detail.into(),
        }
    }

    pub fn assert_passed(&self) {
        assert!(self.passed, "{}", self.detail);
    }
}

/// Largest observed error relative to its tolerance, with the offending case.
#[derive(Clone, Debug, Default)]
pub struct Worst {
    pub ratio: f64,
    pub case: String,
}

impl Worst {
    pub fn record(&mut self, err: f64, tol: f64, case: impl FnOnce() -> String) {
        let ratio = if err.is_nan() {
            f64::INFINITY
        } else {
            err / tol
        };
        if ratio > self.ratio {
            self.ratio = ratio;
            self.case = case();
        }
    }

    pub fn ok(&self) -> bool {
        self.ratio <= 1.0
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Uniform direction with length uniform in `[0, max_len)`.
pub fn random_vector(rng: &mut impl Rng, n: usize, max_len: f64) -> Vec<f64> {
    let g = gaussian(rng, n);
    let len = rng.random::<f64>() * max_len;
    let s = len / norm(&g);
    g.into_iter().map(|x| x * s).collect()
}

/// Radius in intrinsic length units that keeps sampled points well
/// conditioned: the whole sphere, or a ball of radius 2 on the hyperboloid.
pub fn point_radius(kappa: f64) -> f64 {
    if kappa > 0.0 {
        0.999 * std::f64::consts::PI / kappa.sqrt()
    } else if kappa < 0.0 {
        2.0 / (-kappa).sqrt()
    } else {
        2.0
    }
}

pub fn random_point(rng: &mut impl Rng, kappa: f64, d: usize) -> ManifoldPoint {
    let k = Curvature::new(kappa).unwrap();
    manifold::exp_origin(&random_vector(rng, d, point_radius(kappa)), k)
}

/// Tangent vector at `x` with uniform direction and length below `max_len`.
pub fn random_tangent(rng: &mut impl Rng, x: &ManifoldPoint, max_len: f64) -> TangentVector {
    let raw = gaussian(rng, x.coords().len());
    let t = manifold::project_to_tangent(x, &raw).unwrap();
    let len = rng.random::<f64>() * max_len;
    let s = len / t.norm();
    let coords = t.coords().iter().map(|v| v * s).collect();
    TangentVector::new(x.clone(), coords).unwrap()
}

/// Tangent lengths used for exp/log round trips: 0.9 of the injectivity
/// radius on spheres, 3 curvature units on hyperboloids.
pub fn tangent_radius(kappa: f64) -> f64 {
    if kappa > 0.0 {
        0.9 * std::f64::consts::PI / kappa.sqrt()
    } else if kappa < 0.0 {
        3.0 / (-kappa).sqrt()
    } else {
        3.0
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}
