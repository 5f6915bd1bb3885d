//! Row-wise manifold maps with closed-form backward rules.
//!
//! Each row of an input tensor is one point (or tangent vector). Backward
//! rules are derived from the closed forms and avoid any division by the
//! geodesic length, so they stay finite at zero distance. Rules for
//! [`Tape::dist_sq`] are exact along tangent directions only; every point
//! produced by the network passes through [`Tape::project`], whose Jacobian
//! discards the normal component.

use super::{Op, Tape, Var};
use crate::manifold::kernels;
use crate::manifold::GeometryError;
use crate::tensor::{dot, Tensor};

#[derive(Clone, Debug)]
pub(crate) enum GeoOp {
    /// Per row `[C, A, B]` where `C = cos_k(n)`, `A = sin_k(n)/n`, `B = dA/dn / n`.
    ExpOrigin {
        a: Var,
        kappa: f64,
        coef: Vec<[f64; 3]>,
    },
    /// Per row `[phi, phi']` as functions of `z = sqrt|k| p_0`.
    LogOrigin {
        p: Var,
        kappa: f64,
        coef: Vec<[f64; 2]>,
    },
    ExpMap {
        x: Var,
        t: Var,
        kappa: f64,
        coef: Vec<[f64; 3]>,
    },
    /// Per row `[phi, phi', z]`.
    LogMap {
        x: Var,
        y: Var,
        kappa: f64,
        coef: Vec<[f64; 3]>,
    },
    /// Stores `log_x(y)` and `log_y(x)` per row.
    DistSq {
        x: Var,
        y: Var,
        kappa: f64,
        log_xy: Tensor,
        log_yx: Tensor,
    },
    Project {
        x: Var,
        kappa: f64,
    },
    ProjectTangent {
        x: Var,
        v: Var,
        kappa: f64,
    },
}

impl GeoOp {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            GeoOp::ExpOrigin { .. } => "exp_origin",
            GeoOp::LogOrigin { .. } => "log_origin",
            GeoOp::ExpMap { .. } => "exp_map",
            GeoOp::LogMap { .. } => "log_map",
            GeoOp::DistSq { .. } => "dist_sq",
            GeoOp::Project { .. } => "project",
            GeoOp::ProjectTangent { .. } => "project_tangent",
        }
    }

    pub(crate) fn vjp(&self, tape: &Tape, out: &Tensor, g: &Tensor) -> Vec<(Var, Tensor)> {
        match self {
            GeoOp::ExpOrigin { a, kappa, coef } => {
                let at = tape.value(*a);
                if *kappa == 0.0 {
                    return vec![(*a, g.clone())];
                }
                let s = kappa.abs().sqrt();
                let mut ga = Tensor::zeros(at.rows(), at.cols());
                for (r, &[_, a_coef, b_coef]) in coef.iter().enumerate() {
                    let ar = at.row(r);
                    let (g0, gs) = g.row(r).split_first().expect("ambient row");
                    let along = b_coef * dot(gs, ar) - kappa / s * a_coef * g0;
                    for ((o, gi), ai) in ga.row_mut(r).iter_mut().zip(gs).zip(ar) {
                        *o = a_coef * gi + along * ai;
                    }
                }
                vec![(*a, ga)]
            }
            GeoOp::LogOrigin { p, kappa, coef } => {
                let pt = tape.value(*p);
                if *kappa == 0.0 {
                    return vec![(*p, g.clone())];
                }
                let s = kappa.abs().sqrt();
                let mut gp = Tensor::zeros(pt.rows(), pt.cols());
                for (r, &[phi, dphi]) in coef.iter().enumerate() {
                    let pr = &pt.row(r)[1..];
                    let gr = g.row(r);
                    let row = gp.row_mut(r);
                    row[0] = s * dphi * dot(gr, pr);
                    for (o, gi) in row[1..].iter_mut().zip(gr) {
                        *o = phi * gi;
                    }
                }
                vec![(*p, gp)]
            }
            GeoOp::ExpMap { x, t, kappa, coef } => {
                if *kappa == 0.0 {
                    return vec![(*x, g.clone()), (*t, g.clone())];
                }
                let (xt, tt) = (tape.value(*x), tape.value(*t));
                let mut gx = Tensor::zeros(xt.rows(), xt.cols());
                let mut gt = Tensor::zeros(tt.rows(), tt.cols());
                for (r, &[c, a, b]) in coef.iter().enumerate() {
                    let (xr, tr, gr) = (xt.row(r), tt.row(r), g.row(r));
                    let along = -kappa * a * dot(gr, xr) + b * dot(gr, tr);
                    for (o, gi) in gx.row_mut(r).iter_mut().zip(gr) {
                        *o = c * gi;
                    }
                    let row = gt.row_mut(r);
                    for ((o, gi), ti) in row.iter_mut().zip(gr).zip(tr) {
                        *o = a * gi + along * ti;
                    }
                    if *kappa < 0.0 {
                        row[0] -= 2.0 * along * tr[0];
                    }
                }
                vec![(*x, gx), (*t, gt)]
            }
            GeoOp::LogMap { x, y, kappa, coef } => {
                if *kappa == 0.0 {
                    return vec![(*x, g.scaled(-1.0)), (*y, g.clone())];
                }
                let (xt, yt) = (tape.value(*x), tape.value(*y));
                let mut gx = Tensor::zeros(xt.rows(), xt.cols());
                let mut gy = Tensor::zeros(yt.rows(), yt.cols());
                for (r, &[phi, dphi, z]) in coef.iter().enumerate() {
                    let (xr, yr, gr) = (xt.row(r), yt.row(r), g.row(r));
                    // out = phi(z) u with u = out / phi; recover g.u from the output.
                    let g_u = dot(gr, out.row(r)) / phi;
                    let k = kappa * (dphi * g_u - phi * dot(gr, xr));
                    for ((o, gi), yi) in gx.row_mut(r).iter_mut().zip(gr).zip(yr) {
                        *o = -phi * z * gi + k * yi;
                    }
                    for ((o, gi), xi) in gy.row_mut(r).iter_mut().zip(gr).zip(xr) {
                        *o = phi * gi + k * xi;
                    }
                    if *kappa < 0.0 {
                        gx.row_mut(r)[0] -= 2.0 * k * yr[0];
                        gy.row_mut(r)[0] -= 2.0 * k * xr[0];
                    }
                }
                vec![(*x, gx), (*y, gy)]
            }
            GeoOp::DistSq {
                x,
                y,
                kappa,
                log_xy,
                log_yx,
            } => {
                let mut gx = log_xy.clone();
                let mut gy = log_yx.clone();
                for r in 0..gx.rows() {
                    let s = -2.0 * g.get(r, 0);
                    gx.row_mut(r).iter_mut().for_each(|v| *v *= s);
                    gy.row_mut(r).iter_mut().for_each(|v| *v *= s);
                    kernels::metric_flip_in_place(gx.row_mut(r), *kappa);
                    kernels::metric_flip_in_place(gy.row_mut(r), *kappa);
                }
                vec![(*x, gx), (*y, gy)]
            }
            GeoOp::Project { x, kappa } => {
                let xt = tape.value(*x);
                if *kappa == 0.0 {
                    return vec![(*x, g.clone())];
                }
                let mut gx = Tensor::zeros(xt.rows(), xt.cols());
                for r in 0..xt.rows() {
                    let (xr, gr, or) = (xt.row(r), g.row(r), out.row(r));
                    let row = gx.row_mut(r);
                    if *kappa > 0.0 {
                        let len = dot(xr, xr).sqrt();
                        let scale = 1.0 / (kappa.sqrt() * len);
                        let radial = dot(xr, gr) / len;
                        for ((o, gi), xi) in row.iter_mut().zip(gr).zip(xr) {
                            *o = scale * (gi - radial * xi / len);
                        }
                    } else {
                        row[0] = 0.0;
                        let w = gr[0] / or[0];
                        for ((o, gi), xi) in row[1..].iter_mut().zip(&gr[1..]).zip(&xr[1..]) {
                            *o = gi + w * xi;
                        }
                    }
                }
                vec![(*x, gx)]
            }
            GeoOp::ProjectTangent { x, v, kappa } => {
                let (xt, vt) = (tape.value(*x), tape.value(*v));
                if *kappa == 0.0 {
                    return vec![(*v, g.clone())];
                }
                let mut gx = Tensor::zeros(xt.rows(), xt.cols());
                let mut gv = Tensor::zeros(vt.rows(), vt.cols());
                for r in 0..xt.rows() {
                    let (xr, vr, gr) = (xt.row(r), vt.row(r), g.row(r));
                    let c = kappa * kernels::inner(xr, vr, *kappa);
                    let gdx = kappa * dot(gr, xr);
                    for ((o, gi), vi) in gx.row_mut(r).iter_mut().zip(gr).zip(vr) {
                        *o = -c * gi - gdx * vi;
                    }
                    for ((o, gi), xi) in gv.row_mut(r).iter_mut().zip(gr).zip(xr) {
                        *o = gi - gdx * xi;
                    }
                    if *kappa < 0.0 {
                        gx.row_mut(r)[0] += 2.0 * gdx * vr[0];
                        gv.row_mut(r)[0] += 2.0 * gdx * xr[0];
                    }
                }
                vec![(*x, gx), (*v, gv)]
            }
        }
    }
}

fn ambient(kappa: f64, d: usize) -> usize {
    if kappa == 0.0 {
        d
    } else {
        d + 1
    }
}

fn check_rows(tape: &Tape, a: Var, b: Var, what: &str) -> Result<(), GeometryError> {
    if tape.shape(a) != tape.shape(b) {
        return Err(GeometryError::Shape(format!(
            "{what}: operand shapes {:?} and {:?} differ",
            tape.shape(a),
            tape.shape(b)
        )));
    }
    Ok(())
}

fn check_ambient(tape: &Tape, p: Var, kappa: f64, what: &str) -> Result<(), GeometryError> {
    let cols = tape.shape(p).1;
    if kappa != 0.0 && cols < 2 {
        return Err(GeometryError::Shape(format!(
            "{what}: curved points need at least 2 ambient coordinates, got {cols}"
        )));
    }
    Ok(())
}

impl Tape {
    /// `exp_o([0, a])` row-wise: `n x d` tangent coordinates to `n x ambient` points.
    pub fn exp_origin(&mut self, a: Var, kappa: f64) -> Var {
        let at = self.value(a);
        let amb = ambient(kappa, at.cols());
        let mut out = Tensor::zeros(at.rows(), amb);
        let mut coef = Vec::with_capacity(at.rows());
        for r in 0..at.rows() {
            let ar = at.row(r);
            kernels::exp_origin(ar, kappa, out.row_mut(r));
            let n = dot(ar, ar).sqrt();
            coef.push([
                kernels::trig(n, kappa).0,
                kernels::sin_ratio(n, kappa),
                kappa * kernels::sin_ratio_slope(n, kappa),
            ]);
        }
        self.push(Op::Geometry(GeoOp::ExpOrigin { a, kappa, coef }), out)
    }

    /// Spatial part of `log_o(p)` row-wise: `n x ambient` to `n x d`.
    pub fn log_origin(&mut self, p: Var, kappa: f64) -> Result<Var, GeometryError> {
        check_ambient(self, p, kappa, "log_origin")?;
        let pt = self.value(p);
        let d = if kappa == 0.0 {
            pt.cols()
        } else {
            pt.cols() - 1
        };
        let mut out = Tensor::zeros(pt.rows(), d);
        let mut coef = Vec::with_capacity(pt.rows());
        for r in 0..pt.rows() {
            let pr = pt.row(r);
            kernels::log_origin(pr, kappa, out.row_mut(r))?;
            if kappa != 0.0 {
                let (_, dist) = kernels::origin_parts(pr, kappa)?;
                coef.push(log_coefficients(dist, kappa));
            }
        }
        Ok(self.push(Op::Geometry(GeoOp::LogOrigin { p, kappa, coef }), out))
    }

    /// `exp_x(t)` row-wise.
    pub fn exp_map(&mut self, x: Var, t: Var, kappa: f64) -> Result<Var, GeometryError> {
        check_rows(self, x, t, "exp_map")?;
        check_ambient(self, x, kappa, "exp_map")?;
        let (xt, tt) = (self.value(x), self.value(t));
        let mut out = Tensor::zeros(xt.rows(), xt.cols());
        let mut coef = Vec::with_capacity(xt.rows());
        for r in 0..xt.rows() {
            let tr = tt.row(r);
            kernels::exp_map(xt.row(r), tr, kappa, out.row_mut(r));
            let n = kernels::tangent_norm(tr, kappa);
            coef.push([
                kernels::trig(n, kappa).0,
                kernels::sin_ratio(n, kappa),
                kappa * kernels::sin_ratio_slope(n, kappa),
            ]);
        }
        Ok(self.push(Op::Geometry(GeoOp::ExpMap { x, t, kappa, coef }), out))
    }

    /// `log_x(y)` row-wise.
    pub fn log_map(&mut self, x: Var, y: Var, kappa: f64) -> Result<Var, GeometryError> {
        check_rows(self, x, y, "log_map")?;
        check_ambient(self, x, kappa, "log_map")?;
        let (xt, yt) = (self.value(x), self.value(y));
        let mut out = Tensor::zeros(xt.rows(), xt.cols());
        let mut coef = Vec::with_capacity(xt.rows());
        for r in 0..xt.rows() {
            let (xr, yr) = (xt.row(r), yt.row(r));
            kernels::log_map(xr, yr, kappa, out.row_mut(r)).map_err(|e| match e {
                GeometryError::Singular(msg) => GeometryError::Singular(format!("{msg} (row {r})")),
                other => other,
            })?;
            if kappa != 0.0 {
                let parts = kernels::log_parts(xr, yr, kappa)?;
                let [phi, dphi] = log_coefficients(parts.d, kappa);
                coef.push([phi, dphi, parts.z]);
            }
        }
        Ok(self.push(Op::Geometry(GeoOp::LogMap { x, y, kappa, coef }), out))
    }

    /// Squared geodesic distance per row, `n x 1`.
    pub fn dist_sq(&mut self, x: Var, y: Var, kappa: f64) -> Result<Var, GeometryError> {
        check_rows(self, x, y, "dist_sq")?;
        check_ambient(self, x, kappa, "dist_sq")?;
        let (xt, yt) = (self.value(x), self.value(y));
        let (rows, cols) = xt.shape();
        let mut out = Tensor::zeros(rows, 1);
        let mut log_xy = Tensor::zeros(rows, cols);
        let mut log_yx = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let (xr, yr) = (xt.row(r), yt.row(r));
            let d = kernels::distance(xr, yr, kappa)?;
            out.set(r, 0, d * d);
            if xr != yr {
                kernels::log_map(xr, yr, kappa, log_xy.row_mut(r))?;
                kernels::log_map(yr, xr, kappa, log_yx.row_mut(r))?;
            }
        }
        Ok(self.push(
            Op::Geometry(GeoOp::DistSq {
                x,
                y,
                kappa,
                log_xy,
                log_yx,
            }),
            out,
        ))
    }

    /// Row-wise retraction onto the manifold.
    pub fn project(&mut self, x: Var, kappa: f64) -> Result<Var, GeometryError> {
        check_ambient(self, x, kappa, "project")?;
        let xt = self.value(x);
        let mut out = Tensor::zeros(xt.rows(), xt.cols());
        for r in 0..xt.rows() {
            kernels::project(xt.row(r), kappa, out.row_mut(r))?;
        }
        Ok(self.push(Op::Geometry(GeoOp::Project { x, kappa }), out))
    }
}

impl Tape {
    /// `v - kappa <x, v> x` row-wise: removes the component of `v` normal to the
    /// manifold at `x`.
    pub fn project_tangent(&mut self, x: Var, v: Var, kappa: f64) -> Result<Var, GeometryError> {
        check_rows(self, x, v, "project_tangent")?;
        let (xt, vt) = (self.value(x), self.value(v));
        let mut out = Tensor::zeros(xt.rows(), xt.cols());
        for r in 0..xt.rows() {
            kernels::project_tangent(xt.row(r), vt.row(r), kappa, out.row_mut(r));
        }
        Ok(self.push(Op::Geometry(GeoOp::ProjectTangent { x, v, kappa }), out))
    }
}

/// `[phi, dphi/dz]` for `phi = d / sin_k(d)` as a function of `z = cos_k(d)`.
fn log_coefficients(d: f64, kappa: f64) -> [f64; 2] {
    let a = kernels::sin_ratio(d, kappa);
    [1.0 / a, kernels::sin_ratio_slope(d, kappa) / (a * a * a)]
}
