use std::time::Instant;

use geospike::manifold::{self, kernels, Curvature, ManifoldPoint};

use super::*;

pub const INVERSION_TOL: f64 = 1e-6;
pub const IDENTITY_TOL: f64 = 1e-8;
pub const SYMMETRY_TOL: f64 = 1e-9;
pub const TRIANGLE_TOL: f64 = 1e-7;
pub const NORM_DISTANCE_TOL: f64 = 1e-6;
pub const FLAT_TOL: f64 = 1e-4;
pub const FLAT_KAPPA: f64 = 1e-6;

#[derive(Debug, Default)]
pub struct GeometryReport {
    pub inversion: Worst,
    pub constraint: Worst,
    pub identity: Worst,
    pub symmetry: Worst,
    pub triangle: Worst,
    pub norm_distance: Worst,
    pub flat: Worst,
    pub seconds: f64,
}

impl GeometryReport {
    fn parts(&self) -> [(&'static str, &Worst); 7] {
        [
            ("inversion", &self.inversion),
            ("constraint", &self.constraint),
            ("identity", &self.identity),
            ("symmetry", &self.symmetry),
            ("triangle", &self.triangle),
            ("norm-distance", &self.norm_distance),
            ("flat-limit", &self.flat),
        ]
    }

    pub fn verdict(&self) -> Verdict {
        let failing: Vec<String> = self
            .parts()
            .iter()
            .filter(|(_, w)| !w.ok())
            .map(|(name, w)| format!("{name} at {:.2}x tol ({})", w.ratio, w.case))
            .collect();
        let worst = self
            .parts()
            .iter()
            .map(|(_, w)| w.ratio)
            .fold(0.0, f64::max);
        let passed = failing.is_empty() && self.seconds < 60.0;
        let detail = if failing.is_empty() {
            format!("worst error {worst:.2e}x tol, {:.1}s", self.seconds)
        } else {
            failing.join("; ")
        };
        Verdict::new(passed, detail)
    }
}

fn dist(x: &ManifoldPoint, y: &ManifoldPoint) -> f64 {
    manifold::geodesic_distance(x, y).unwrap()
}

fn tangent_diff_norm(a: &[f64], b: &[f64], kappa: f64) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    kernels::tangent_norm(&d, kappa)
}

/// Round trips, constraint preservation, metric axioms and norm/distance
/// agreement at one curvature and dimension.
pub fn check_space(kappa: f64, d: usize, samples: usize, seed: u64, r: &mut GeometryReport) {
    let mut rng = rng(seed);
    let k = Curvature::new(kappa).unwrap();
    let ctol = kernels::constraint_tolerance(kappa);
    let tag = |i: usize| format!("kappa {kappa}, d {d}, sample {i}");
    for i in 0..samples {
        let x = random_point(&mut rng, kappa, d);
        let t = random_tangent(&mut rng, &x, tangent_radius(kappa));
        let y = manifold::exp_map(&x, &t).unwrap();
        let back = manifold::log_map(&x, &y).unwrap();
        let tn = t.norm();
        r.inversion.record(
            tangent_diff_norm(back.coords(), t.coords(), kappa),
            INVERSION_TOL * (1.0 + tn),
            || tag(i),
        );
        r.norm_distance
            .record((dist(&x, &y) - tn).abs(), NORM_DISTANCE_TOL, || tag(i));
        for p in [&x, &y] {
            r.constraint
                .record(p.constraint_violation(), ctol, || tag(i));
        }
        let raw: Vec<f64> = y.coords().iter().map(|v| v * 1.3 + 1e-3).collect();
        let projected = manifold::project_to_manifold(&raw, k).unwrap();
        r.constraint
            .record(projected.constraint_violation(), ctol, || tag(i));

        let z = random_point(&mut rng, kappa, d);
        r.identity.record(dist(&x, &x), IDENTITY_TOL, || tag(i));
        r.identity.record(dist(&z, &z), IDENTITY_TOL, || tag(i));
        let (dxz, dzx) = (dist(&x, &z), dist(&z, &x));
        r.symmetry
            .record((dxz - dzx).abs(), SYMMETRY_TOL, || tag(i));
        let (dxy, dyz) = (dist(&x, &y), dist(&y, &z));
        if dxy < 0.0 || dxz < 0.0 || dyz < 0.0 {
            r.identity.record(f64::INFINITY, 1.0, || tag(i));
        }
        r.triangle
            .record((dxz - dxy - dyz).max(0.0), TRIANGLE_TOL, || tag(i));
        r.triangle
            .record((dxy - dxz - dyz).max(0.0), TRIANGLE_TOL, || tag(i));
    }
}

/// At nearly zero curvature the maps reduce to vector arithmetic.
pub fn check_flat_limit(kappa: f64, d: usize, samples: usize, seed: u64, r: &mut GeometryReport) {
    let mut rng = rng(seed);
    let k = Curvature::new(kappa).unwrap();
    let tag = |i: usize| format!("kappa {kappa:e}, d {d}, sample {i}");
    for i in 0..samples {
        let a = random_vector(&mut rng, d, 1.0);
        let b = random_vector(&mut rng, d, 1.0);
        let pa = manifold::exp_origin(&a, k);
        let pb = manifold::exp_origin(&b, k);
        let spatial_err = |p: &ManifoldPoint, want: &[f64]| {
            let got = &p.coords()[1..];
            norm(&got.iter().zip(want).map(|(g, w)| g - w).collect::<Vec<_>>())
        };
        r.flat.record(spatial_err(&pa, &a), FLAT_TOL, || tag(i));
        let la = manifold::log_origin(&pa).unwrap();
        let diff: Vec<f64> = la.iter().zip(&a).map(|(x, y)| x - y).collect();
        r.flat.record(norm(&diff), FLAT_TOL, || tag(i));

        let ab: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
        r.flat
            .record((dist(&pa, &pb) - norm(&ab)).abs(), FLAT_TOL, || tag(i));

        let mut lifted = vec![0.0];
        lifted.extend_from_slice(&b);
        let t = manifold::project_to_tangent(&pa, &lifted).unwrap();
        let moved = manifold::exp_map(&pa, &t).unwrap();
        let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        r.flat
            .record(spatial_err(&moved, &sum), FLAT_TOL, || tag(i));

        let v = manifold::log_map(&pa, &pb).unwrap();
        let ba: Vec<f64> = b.iter().zip(&a).map(|(x, y)| x - y).collect();
        let got = &v.coords()[1..];
        let err = norm(&got.iter().zip(&ba).map(|(g, w)| g - w).collect::<Vec<_>>());
        r.flat.record(err, FLAT_TOL, || tag(i));
    }
}

/// Every property over the full curvature and dimension grid.
pub fn geometry_suite(samples: usize) -> GeometryReport {
    let start = Instant::now();
    let mut report = GeometryReport::default();
    for (ki, &kappa) in KAPPAS.iter().enumerate() {
        for (di, &d) in DIMS.iter().enumerate() {
            check_space(kappa, d, samples, (ki * 10 + di) as u64, &mut report);
        }
    }
    for &kappa in &[FLAT_KAPPA, -FLAT_KAPPA] {
        for &d in &DIMS {
            check_flat_limit(kappa, d, samples, 100 + d as u64, &mut report);
        }
    }
    report.seconds = start.elapsed().as_secs_f64();
    report
}
