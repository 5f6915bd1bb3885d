use std::fmt::Display;

use super::{AutodiffError, Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct CoordCheck {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug, Default)]
pub struct FdReport {
    pub checked: Vec<CoordCheck>,
    /// Coordinates whose perturbation crossed a piecewise boundary or left the
    /// function's domain.
    pub boundary_skipped: Vec<usize>,
    pub max_rel_err: f64,
    pub passed: bool,
}

impl FdReport {
    pub fn worst(&self) -> Option<&CoordCheck> {
        self.checked
            .iter()
            .max_by(|a, b| a.rel_err.total_cmp(&b.rel_err))
    }
}

struct Eval {
    value: f64,
    signature: Vec<bool>,
}

fn evaluate<F, E>(f: &F, x: &Tensor) -> Result<(Eval, Tensor), AutodiffError>
where
    F: Fn(&mut Tape, Var) -> Result<Var, E>,
    E: Display,
{
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let y = f(&mut tape, xv).map_err(|e| AutodiffError::Evaluation(e.to_string()))?;
    if tape.shape(y) != (1, 1) {
        return Err(AutodiffError::Shape(format!(
            "checked function must return a scalar, got {:?}",
            tape.shape(y)
        )));
    }
    let value = tape.value(y).item();
    let grad = tape.backward(y)?.wrt_or_zeros(xv, x.shape());
    Ok((
        Eval {
            value,
            signature: tape.branch_signature().to_vec(),
        },
        grad,
    ))
}

fn evaluate_value<F, E>(f: &F, x: &Tensor) -> Option<Eval>
where
    F: Fn(&mut Tape, Var) -> Result<Var, E>,
    E: Display,
{
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let y = f(&mut tape, xv).ok()?;
    Some(Eval {
        value: tape.value(y).item(),
        signature: tape.branch_signature().to_vec(),
    })
}

/// Compares reverse-mode gradients of `f` at `x` with central differences.
///
/// Relative error per coordinate is `|g_ad - g_fd| / max(1, |g_ad|, |g_fd|)`.
/// `f` is evaluated twice at `x` first; any difference makes the check
/// invalid.
pub fn finite_diff_check<F, E>(
    f: F,
    x: &Tensor,
    eps: f64,
    tol: f64,
) -> Result<FdReport, AutodiffError>
where
    F: Fn(&mut Tape, Var) -> Result<Var, E>,
    E: Display,
{
    let all: Vec<usize> = (0..x.len()).collect();
    finite_diff_check_coords(f, x, &all, eps, tol)
}

/// [`finite_diff_check`] restricted to the flat indices in `coords`.
pub fn finite_diff_check_coords<F, E>(
    f: F,
    x: &Tensor,
    coords: &[usize],
    eps: f64,
    tol: f64,
) -> Result<FdReport, AutodiffError>
where
    F: Fn(&mut Tape, Var) -> Result<Var, E>,
    E: Display,
{
    let (base, grad) = evaluate(&f, x)?;
    let (again, _) = evaluate(&f, x)?;
    if base.value.to_bits() != again.value.to_bits() || base.signature != again.signature {
        return Err(AutodiffError::CheckInvalid(format!(
            "two evaluations at the same input disagree ({} vs {})",
            base.value, again.value
        )));
    }
    let mut report = FdReport {
        passed: true,
        ..FdReport::default()
    };
    for &i in coords {
        let mut plus = x.clone();
        plus.data_mut()[i] += eps;
        let mut minus = x.clone();
        minus.data_mut()[i] -= eps;
        let (Some(fp), Some(fm)) = (evaluate_value(&f, &plus), evaluate_value(&f, &minus)) else {
            report.boundary_skipped.push(i);
            continue;
        };
        if fp.signature != base.signature || fm.signature != base.signature {
            report.boundary_skipped.push(i);
            continue;
        }
        let numeric = (fp.value - fm.value) / (2.0 * eps);
        let analytic = grad.data()[i];
        let rel_err = (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs());
        report.max_rel_err = report.max_rel_err.max(rel_err);
        report.checked.push(CoordCheck {
            index: i,
            analytic,
            numeric,
            rel_err,
        });
    }
    report.passed = report.max_rel_err <= tol && report.max_rel_err.is_finite();
    Ok(report)
}
