//! Central finite-difference gradient checking.
//!
//! The numerical side only ever evaluates forward values, so it is independent
//! of the backward rules it checks.

use ndarray::Array2;

use super::{Tape, Var};
use crate::error::Result;

/// Absolute difference below which an entry counts as agreeing regardless of
/// its relative error.
pub const ABS_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub entries: usize,
}

/// Builds the scalar function `f` on a fresh tape for the given parameter
/// values, then compares its reverse-mode gradient with central differences of
/// step `eps`.
pub fn check_gradients<F>(params: &[Array2<f64>], eps: f64, f: F) -> Result<GradReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Array2<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|p| tape.param(p.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.scalar(out))
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    tape.backward(out)?;

    let mut report = GradReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        entries: 0,
    };
    let mut work: Vec<Array2<f64>> = params.to_vec();
    for (k, var) in vars.iter().enumerate() {
        let analytic = tape
            .grad(*var)
            .cloned()
            .unwrap_or_else(|| Array2::zeros(params[k].raw_dim()));
        for idx in ndarray::indices(params[k].raw_dim()) {
            let orig = params[k][idx];
            work[k][idx] = orig + eps;
            let plus = eval(&work)?;
            work[k][idx] = orig - eps;
            let minus = eval(&work)?;
            work[k][idx] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[idx];
            let abs = (a - numeric).abs();
            let rel = if abs <= ABS_FLOOR {
                0.0
            } else {
                abs / a.abs().max(numeric.abs())
            };
            report.max_abs_error = report.max_abs_error.max(abs);
            report.max_rel_error = report.max_rel_error.max(rel);
            report.entries += 1;
        }
    }
    Ok(report)
}
