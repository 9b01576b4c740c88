use super::{Tape, Var};
use crate::error::Result;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub h: f64,
    /// Skip coordinates whose input value lies within this distance of zero
    /// (the kink of `|x|`).
    pub kink_margin: Option<f64>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            h: 1e-5,
            kink_margin: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Max over coordinates of `|analytic - numeric| / max(1, |analytic|)`.
    pub max_rel_error: f64,
    /// `(input, coordinate)` of the worst coordinate.
    pub worst: Option<(usize, usize)>,
    /// First coordinate where either side was NaN.
    pub nan_at: Option<(usize, usize)>,
    pub checked: usize,
    pub skipped: usize,
}

impl GradCheckReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.nan_at.is_none() && self.max_rel_error < tol
    }
}

/// Compares tape gradients of `f` at `x` against central finite differences.
pub fn grad_check<'a, F>(f: F, x: &[Tensor], opts: GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<'a>, &[Var]) -> Result<Var>,
{
    let analytic = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = x.iter().map(|t| tape.param(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        let grads = tape.backward(out)?;
        vars.iter().map(|v| grads.wrt(*v)).collect::<Vec<_>>()
    };
    let value = |inputs: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        match f(&mut tape, &vars) {
            Ok(out) => tape.scalar_value(out),
            Err(_) => f64::NAN,
        }
    };
    Ok(grad_check_fn(value, &analytic, x, opts))
}

/// Finite-difference harness for an arbitrary claimed gradient.
pub fn grad_check_fn<F>(value: F, analytic: &[Tensor], x: &[Tensor], opts: GradCheckOptions) -> GradCheckReport
where
    F: Fn(&[Tensor]) -> f64,
{
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        nan_at: None,
        checked: 0,
        skipped: 0,
    };
    let mut work: Vec<Tensor> = x.to_vec();
    for (i, grad) in analytic.iter().enumerate() {
        for j in 0..x[i].len() {
            let x0 = x[i].data()[j];
            if opts.kink_margin.is_some_and(|m| x0.abs() < m) {
                report.skipped += 1;
                continue;
            }
            work[i].data_mut()[j] = x0 + opts.h;
            let up = value(&work);
            work[i].data_mut()[j] = x0 - opts.h;
            let down = value(&work);
            work[i].data_mut()[j] = x0;

            let numeric = (up - down) / (2.0 * opts.h);
            let a = grad.data()[j];
            report.checked += 1;
            if numeric.is_nan() || a.is_nan() {
                report.nan_at.get_or_insert((i, j));
                continue;
            }
            let err = (a - numeric).abs() / a.abs().max(1.0);
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some((i, j));
            }
        }
    }
    report
}
