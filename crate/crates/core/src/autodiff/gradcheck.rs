use super::{Tape, Tensor, Var};
use crate::error::Result;

/// Outcome of a finite-difference gradient check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates whose perturbation crosses a ReLU kink.
    pub skipped: usize,
}

/// Compares reverse-mode gradients of `f` with central differences of step
/// `step` on every coordinate of `params`.
///
/// `f` receives a fresh tape and the parameter leaves and must return a
/// scalar; it has to be deterministic across calls (fixed dropout masks).
pub fn grad_check<F>(f: F, params: &[Tensor], step: f64) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |ps: &[Tensor]| -> Result<(f64, Vec<bool>)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.leaf(p.clone())).collect();
        let loss = f(&mut tape, &vars)?;
        Ok((tape.value(loss).item(), tape.activation_pattern()))
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;
    let base_pattern = tape.activation_pattern();

    let mut report = GradCheck {
        max_rel_error: 0.0,
        checked: 0,
        skipped: 0,
    };
    let mut work: Vec<Tensor> = params.to_vec();
    for (p, var) in vars.iter().enumerate() {
        let analytic = grads.wrt(*var);
        for k in 0..params[p].len() {
            let x0 = params[p].data()[k];
            work[p].data_mut()[k] = x0 + step;
            let (fp, pat_p) = eval(&work)?;
            work[p].data_mut()[k] = x0 - step;
            let (fm, pat_m) = eval(&work)?;
            work[p].data_mut()[k] = x0;
            if pat_p != base_pattern || pat_m != base_pattern {
                report.skipped += 1;
                continue;
            }
            let numeric = (fp - fm) / (2.0 * step);
            let a = analytic.data()[k];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            report.max_rel_error = report.max_rel_error.max(err);
            report.checked += 1;
        }
    }
    Ok(report)
}
