//! Central finite-difference gradient checking in `f64`.

use crate::error::Result;
use crate::{Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|, floor)`.
    pub max_rel_err: f64,
    /// (input index, element index, analytic, numeric) at the worst element.
    pub worst: Option<(usize, usize, f64, f64)>,
    pub checked: usize,
}

/// Compares tape gradients of `f` against central differences with step `h`.
/// `floor` bounds the denominator of the relative error from below so that
/// near-zero gradients are judged absolutely.
pub fn check_gradients<F>(inputs: &[Tensor<f64>], h: f64, floor: f64, f: F) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    let tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = f(&vars)?;
    tape.backward(loss)?;
    let analytic: Vec<Tensor<f64>> = vars.iter().map(|&v| tape.grad_or_zeros(v)).collect();

    let eval = |which: usize, elem: usize, delta: f64| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<_> = inputs
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let mut t = t.clone();
                if i == which {
                    t.data_mut()[elem] += delta;
                }
                tape.constant(t)
            })
            .collect();
        Ok(f(&vars)?.item())
    };

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: None,
        checked: 0,
    };
    for (i, input) in inputs.iter().enumerate() {
        for e in 0..input.numel() {
            let numeric = (eval(i, e, h)? - eval(i, e, -h)?) / (2.0 * h);
            let a = analytic[i].data()[e];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            report.checked += 1;
            if rel > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = report.max_rel_err.max(rel);
                report.worst = Some((i, e, a, numeric));
            }
        }
    }
    Ok(report)
}
