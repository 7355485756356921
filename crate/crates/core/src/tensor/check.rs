//! Central finite-difference gradient checking.
//!
//! The numeric side only ever evaluates forward passes, so it is independent
//! of every hand-written backward rule it is compared against.

use super::{Tape, Tensor, Var};
use crate::error::Result;

/// Worst discrepancy found by [`check_gradients`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradReport {
    pub max_rel_err: f64,
    pub analytic: f64,
    pub numeric: f64,
    /// `(input, element)` of the worst entry.
    pub at: (usize, usize),
    pub checked: usize,
}

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compare the tape gradient of the scalar built by `f` against central
/// differences with step `h` for every element of every input.
pub fn check_gradients<F>(inputs: &[Tensor], h: f64, floor: f64, f: F) -> Result<GradReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.constant(x.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).data()[0])
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.leaf(x.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let mut report = GradReport {
        max_rel_err: 0.0,
        analytic: 0.0,
        numeric: 0.0,
        at: (0, 0),
        checked: 0,
    };
    let mut xs = inputs.to_vec();
    for (i, &v) in vars.iter().enumerate() {
        let zeros = vec![0.0; inputs[i].len()];
        let analytic = grads.wrt(v).unwrap_or(&zeros).to_vec();
        for j in 0..inputs[i].len() {
            let orig = xs[i].data()[j];
            xs[i].data_mut()[j] = orig + h;
            let up = eval(&xs)?;
            xs[i].data_mut()[j] = orig - h;
            let down = eval(&xs)?;
            xs[i].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * h);
            let e = rel_err(analytic[j], numeric, floor);
            report.checked += 1;
            if e > report.max_rel_err {
                report = GradReport {
                    max_rel_err: e,
                    analytic: analytic[j],
                    numeric,
                    at: (i, j),
                    checked: report.checked,
                };
            }
        }
    }
    Ok(report)
}
