//! Central finite-difference verification of analytic gradients.

use super::{with_no_grad, Tensor};
use crate::error::{Error, Result};

/// Compares the reverse-mode gradient of the scalar `f()` against central
/// finite differences at step `h`, for every element of every tensor in
/// `inputs`. Returns `max |analytic - fd| / max(1, |fd|)` over all elements.
///
/// `f` must rebuild its computation from the given input handles on every
/// call; the inputs are perturbed in place and restored afterwards.
pub fn grad_check(f: impl Fn() -> Result<Tensor>, inputs: &[&Tensor], h: f64) -> Result<f64> {
    let saved_flags: Vec<bool> = inputs.iter().map(|t| t.requires_grad()).collect();
    for t in inputs {
        t.set_requires_grad(true);
        t.zero_grad();
    }

    let run = || -> Result<f64> {
        let out = f()?;
        if out.numel() != 1 {
            return Err(Error::invalid(
                "grad_check",
                format!("f must be scalar-valued, got shape {:?}", out.shape()),
            ));
        }
        Ok(out.item())
    };

    let result = (|| -> Result<f64> {
        // One tracked pass for the analytic gradients.
        let out = f()?;
        if out.numel() != 1 {
            return Err(Error::invalid(
                "grad_check",
                format!("f must be scalar-valued, got shape {:?}", out.shape()),
            ));
        }
        out.backward()?;
        let analytic: Vec<Vec<f64>> = inputs
            .iter()
            .map(|t| t.grad().unwrap_or_else(|| vec![0.0; t.numel()]))
            .collect();

        let mut max_err = 0.0_f64;
        for (t, grads) in inputs.iter().zip(&analytic) {
            let base = t.data();
            for i in 0..base.len() {
                let mut bumped = base.clone();
                bumped[i] = base[i] + h;
                t.set_data(&bumped)?;
                let f_plus = with_no_grad(run)?;
                bumped[i] = base[i] - h;
                t.set_data(&bumped)?;
                let f_minus = with_no_grad(run)?;
                bumped[i] = base[i];
                t.set_data(&bumped)?;

                let fd = (f_plus - f_minus) / (2.0 * h);
                let err = (grads[i] - fd).abs() / fd.abs().max(1.0);
                if err > max_err {
                    max_err = err;
                }
            }
        }
        Ok(max_err)
    })();

    for (t, flag) in inputs.iter().zip(saved_flags) {
        t.zero_grad();
        t.set_requires_grad(flag);
    }
    result
}
