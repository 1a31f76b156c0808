//! Finite-difference verification of tape gradients.

use super::tape::Tape;
use super::Tensor;
use crate::error::{FantfError, Result};

/// Compares the tape gradient of `f` at `x` against central finite
/// differences and returns the largest relative error,
/// `|analytic - numeric| / max(1, |analytic|)`.
///
/// `f` must map a tensor to a scalar (single-element) tensor and must be a
/// deterministic function of its input — any randomness inside `f` has to be
/// re-seeded identically on every call, otherwise the difference quotient is
/// meaningless. The step `h` must lie in (1e-8, 1e-2).
pub fn grad_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&Tape, &Tensor) -> Result<Tensor>,
{
    if !(h > 1e-8 && h < 1e-2) {
        return Err(FantfError::Contract(format!(
            "grad_check: step {h} outside (1e-8, 1e-2)"
        )));
    }

    // Analytic gradient at x.
    let x0 = Tensor::param(x.shape(), x.data().to_vec())?;
    let tape = Tape::new();
    let y = f(&tape, &x0)?;
    if y.len() != 1 {
        return Err(FantfError::Contract(format!(
            "grad_check: f must return a scalar, got shape {:?}",
            y.shape()
        )));
    }
    if !y.data()[0].is_finite() {
        return Err(FantfError::Numeric("grad_check: f(x) is not finite".into()));
    }
    tape.backward(&y)?;
    let analytic = x0.grad().unwrap_or_else(|| vec![0.0; x0.len()]);

    let eval = |data: Vec<f64>| -> Result<f64> {
        let xi = Tensor::new(x.shape(), data)?;
        let tape = Tape::new();
        let y = f(&tape, &xi)?;
        let v = y.item()?;
        if !v.is_finite() {
            return Err(FantfError::Numeric(
                "grad_check: perturbed evaluation is not finite".into(),
            ));
        }
        Ok(v)
    };

    let mut max_rel = 0.0_f64;
    for i in 0..x.len() {
        let mut plus = x.data().to_vec();
        plus[i] += h;
        let mut minus = x.data().to_vec();
        minus[i] -= h;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * h);
        let rel = (analytic[i] - numeric).abs() / analytic[i].abs().max(1.0);
        max_rel = max_rel.max(rel);
    }
    Ok(max_rel)
}
