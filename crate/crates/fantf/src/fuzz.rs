//! Fuzzy membership functions and the attention-score fuzz term.
//!
//! The production mode is [`FuzzinessMode::LearnableDeltaGaussian`]: during
//! training the score matrix receives an additive `delta * N(0, sigma^2)`
//! perturbation where `delta` is a learnable scalar gain and the noise tensor
//! is sampled fresh per forward pass but held constant through backward (the
//! pathwise estimator). Outside training — or with `delta == 0` — the term is
//! exactly zero and attention degenerates to the vanilla form.
//!
//! The remaining modes exist for ablations. They replace the random term
//! with a deterministic elementwise membership transform of the score matrix
//! itself: `scores + mu(scores)`, i.e. the bounded membership value of each
//! raw score is added back onto it. Membership outputs lie in [0, 1].

use crate::error::{FantfError, Result};
use crate::rng::RngState;
use crate::tensor::{Tape, Tensor};

/// How the attention score matrix is perturbed.
#[derive(Debug, Clone, PartialEq)]
pub enum FuzzinessMode {
    /// No perturbation: plain scaled dot-product attention.
    None,
    /// Additive `delta * N(0, sigma^2)` noise, `delta` learnable per layer.
    LearnableDeltaGaussian { sigma: f64 },
    /// Bell-shaped membership of each score, centred at `c`.
    GaussianMembership { c: f64, sigma: f64 },
    /// `scale * sigmoid(slope * x)` membership; `scale` in (0, 1].
    ScaledSigmoid { scale: f64, slope: f64 },
    /// `sigmoid((x - theta1) / theta2)` membership with tunable shift/slope.
    LearnableSigmoid { theta1: f64, theta2: f64 },
    /// Uniform density over [a, b] added as a constant plateau.
    Uniform { a: f64, b: f64 },
}

impl FuzzinessMode {
    pub fn validate(&self) -> Result<()> {
        match *self {
            FuzzinessMode::None => Ok(()),
            FuzzinessMode::LearnableDeltaGaussian { sigma }
            | FuzzinessMode::GaussianMembership { sigma, .. } => {
                if sigma > 0.0 {
                    Ok(())
                } else {
                    Err(FantfError::Parameter(format!(
                        "fuzziness: sigma must be > 0, got {sigma}"
                    )))
                }
            }
            FuzzinessMode::ScaledSigmoid { scale, slope } => {
                if !(scale > 0.0 && scale <= 1.0) {
                    Err(FantfError::Parameter(format!(
                        "fuzziness: scale must be in (0, 1], got {scale}"
                    )))
                } else if !slope.is_finite() {
                    Err(FantfError::Parameter("fuzziness: slope must be finite".into()))
                } else {
                    Ok(())
                }
            }
            FuzzinessMode::LearnableSigmoid { theta2, .. } => {
                if theta2 != 0.0 {
                    Ok(())
                } else {
                    Err(FantfError::Parameter(
                        "fuzziness: theta2 must be nonzero".into(),
                    ))
                }
            }
            FuzzinessMode::Uniform { a, b } => {
                if a < b {
                    Ok(())
                } else {
                    Err(FantfError::Parameter(format!(
                        "fuzziness: need a < b, got a={a}, b={b}"
                    )))
                }
            }
        }
    }

    pub fn is_learnable_delta(&self) -> bool {
        matches!(self, FuzzinessMode::LearnableDeltaGaussian { .. })
    }
}

/// Numerically stable logistic function.
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

// ---- scalar membership functions -----------------------------------------

/// Bell curve `exp(-(x - c)^2 / (2 sigma^2))`, peak 1 at `x == c`.
pub fn gaussian_membership(x: f64, c: f64, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(FantfError::Parameter(format!(
            "gaussian_membership: sigma must be > 0, got {sigma}"
        )));
    }
    let z = (x - c) / sigma;
    Ok((-0.5 * z * z).exp())
}

/// `sigmoid((x - theta1) / theta2)`: 0.5 at the shift point `theta1`, slope
/// controlled by `theta2` (which must be nonzero).
pub fn learnable_sigmoid_membership(x: f64, theta1: f64, theta2: f64) -> Result<f64> {
    if theta2 == 0.0 {
        return Err(FantfError::Parameter(
            "learnable_sigmoid_membership: theta2 must be nonzero".into(),
        ));
    }
    Ok(sigmoid((x - theta1) / theta2))
}

/// `scale * sigmoid(slope * x)` with `scale` in (0, 1].
pub fn scaled_sigmoid(x: f64, scale: f64, slope: f64) -> Result<f64> {
    if !(scale > 0.0 && scale <= 1.0) {
        return Err(FantfError::Parameter(format!(
            "scaled_sigmoid: scale must be in (0, 1], got {scale}"
        )));
    }
    Ok(scale * sigmoid(slope * x))
}

/// Uniform density: `1/(b - a)` for `x` in [a, b] (inclusive), else 0.
pub fn uniform_pdf(x: f64, a: f64, b: f64) -> Result<f64> {
    if !(a < b) {
        return Err(FantfError::Parameter(format!(
            "uniform_pdf: need a < b, got a={a}, b={b}"
        )));
    }
    Ok(if (a..=b).contains(&x) { 1.0 / (b - a) } else { 0.0 })
}

// ---- tape (differentiable) membership maps --------------------------------

/// Elementwise gaussian membership of `x` on the tape.
pub fn gaussian_membership_map(tape: &Tape, x: &Tensor, c: f64, sigma: f64) -> Result<Tensor> {
    if !(sigma > 0.0) {
        return Err(FantfError::Parameter(format!(
            "gaussian_membership_map: sigma must be > 0, got {sigma}"
        )));
    }
    let inv_var = 1.0 / (sigma * sigma);
    let y: Vec<f64> = x
        .data()
        .iter()
        .map(|&v| (-0.5 * (v - c) * (v - c) * inv_var).exp())
        .collect();
    let out = Tensor::from_parts(x.shape().to_vec(), y, false);
    let (xc, yc) = (x.clone(), out.clone());
    Ok(tape.record(
        &[x],
        out,
        Box::new(move |g| {
            let dx = g
                .iter()
                .zip(xc.data())
                .zip(yc.data())
                .map(|((g, x), y)| g * y * (-(x - c) * inv_var))
                .collect();
            vec![dx]
        }),
    ))
}

/// Elementwise `scale * sigmoid(slope * x)` on the tape.
pub fn scaled_sigmoid_map(tape: &Tape, x: &Tensor, scale: f64, slope: f64) -> Result<Tensor> {
    if !(scale > 0.0 && scale <= 1.0) {
        return Err(FantfError::Parameter(format!(
            "scaled_sigmoid_map: scale must be in (0, 1], got {scale}"
        )));
    }
    let s: Vec<f64> = x.data().iter().map(|&v| sigmoid(slope * v)).collect();
    let y: Vec<f64> = s.iter().map(|&sv| scale * sv).collect();
    let out = Tensor::from_parts(x.shape().to_vec(), y, false);
    Ok(tape.record(
        &[x],
        out,
        Box::new(move |g| {
            let dx = g
                .iter()
                .zip(&s)
                .map(|(g, &sv)| g * scale * slope * sv * (1.0 - sv))
                .collect();
            vec![dx]
        }),
    ))
}

/// Elementwise `sigmoid((x - theta1) / theta2)` where `theta1` and `theta2`
/// are single-element tensors; differentiable in `x` and both thetas.
pub fn sigmoid_membership_map(
    tape: &Tape,
    x: &Tensor,
    theta1: &Tensor,
    theta2: &Tensor,
) -> Result<Tensor> {
    if theta1.len() != 1 || theta2.len() != 1 {
        return Err(FantfError::Dimension(format!(
            "sigmoid_membership_map: thetas must be single elements, got {:?} and {:?}",
            theta1.shape(),
            theta2.shape()
        )));
    }
    let t1 = theta1.data()[0];
    let t2 = theta2.data()[0];
    if t2 == 0.0 {
        return Err(FantfError::Parameter(
            "sigmoid_membership_map: theta2 must be nonzero".into(),
        ));
    }
    let z: Vec<f64> = x.data().iter().map(|&v| (v - t1) / t2).collect();
    let s: Vec<f64> = z.iter().map(|&zv| sigmoid(zv)).collect();
    let out = Tensor::from_parts(x.shape().to_vec(), s.clone(), false);
    Ok(tape.record(
        &[x, theta1, theta2],
        out,
        Box::new(move |g| {
            // ds/dz = s(1-s); dz/dx = 1/t2; dz/dt1 = -1/t2; dz/dt2 = -z/t2
            let mut dt1 = 0.0;
            let mut dt2 = 0.0;
            let mut dx = vec![0.0; g.len()];
            for (i, (&gv, &sv)) in g.iter().zip(&s).enumerate() {
                let local = gv * sv * (1.0 - sv);
                dx[i] = local / t2;
                dt1 -= local / t2;
                dt2 -= local * z[i] / t2;
            }
            vec![dx, vec![dt1], vec![dt2]]
        }),
    ))
}

/// Elementwise uniform density of `x` over [a, b]. Piecewise constant, so
/// the derivative w.r.t. `x` is zero almost everywhere (and taken as zero at
/// the jump points).
pub fn uniform_pdf_map(tape: &Tape, x: &Tensor, a: f64, b: f64) -> Result<Tensor> {
    if !(a < b) {
        return Err(FantfError::Parameter(format!(
            "uniform_pdf_map: need a < b, got a={a}, b={b}"
        )));
    }
    let h = 1.0 / (b - a);
    let y: Vec<f64> = x
        .data()
        .iter()
        .map(|&v| if (a..=b).contains(&v) { h } else { 0.0 })
        .collect();
    let out = Tensor::from_parts(x.shape().to_vec(), y, false);
    Ok(tape.record(
        &[x],
        out,
        Box::new(move |g| vec![vec![0.0; g.len()]]),
    ))
}

// ---- the attention fuzz term ----------------------------------------------

/// Builds the additive term for the attention score matrix `base_scores`.
///
/// - `None` -> zero tensor;
/// - `LearnableDeltaGaussian` -> `delta * N(0, sigma^2)` when training, zero
///   otherwise; the noise tensor is a constant on the tape so the gradient
///   w.r.t. `delta` is `sum(noise * upstream)`;
/// - membership modes -> the elementwise membership transform of the scores
///   themselves (deterministic, applied in training and inference alike).
pub fn fuzz_term(
    tape: &Tape,
    mode: &FuzzinessMode,
    delta: &Tensor,
    base_scores: &Tensor,
    rng: &mut RngState,
    training: bool,
) -> Result<Tensor> {
    mode.validate()?;
    match *mode {
        FuzzinessMode::None => Ok(Tensor::zeros(base_scores.shape())),
        FuzzinessMode::LearnableDeltaGaussian { sigma } => {
            if !training {
                return Ok(Tensor::zeros(base_scores.shape()));
            }
            let noise = rng.sample_gaussian(base_scores.shape(), 0.0, sigma);
            tape.scale_by_scalar(&noise, delta)
        }
        FuzzinessMode::GaussianMembership { c, sigma } => {
            gaussian_membership_map(tape, base_scores, c, sigma)
        }
        FuzzinessMode::ScaledSigmoid { scale, slope } => {
            scaled_sigmoid_map(tape, base_scores, scale, slope)
        }
        FuzzinessMode::LearnableSigmoid { theta1, theta2 } => {
            let t1 = Tensor::scalar(theta1);
            let t2 = Tensor::scalar(theta2);
            sigmoid_membership_map(tape, base_scores, &t1, &t2)
        }
        FuzzinessMode::Uniform { a, b } => uniform_pdf_map(tape, base_scores, a, b),
    }
}
