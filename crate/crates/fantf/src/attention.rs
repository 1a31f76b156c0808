//! Multi-head self-attention over series tokens with a fuzz term injected
//! into the score matrix.
//!
//! The computation per layer, for token matrix `s` of shape `[B, N, D]`:
//! projections `q = s W_q`, `k = s W_k`, `v = s W_v` (no biases), head split
//! into `[B, h, N, d_k]` by slicing `D` into contiguous chunks, scores
//! `q k^T / sqrt(d_k)` plus the fuzz term, an optional causal mask, row
//! softmax, dropout on the weights (training only), the weighted sum with
//! `v`, head concatenation and the output projection `W_o`.
//!
//! Noise is added to the scores before masking and softmax, so the
//! perturbation is renormalized by the softmax like any other score.

use crate::error::{FantfError, Result};
use crate::fuzz::{fuzz_term, FuzzinessMode};
use crate::rng::RngState;
use crate::tensor::{Tape, Tensor};

/// Initial value of the learnable noise gain `delta`.
pub const DELTA_INIT: f64 = 0.1;

#[derive(Debug, Clone)]
pub struct AttentionConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub d_k: usize,
    pub dropout_p: f64,
    pub causal: bool,
    pub fuzziness: FuzzinessMode,
}

impl AttentionConfig {
    pub fn new(
        d_model: usize,
        n_heads: usize,
        dropout_p: f64,
        causal: bool,
        fuzziness: FuzzinessMode,
    ) -> Result<Self> {
        if n_heads == 0 || d_model == 0 || d_model % n_heads != 0 {
            return Err(FantfError::Parameter(format!(
                "attention: d_model {d_model} must be a positive multiple of n_heads {n_heads}"
            )));
        }
        if !(0.0..1.0).contains(&dropout_p) {
            return Err(FantfError::Parameter(format!(
                "attention: dropout_p must be in [0, 1), got {dropout_p}"
            )));
        }
        fuzziness.validate()?;
        Ok(AttentionConfig {
            d_model,
            n_heads,
            d_k: d_model / n_heads,
            dropout_p,
            causal,
            fuzziness,
        })
    }
}

/// One attention layer's parameters: the four projections and the noise gain.
/// `delta` is always present (it simply receives zero gradient in modes that
/// never use it), which keeps parameter lists identical across modes.
#[derive(Debug, Clone)]
pub struct FuzzyAttentionLayer {
    pub config: AttentionConfig,
    pub w_q: Tensor,
    pub w_k: Tensor,
    pub w_v: Tensor,
    pub w_o: Tensor,
    pub delta: Tensor,
}

pub struct AttentionOutput {
    /// `[B, N, D]` attended token matrix.
    pub output: Tensor,
    /// `[B, h, N, N]` post-softmax weights, before dropout, for inspection.
    pub weights: Tensor,
}

/// Xavier-uniform `[rows, cols]` parameter: entries drawn from
/// `U(-b, b)` with `b = sqrt(6 / (rows + cols))`.
pub(crate) fn xavier_uniform(rng: &mut RngState, rows: usize, cols: usize) -> Tensor {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data = rng.sample_uniform(&[rows, cols], -bound, bound);
    Tensor::param(&[rows, cols], data.data().to_vec()).expect("valid shape")
}

impl FuzzyAttentionLayer {
    /// Fresh layer with Xavier-uniform projections (draw order: W_q, W_k,
    /// W_v, W_o) and `delta = DELTA_INIT`.
    pub fn init(config: AttentionConfig, rng: &mut RngState) -> Self {
        let d = config.d_model;
        let w_q = xavier_uniform(rng, d, d);
        let w_k = xavier_uniform(rng, d, d);
        let w_v = xavier_uniform(rng, d, d);
        let w_o = xavier_uniform(rng, d, d);
        let delta = Tensor::param(&[1], vec![DELTA_INIT]).expect("scalar");
        FuzzyAttentionLayer { config, w_q, w_k, w_v, w_o, delta }
    }

    fn check_input(&self, s: &Tensor) -> Result<(usize, usize)> {
        if s.rank() != 3 || s.shape()[2] != self.config.d_model {
            return Err(FantfError::Dimension(format!(
                "attention: expected tokens [B, N, {}], got {:?}",
                self.config.d_model,
                s.shape()
            )));
        }
        Ok((s.shape()[0], s.shape()[1]))
    }

    /// Projects tokens to per-head query/key/value tensors `[B, h, N, d_k]`.
    pub fn project_qkv(&self, tape: &Tape, s: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
        let (b, n) = self.check_input(s)?;
        let (h, dk) = (self.config.n_heads, self.config.d_k);
        let split = |w: &Tensor| -> Result<Tensor> {
            let p = tape.linear(s, w, None)?;
            let p = tape.reshape(&p, &[b, n, h, dk])?;
            tape.permute(&p, &[0, 2, 1, 3])
        };
        Ok((split(&self.w_q)?, split(&self.w_k)?, split(&self.w_v)?))
    }

    /// Full attention pass; `weights` in the result are the pre-dropout
    /// softmax values.
    pub fn attend(
        &self,
        tape: &Tape,
        s: &Tensor,
        rng: &mut RngState,
        training: bool,
    ) -> Result<AttentionOutput> {
        let (b, n) = self.check_input(s)?;
        let (q, k, v) = self.project_qkv(tape, s)?;
        let mut scores = fuzzy_scores(
            tape,
            &q,
            &k,
            &self.delta,
            &self.config.fuzziness,
            rng,
            training,
        )?;
        if self.config.causal {
            scores = tape.apply_causal_mask(&scores)?;
        }
        let weights = tape.softmax_lastdim(&scores)?;
        let dropped = tape.dropout(&weights, self.config.dropout_p, rng, training)?;
        let ctx = tape.matmul(&dropped, &v)?; // [B, h, N, d_k]
        let merged = tape.reshape(
            &tape.permute(&ctx, &[0, 2, 1, 3])?,
            &[b, n, self.config.d_model],
        )?;
        let output = tape.linear(&merged, &self.w_o, None)?;
        Ok(AttentionOutput { output, weights })
    }
}

/// Scaled dot-product scores plus the fuzz term: `q k^T / sqrt(d_k)` with
/// the mode's perturbation added on top. With mode `None`, or the gaussian
/// mode outside training, the base scores are returned untouched.
pub fn fuzzy_scores(
    tape: &Tape,
    q: &Tensor,
    k: &Tensor,
    delta: &Tensor,
    mode: &FuzzinessMode,
    rng: &mut RngState,
    training: bool,
) -> Result<Tensor> {
    if q.shape() != k.shape() || q.rank() < 2 {
        return Err(FantfError::Dimension(format!(
            "fuzzy_scores: query/key shapes {:?} vs {:?}",
            q.shape(),
            k.shape()
        )));
    }
    let dk = *q.shape().last().unwrap() as f64;
    let kt = tape.transpose_last2(k)?;
    let base = tape.scale(&tape.matmul(q, &kt)?, 1.0 / dk.sqrt())?;
    match mode {
        FuzzinessMode::None => Ok(base),
        FuzzinessMode::LearnableDeltaGaussian { .. } if !training => Ok(base),
        _ => {
            let term = fuzz_term(tape, mode, delta, &base, rng, training)?;
            tape.add(&base, &term)
        }
    }
}
