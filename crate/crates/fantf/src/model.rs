//! The encoder model: token embedding, stacked attention blocks with
//! post-norm residuals and position-wise feed-forward nets, and a
//! task-specific head.
//!
//! Two token layouts are supported. In the default [`TokenMode::Variate`]
//! each series variate is one token — the embedding maps a variate's whole
//! lookback window to `d_model`, so attention mixes information *across
//! variates*. In [`TokenMode::Temporal`] each time step is one token — the
//! embedding maps the variate vector at a step to `d_model` and sinusoidal
//! position encodings are added, so attention mixes *across time*. The
//! causal flag masks future positions and is only meaningful in temporal
//! mode, where token order is time order.
//!
//! Each block computes `h' = LN(attention(x) + x)` followed by
//! `h = LN(ffn(h') + h')` where `ffn(z) = relu(z W1 + b1) W2 + b2` and the
//! layer normalization is plain standardization over the model dimension
//! (no learned gain/bias).

use crate::attention::{xavier_uniform, AttentionConfig, FuzzyAttentionLayer};
use crate::error::{FantfError, Result};
use crate::fuzz::FuzzinessMode;
use crate::rng::RngState;
use crate::tensor::{Tape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenMode {
    Variate,
    Temporal,
}

impl TokenMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            TokenMode::Variate => "variate",
            TokenMode::Temporal => "temporal",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "variate" => Ok(TokenMode::Variate),
            "temporal" => Ok(TokenMode::Temporal),
            _ => Err(FantfError::Config(format!(
                "unknown token mode '{s}' (expected variate or temporal)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Forecast,
    Classify,
    DetectAnomalies,
}

impl Task {
    pub fn as_str(&self) -> &'static str {
        match self {
            Task::Forecast => "forecast",
            Task::Classify => "classify",
            Task::DetectAnomalies => "detect_anomalies",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "forecast" => Ok(Task::Forecast),
            "classify" => Ok(Task::Classify),
            "detect_anomalies" => Ok(Task::DetectAnomalies),
            _ => Err(FantfError::Config(format!(
                "unknown task '{s}' (expected forecast, classify or detect_anomalies)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub n_variates: usize,
    pub lookback: usize,
    /// Forecast steps; ignored by the other tasks.
    pub horizon: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub depth: usize,
    pub d_ff: usize,
    pub dropout_p: f64,
    pub causal: bool,
    pub token_mode: TokenMode,
    pub task: Task,
    /// Number of classes; used by [`Task::Classify`] only.
    pub n_classes: usize,
    pub ln_eps: f64,
    pub fuzziness: FuzzinessMode,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_variates == 0 {
            return Err(FantfError::Parameter("model: n_variates must be >= 1".into()));
        }
        if self.lookback == 0 {
            return Err(FantfError::Parameter("model: lookback must be >= 1".into()));
        }
        if self.d_model < 2 {
            return Err(FantfError::Parameter(
                "model: d_model must be >= 2 (layer normalization needs at least two features)"
                    .into(),
            ));
        }
        if self.depth == 0 {
            return Err(FantfError::Parameter("model: depth must be >= 1".into()));
        }
        if self.d_ff == 0 {
            return Err(FantfError::Parameter("model: d_ff must be >= 1".into()));
        }
        if !(self.ln_eps > 0.0) {
            return Err(FantfError::Parameter(format!(
                "model: ln_eps must be > 0, got {}",
                self.ln_eps
            )));
        }
        match self.task {
            Task::Forecast => {
                if self.horizon == 0 {
                    return Err(FantfError::Parameter(
                        "model: horizon must be >= 1 for forecasting".into(),
                    ));
                }
            }
            Task::Classify => {
                if self.n_classes < 2 {
                    return Err(FantfError::Parameter(
                        "model: n_classes must be >= 2 for classification".into(),
                    ));
                }
            }
            Task::DetectAnomalies => {}
        }
        // delegates d_model/n_heads divisibility, dropout range and
        // fuzziness checks
        self.attention_config()?;
        Ok(())
    }

    fn attention_config(&self) -> Result<AttentionConfig> {
        AttentionConfig::new(
            self.d_model,
            self.n_heads,
            self.dropout_p,
            self.causal,
            self.fuzziness.clone(),
        )
    }

    /// Input dimension of the token embedding.
    fn embed_in(&self) -> usize {
        match self.token_mode {
            TokenMode::Variate => self.lookback,
            TokenMode::Temporal => self.n_variates,
        }
    }

    /// `(rows, cols)` of the head's weight matrix.
    fn head_dims(&self) -> (usize, usize) {
        match (self.task, self.token_mode) {
            (Task::Forecast, TokenMode::Variate) => (self.d_model, self.horizon),
            (Task::Forecast, TokenMode::Temporal) => (
                self.lookback * self.d_model,
                self.horizon * self.n_variates,
            ),
            (Task::Classify, _) => (self.d_model, self.n_classes),
            (Task::DetectAnomalies, TokenMode::Variate) => (self.d_model, self.lookback),
            (Task::DetectAnomalies, TokenMode::Temporal) => (self.d_model, self.n_variates),
        }
    }
}

/// One encoder block: fuzzy attention plus a position-wise feed-forward
/// net, each wrapped in a post-norm residual.
#[derive(Debug, Clone)]
pub struct EncoderBlock {
    pub attn: FuzzyAttentionLayer,
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

impl EncoderBlock {
    fn init(config: &ModelConfig, rng: &mut RngState) -> Result<Self> {
        let attn = FuzzyAttentionLayer::init(config.attention_config()?, rng);
        let (d, f) = (config.d_model, config.d_ff);
        Ok(EncoderBlock {
            attn,
            w1: xavier_uniform(rng, d, f),
            b1: Tensor::param(&[f], vec![0.0; f])?,
            w2: xavier_uniform(rng, f, d),
            b2: Tensor::param(&[d], vec![0.0; d])?,
        })
    }

    /// Returns the block output and the block's attention weights.
    fn forward(
        &self,
        tape: &Tape,
        x: &Tensor,
        rng: &mut RngState,
        training: bool,
        ln_eps: f64,
    ) -> Result<(Tensor, Tensor)> {
        let att = self.attn.attend(tape, x, rng, training)?;
        let h1 = tape.layer_norm_lastdim(&tape.add(&att.output, x)?, ln_eps)?;
        let f = tape.linear(&h1, &self.w1, Some(&self.b1))?;
        let f = tape.relu(&f)?;
        let f = tape.linear(&f, &self.w2, Some(&self.b2))?;
        let h2 = tape.layer_norm_lastdim(&tape.add(&f, &h1)?, ln_eps)?;
        Ok((h2, att.weights))
    }
}

#[derive(Debug)]
pub struct ModelForward {
    /// Task-shaped output: `[B, H, N]` forecasts, `[B, C]` logits or
    /// `[B, L, N]` reconstructions.
    pub output: Tensor,
    /// Per-block pre-dropout attention weights, `[B, h, tokens, tokens]`.
    pub attention_weights: Vec<Tensor>,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub embed_w: Tensor,
    pub embed_b: Tensor,
    pub blocks: Vec<EncoderBlock>,
    pub head_w: Tensor,
    pub head_b: Tensor,
    /// `[lookback, d_model]` sinusoidal position table (temporal mode only);
    /// deterministic from the config, never trained or checkpointed.
    pe: Option<Tensor>,
}

/// `pe[pos, j] = sin(pos * w_j)` for even `j`, `cos(pos * w_j)` for odd
/// `j`, with `w_j = 10000^(-floor(j/2)*2/d)`.
fn sinusoidal_table(l: usize, d: usize) -> Vec<f64> {
    let mut pe = vec![0.0; l * d];
    for pos in 0..l {
        for j in 0..d {
            let pair = (j / 2 * 2) as f64;
            let angle = pos as f64 / 10000f64.powf(pair / d as f64);
            pe[pos * d + j] = if j % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    pe
}

impl Model {
    /// Fresh model. Weight matrices are Xavier-uniform and drawn in a fixed
    /// order (embedding, then per block W_q, W_k, W_v, W_o, W1, W2, then
    /// the head); biases start at zero and every noise gain at
    /// [`DELTA_INIT`].
    pub fn init(config: ModelConfig, rng: &mut RngState) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let embed_in = config.embed_in();
        let embed_w = xavier_uniform(rng, embed_in, d);
        let embed_b = Tensor::param(&[d], vec![0.0; d])?;
        let mut blocks = Vec::with_capacity(config.depth);
        for _ in 0..config.depth {
            blocks.push(EncoderBlock::init(&config, rng)?);
        }
        let (hr, hc) = config.head_dims();
        let head_w = xavier_uniform(rng, hr, hc);
        let head_b = Tensor::param(&[hc], vec![0.0; hc])?;
        let pe = match config.token_mode {
            TokenMode::Temporal => Some(Tensor::new(
                &[config.lookback, d],
                sinusoidal_table(config.lookback, d),
            )?),
            TokenMode::Variate => None,
        };
        Ok(Model {
            config,
            embed_w,
            embed_b,
            blocks,
            head_w,
            head_b,
            pe,
        })
    }

    /// Total number of trainable scalars, in closed form.
    pub fn param_count(config: &ModelConfig) -> usize {
        let (d, f) = (config.d_model, config.d_ff);
        let embed = config.embed_in() * d + d;
        let block = 4 * d * d + 1 + d * f + f + f * d + d;
        let (hr, hc) = config.head_dims();
        embed + config.depth * block + hr * hc + hc
    }

    fn check_input(&self, x: &Tensor) -> Result<usize> {
        let c = &self.config;
        if x.rank() != 3 || x.shape()[1] != c.lookback || x.shape()[2] != c.n_variates {
            return Err(FantfError::Dimension(format!(
                "model: expected input [B, {}, {}], got {:?}",
                c.lookback,
                c.n_variates,
                x.shape()
            )));
        }
        Ok(x.shape()[0])
    }

    /// Maps an input window batch `[B, L, N]` to the token matrix
    /// `[B, tokens, d_model]`.
    pub fn embed(&self, tape: &Tape, x: &Tensor) -> Result<Tensor> {
        let b = self.check_input(x)?;
        match self.config.token_mode {
            TokenMode::Variate => {
                let xt = tape.permute(x, &[0, 2, 1])?; // [B, N, L]
                tape.linear(&xt, &self.embed_w, Some(&self.embed_b))
            }
            TokenMode::Temporal => {
                let e = tape.linear(x, &self.embed_w, Some(&self.embed_b))?; // [B, L, D]
                let table = self.pe.as_ref().expect("temporal mode has a position table");
                let mut tiled = Vec::with_capacity(b * table.len());
                for _ in 0..b {
                    tiled.extend_from_slice(table.data());
                }
                let pe = Tensor::new(e.shape(), tiled)?;
                tape.add(&e, &pe)
            }
        }
    }

    pub fn forward(
        &self,
        tape: &Tape,
        x: &Tensor,
        rng: &mut RngState,
        training: bool,
    ) -> Result<ModelForward> {
        let b = self.check_input(x)?;
        let c = &self.config;
        let mut h = self.embed(tape, x)?;
        let mut attention_weights = Vec::with_capacity(c.depth);
        for blk in &self.blocks {
            let (next, w) = blk.forward(tape, &h, rng, training, c.ln_eps)?;
            h = next;
            attention_weights.push(w);
        }
        let output = match (c.task, c.token_mode) {
            (Task::Forecast, TokenMode::Variate) => {
                let y = tape.linear(&h, &self.head_w, Some(&self.head_b))?; // [B, N, H]
                tape.permute(&y, &[0, 2, 1])? // [B, H, N]
            }
            (Task::Forecast, TokenMode::Temporal) => {
                let flat = tape.reshape(&h, &[b, c.lookback * c.d_model])?;
                let y = tape.linear(&flat, &self.head_w, Some(&self.head_b))?;
                tape.reshape(&y, &[b, c.horizon, c.n_variates])?
            }
            (Task::Classify, _) => {
                let pooled = tape.mean_axis(&h, 1)?; // [B, D]
                tape.linear(&pooled, &self.head_w, Some(&self.head_b))?
            }
            (Task::DetectAnomalies, TokenMode::Variate) => {
                let y = tape.linear(&h, &self.head_w, Some(&self.head_b))?; // [B, N, L]
                tape.permute(&y, &[0, 2, 1])? // [B, L, N]
            }
            (Task::DetectAnomalies, TokenMode::Temporal) => {
                tape.linear(&h, &self.head_w, Some(&self.head_b))? // [B, L, N]
            }
        };
        Ok(ModelForward {
            output,
            attention_weights,
        })
    }

    /// All parameters with their canonical names, in a fixed order shared
    /// by checkpoints and the optimizer.
    pub fn params(&self) -> Vec<(String, Tensor)> {
        let mut out = vec![
            ("embed.w".to_string(), self.embed_w.clone()),
            ("embed.b".to_string(), self.embed_b.clone()),
        ];
        for (i, blk) in self.blocks.iter().enumerate() {
            out.push((format!("block{i}.attn.w_q"), blk.attn.w_q.clone()));
            out.push((format!("block{i}.attn.w_k"), blk.attn.w_k.clone()));
            out.push((format!("block{i}.attn.w_v"), blk.attn.w_v.clone()));
            out.push((format!("block{i}.attn.w_o"), blk.attn.w_o.clone()));
            out.push((format!("block{i}.attn.delta"), blk.attn.delta.clone()));
            out.push((format!("block{i}.ffn.w1"), blk.w1.clone()));
            out.push((format!("block{i}.ffn.b1"), blk.b1.clone()));
            out.push((format!("block{i}.ffn.w2"), blk.w2.clone()));
            out.push((format!("block{i}.ffn.b2"), blk.b2.clone()));
        }
        out.push(("head.w".to_string(), self.head_w.clone()));
        out.push(("head.b".to_string(), self.head_b.clone()));
        out
    }

    /// Mutable view over the same parameters, in the same order as
    /// [`Model::params`].
    pub fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = vec![
            ("embed.w".to_string(), &mut self.embed_w),
            ("embed.b".to_string(), &mut self.embed_b),
        ];
        for (i, blk) in self.blocks.iter_mut().enumerate() {
            out.push((format!("block{i}.attn.w_q"), &mut blk.attn.w_q));
            out.push((format!("block{i}.attn.w_k"), &mut blk.attn.w_k));
            out.push((format!("block{i}.attn.w_v"), &mut blk.attn.w_v));
            out.push((format!("block{i}.attn.w_o"), &mut blk.attn.w_o));
            out.push((format!("block{i}.attn.delta"), &mut blk.attn.delta));
            out.push((format!("block{i}.ffn.w1"), &mut blk.w1));
            out.push((format!("block{i}.ffn.b1"), &mut blk.b1));
            out.push((format!("block{i}.ffn.w2"), &mut blk.w2));
            out.push((format!("block{i}.ffn.b2"), &mut blk.b2));
        }
        out.push(("head.w".to_string(), &mut self.head_w));
        out.push(("head.b".to_string(), &mut self.head_b));
        out
    }
}
