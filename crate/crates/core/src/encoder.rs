//! LSTM embedding model with optional cross-channel attention on the inputs
//! and self-attention over the hidden-state sequence.
//!
//! Pipeline: `[cross-channel attention] -> LSTM -> [projection H -> L] ->
//! [self-attention]`. The projection is omitted when `H == L`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Parameters, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Default scale of the cross-channel attention scores.
pub const DEFAULT_CA_SCALE_K: f64 = 60.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub hidden_size: usize,
    pub latent_size: usize,
    pub use_self_attention: bool,
    pub use_cross_attention: bool,
    /// Scores are divided by `sqrt(ca_scale_k)`.
    pub ca_scale_k: f64,
    /// Apply cross-channel attention within consecutive windows of this many
    /// samples instead of over whole columns.
    pub ca_window: Option<usize>,
    /// Add the self-attention output to its input instead of replacing it.
    pub residual_self_attention: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            hidden_size: 32,
            latent_size: 32,
            use_self_attention: true,
            use_cross_attention: false,
            ca_scale_k: DEFAULT_CA_SCALE_K,
            ca_window: None,
            residual_self_attention: false,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.hidden_size == 0 {
            errs.push("encoder.hidden_size: must be positive".into());
        }
        if self.latent_size == 0 {
            errs.push("encoder.latent_size: must be positive".into());
        }
        if !(self.ca_scale_k > 0.0) {
            errs.push(format!("encoder.ca_scale_k: {} must be positive", self.ca_scale_k));
        }
        if self.ca_window == Some(0) {
            errs.push("encoder.ca_window: must be positive".into());
        }
        errs
    }
}

/// Trainable weights of the embedding model.
///
/// `lstm_weight` stacks the four gate matrices `[W_i; W_f; W_o; W_g]`, each
/// `H x (D + H)` acting on `[x_t; h_{t-1}]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub input_dim: usize,
    pub config: EncoderConfig,
    pub lstm_weight: Tensor,
    pub lstm_bias: Tensor,
    pub projection: Option<Tensor>,
}

impl ModelParams {
    /// Uniform(−1/√H, 1/√H) weights, zero biases except +1 on the forget gate.
    pub fn init(input_dim: usize, config: EncoderConfig, seed: u64) -> Result<Self> {
        let errs = config.validate();
        if !errs.is_empty() {
            return Err(Error::Config(errs));
        }
        if input_dim == 0 {
            return Err(Error::config("input dimension must be positive"));
        }
        let h = config.hidden_size;
        let l = config.latent_size;
        let bound = 1.0 / (h as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut uniform = |r: usize, c: usize| {
            Matrix::from_fn(r, c, |_, _| rng.random_range(-bound..bound))
        };
        let lstm_weight = Tensor::param(uniform(4 * h, input_dim + h));
        let projection = (l != h).then(|| Tensor::param(uniform(l, h)));
        let mut bias = Matrix::zeros(1, 4 * h);
        for k in h..2 * h {
            bias.data_mut()[k] = 1.0;
        }
        Ok(Self {
            input_dim,
            config,
            lstm_weight,
            lstm_bias: Tensor::param(bias),
            projection,
        })
    }

    pub fn hidden_size(&self) -> usize {
        self.config.hidden_size
    }

    pub fn latent_size(&self) -> usize {
        self.config.latent_size
    }

    /// Places every parameter on `tape` as a leaf.
    pub fn bind(&self, tape: &mut Tape) -> ParamVars {
        ParamVars {
            lstm_weight: tape.leaf(&self.lstm_weight),
            lstm_bias: tape.leaf(&self.lstm_bias),
            projection: self.projection.as_ref().map(|p| tape.leaf(p)),
        }
    }

    /// Adds `scale` times the tape gradients of `vars` into the parameter
    /// gradient buffers.
    pub fn accumulate_grads(&mut self, tape: &Tape, vars: &ParamVars, scale: f64) -> Result<()> {
        if let Some(g) = tape.grad(vars.lstm_weight) {
            self.lstm_weight.accumulate_grad(g, scale)?;
        }
        if let Some(g) = tape.grad(vars.lstm_bias) {
            self.lstm_bias.accumulate_grad(g, scale)?;
        }
        if let (Some(p), Some(v)) = (self.projection.as_mut(), vars.projection) {
            if let Some(g) = tape.grad(v) {
                p.accumulate_grad(g, scale)?;
            }
        }
        Ok(())
    }
}

impl Parameters for ModelParams {
    fn named_params(&self) -> Vec<(&'static str, &Tensor)> {
        let mut out = vec![("lstm.weight", &self.lstm_weight), ("lstm.bias", &self.lstm_bias)];
        if let Some(p) = &self.projection {
            out.push(("projection", p));
        }
        out
    }

    fn named_params_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        let mut out = vec![
            ("lstm.weight", &mut self.lstm_weight),
            ("lstm.bias", &mut self.lstm_bias),
        ];
        if let Some(p) = &mut self.projection {
            out.push(("projection", p));
        }
        out
    }
}

/// Tape handles for a bound [`ModelParams`].
#[derive(Clone, Copy, Debug)]
pub struct ParamVars {
    pub lstm_weight: Var,
    pub lstm_bias: Var,
    pub projection: Option<Var>,
}

/// Per-timestamp embeddings of one patient.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSequence {
    pub patient_id: String,
    pub z: Matrix,
}

impl EmbeddingSequence {
    pub fn len(&self) -> usize {
        self.z.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.z.rows() == 0
    }
}

/// Scaled dot-product attention across the rows of `z`:
/// `z'_i = sum_j softmax_j(z_i . z_j / sqrt(scale)) z_j`.
pub fn self_attention(tape: &mut Tape, z: Var, scale: f64) -> Result<Var> {
    let zt = tape.transpose(z);
    let scores = tape.matmul(z, zt)?;
    let scores = tape.scale(scores, 1.0 / scale.sqrt());
    let weights = tape.row_softmax(scores);
    tape.matmul(weights, z)
}

/// Attention across the channels (columns) of `x`, each channel being a
/// column vector: `c'_i = sum_j softmax_j(c_i . c_j / sqrt(k)) c_j`.
pub fn cross_channel_attention(tape: &mut Tape, x: Var, k: f64) -> Result<Var> {
    let xt = tape.transpose(x);
    let scores = tape.matmul(xt, x)?;
    let scores = tape.scale(scores, 1.0 / k.sqrt());
    let weights = tape.row_softmax(scores);
    // column i of the output is sum_j w_ij c_j, i.e. X W^T
    let wt = tape.transpose(weights);
    tape.matmul(x, wt)
}

/// Cross-channel attention applied independently to consecutive row
/// windows of length `window` (the last one may be shorter).
pub fn windowed_cross_channel_attention(tape: &mut Tape, x: Var, k: f64, window: usize) -> Result<Var> {
    let n = tape.value(x).rows();
    let mut parts = Vec::with_capacity(n.div_ceil(window));
    let mut start = 0;
    while start < n {
        let end = (start + window).min(n);
        let chunk = tape.slice_rows(x, start, end)?;
        parts.push(cross_channel_attention(tape, chunk, k)?);
        start = end;
    }
    tape.concat_rows(&parts)
}

/// All LSTM hidden states `N x H` for input `x`.
pub fn lstm_forward(tape: &mut Tape, x: Var, vars: &ParamVars, tbptt: Option<usize>) -> Result<Var> {
    tape.lstm(x, vars.lstm_weight, vars.lstm_bias, tbptt)
}

/// The same recurrence as [`lstm_forward`], assembled step by step from
/// elementary tape primitives. Slow; used to cross-check the fused kernel.
pub fn lstm_forward_unfused(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
    let [n, d] = tape.value(x).shape();
    let g4 = tape.value(w).rows();
    let h = g4 / 4;
    let w_x = tape.slice_cols(w, 0, d)?;
    let w_h = tape.slice_cols(w, d, d + h)?;
    let w_xt = tape.transpose(w_x);
    let w_ht = tape.transpose(w_h);
    let mut h_prev: Option<Var> = None;
    let mut c_prev: Option<Var> = None;
    let mut outputs = Vec::with_capacity(n);
    for t in 0..n {
        let x_t = tape.slice_row(x, t)?;
        let mut pre = tape.matmul(x_t, w_xt)?;
        if let Some(hp) = h_prev {
            let rec = tape.matmul(hp, w_ht)?;
            pre = tape.add(pre, rec)?;
        }
        pre = tape.add(pre, b)?;
        let i_pre = tape.slice_cols(pre, 0, h)?;
        let f_pre = tape.slice_cols(pre, h, 2 * h)?;
        let o_pre = tape.slice_cols(pre, 2 * h, 3 * h)?;
        let g_pre = tape.slice_cols(pre, 3 * h, 4 * h)?;
        let i = tape.sigmoid(i_pre);
        let f = tape.sigmoid(f_pre);
        let o = tape.sigmoid(o_pre);
        let g = tape.tanh(g_pre);
        let ig = tape.mul(i, g)?;
        let c = match c_prev {
            Some(cp) => {
                let fc = tape.mul(f, cp)?;
                tape.add(fc, ig)?
            }
            None => ig,
        };
        let tc = tape.tanh(c);
        let h_t = tape.mul(o, tc)?;
        outputs.push(h_t);
        h_prev = Some(h_t);
        c_prev = Some(c);
    }
    tape.concat_rows(&outputs)
}

/// Runs the full embedding pipeline on `tape` and returns `Z` (`N x L`).
pub fn encode_on_tape(
    tape: &mut Tape,
    x: &Matrix,
    params: &ModelParams,
    vars: &ParamVars,
    tbptt: Option<usize>,
) -> Result<Var> {
    if x.cols() != params.input_dim {
        return Err(Error::dim(
            "encode",
            format!("input has {} channels, model expects {}", x.cols(), params.input_dim),
        ));
    }
    let cfg = &params.config;
    let mut input = tape.constant(x.clone());
    if cfg.use_cross_attention {
        input = match cfg.ca_window {
            Some(w) => windowed_cross_channel_attention(tape, input, cfg.ca_scale_k, w)?,
            None => cross_channel_attention(tape, input, cfg.ca_scale_k)?,
        };
    }
    let hidden = lstm_forward(tape, input, vars, tbptt)?;
    let mut z = match vars.projection {
        Some(p) => {
            let pt = tape.transpose(p);
            tape.matmul(hidden, pt)?
        }
        None => hidden,
    };
    if cfg.use_self_attention {
        let attended = self_attention(tape, z, cfg.latent_size as f64)?;
        z = if cfg.residual_self_attention {
            tape.add(z, attended)?
        } else {
            attended
        };
    }
    Ok(z)
}

/// Embeds one patient with frozen parameters (nothing is recorded).
pub fn encode(patient_id: &str, x: &Matrix, params: &ModelParams) -> Result<EmbeddingSequence> {
    let mut tape = Tape::new();
    let frozen = ParamVars {
        lstm_weight: tape.constant(params.lstm_weight.value().clone()),
        lstm_bias: tape.constant(params.lstm_bias.value().clone()),
        projection: params.projection.as_ref().map(|p| tape.constant(p.value().clone())),
    };
    let z = encode_on_tape(&mut tape, x, params, &frozen, None)?;
    let z = tape.value(z).clone();
    if !z.is_finite() {
        return Err(Error::Runtime(format!("non-finite embedding for patient {patient_id}")));
    }
    Ok(EmbeddingSequence {
        patient_id: patient_id.to_string(),
        z,
    })
}
