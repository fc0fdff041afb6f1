//! LSTM variational autoencoder over fixed-length windows, used as a
//! comparison embedding.
//!
//! encoder LSTM → per-timestep `μ`, `log σ²` heads → `z = μ + σ ⊙ ε` →
//! decoder LSTM → linear output map. The loss is the mean squared
//! reconstruction error plus `β` times the Gaussian KL divergence summed over
//! latent dimensions and averaged over timesteps.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{zero_grads, Adam, AdamConfig, Checkpoint, Parameters, Tape, Tensor, Var};
use crate::encoder::EmbeddingSequence;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::preprocess::PatientRecord;

pub const VAE_CHECKPOINT_KIND: &str = "lstm-vae";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VaeConfig {
    pub window_length: usize,
    pub hidden_size: usize,
    pub latent_size: usize,
    pub beta: f64,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for VaeConfig {
    fn default() -> Self {
        Self {
            window_length: 60,
            hidden_size: 32,
            latent_size: 32,
            beta: 1.0,
            epochs: 20,
            lr: 1e-3,
            batch_size: 32,
            seed: 7,
        }
    }
}

impl VaeConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        for (name, v) in [
            ("window_length", self.window_length),
            ("hidden_size", self.hidden_size),
            ("latent_size", self.latent_size),
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
        ] {
            if v == 0 {
                errs.push(format!("vae.{name}: must be positive"));
            }
        }
        if !(self.beta >= 0.0) {
            errs.push(format!("vae.beta: {} must be non-negative", self.beta));
        }
        if !(self.lr > 0.0) {
            errs.push(format!("vae.lr: {} must be positive", self.lr));
        }
        errs
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VaeParams {
    pub input_dim: usize,
    pub config: VaeConfig,
    pub enc_weight: Tensor,
    pub enc_bias: Tensor,
    pub mu_weight: Tensor,
    pub mu_bias: Tensor,
    pub logvar_weight: Tensor,
    pub logvar_bias: Tensor,
    pub dec_weight: Tensor,
    pub dec_bias: Tensor,
    pub out_weight: Tensor,
    pub out_bias: Tensor,
}

impl VaeParams {
    pub fn init(input_dim: usize, config: VaeConfig, seed: u64) -> Result<Self> {
        let errs = config.validate();
        if !errs.is_empty() {
            return Err(Error::Config(errs));
        }
        let (h, l, d) = (config.hidden_size, config.latent_size, input_dim);
        let bound = 1.0 / (h as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut uniform = |r: usize, c: usize| Tensor::param(Matrix::from_fn(r, c, |_, _| rng.random_range(-bound..bound)));
        let lstm_bias = || {
            let mut b = Matrix::zeros(1, 4 * h);
            b.data_mut()[h..2 * h].fill(1.0);
            Tensor::param(b)
        };
        let zeros = |c: usize| Tensor::param(Matrix::zeros(1, c));
        Ok(Self {
            input_dim,
            enc_weight: uniform(4 * h, d + h),
            enc_bias: lstm_bias(),
            mu_weight: uniform(l, h),
            mu_bias: zeros(l),
            logvar_weight: uniform(l, h),
            logvar_bias: zeros(l),
            dec_weight: uniform(4 * h, l + h),
            dec_bias: lstm_bias(),
            out_weight: uniform(d, h),
            out_bias: zeros(d),
            config,
        })
    }

    fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.named_params().into_iter().map(|(_, t)| tape.leaf(t)).collect()
    }
}

impl Parameters for VaeParams {
    fn named_params(&self) -> Vec<(&'static str, &Tensor)> {
        vec![
            ("encoder.weight", &self.enc_weight),
            ("encoder.bias", &self.enc_bias),
            ("mu.weight", &self.mu_weight),
            ("mu.bias", &self.mu_bias),
            ("logvar.weight", &self.logvar_weight),
            ("logvar.bias", &self.logvar_bias),
            ("decoder.weight", &self.dec_weight),
            ("decoder.bias", &self.dec_bias),
            ("output.weight", &self.out_weight),
            ("output.bias", &self.out_bias),
        ]
    }

    fn named_params_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        vec![
            ("encoder.weight", &mut self.enc_weight),
            ("encoder.bias", &mut self.enc_bias),
            ("mu.weight", &mut self.mu_weight),
            ("mu.bias", &mut self.mu_bias),
            ("logvar.weight", &mut self.logvar_weight),
            ("logvar.bias", &mut self.logvar_bias),
            ("decoder.weight", &mut self.dec_weight),
            ("decoder.bias", &mut self.dec_bias),
            ("output.weight", &mut self.out_weight),
            ("output.bias", &mut self.out_bias),
        ]
    }
}

/// Tape handles of one ELBO evaluation.
#[derive(Clone, Copy, Debug)]
pub struct ElboVars {
    pub loss: Var,
    pub recon_loss: Var,
    pub kl: Var,
    pub recon: Var,
    pub mu: Var,
    pub logvar: Var,
}

fn linear(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
    let wt = tape.transpose(w);
    let y = tape.matmul(x, wt)?;
    tape.add_row(y, b)
}

fn mu_head(tape: &mut Tape, window: &Matrix, v: &[Var]) -> Result<(Var, Var)> {
    let x = tape.constant(window.clone());
    let h = tape.lstm(x, v[0], v[1], None)?;
    Ok((h, linear(tape, h, v[2], v[3])?))
}

/// Records the negative ELBO of one window on `tape`; `v` are the parameter
/// handles in [`Parameters::named_params`] order and `noise` the `W x L`
/// standard-normal draws.
pub fn elbo_on_tape(tape: &mut Tape, v: &[Var], window: &Matrix, noise: &Matrix, beta: f64) -> Result<ElboVars> {
    let [w, l] = noise.shape();
    if window.rows() != w {
        return Err(Error::dim(
            "vae_elbo",
            format!("window has {} rows, noise {w}", window.rows()),
        ));
    }
    let (h, mu) = mu_head(tape, window, v)?;
    if tape.value(mu).cols() != l {
        return Err(Error::dim("vae_elbo", format!("noise width {l} vs latent {}", tape.value(mu).cols())));
    }
    let logvar = linear(tape, h, v[4], v[5])?;
    let half = tape.scale(logvar, 0.5);
    let sigma = tape.exp(half);
    let eps = tape.constant(noise.clone());
    let spread = tape.mul(sigma, eps)?;
    let z = tape.add(mu, spread)?;
    let hd = tape.lstm(z, v[6], v[7], None)?;
    let recon = linear(tape, hd, v[8], v[9])?;
    let target = tape.constant(window.clone());
    let diff = tape.sub(recon, target)?;
    let sq = tape.frobenius_sq(diff);
    let recon_loss = tape.scale(sq, 1.0 / (window.rows() * window.cols()) as f64);
    // KL = -1/2 Σ (1 + logvar − μ² − e^logvar), averaged over timesteps
    let lv_sum = tape.sum(logvar);
    let mu_sq = tape.frobenius_sq(mu);
    let var = tape.exp(logvar);
    let var_sum = tape.sum(var);
    let a = tape.sub(lv_sum, mu_sq)?;
    let a = tape.sub(a, var_sum)?;
    let a = tape.offset(a, (w * l) as f64);
    let kl = tape.scale(a, -0.5 / w as f64);
    let weighted = tape.scale(kl, beta);
    let loss = tape.add(recon_loss, weighted)?;
    Ok(ElboVars {
        loss,
        recon_loss,
        kl,
        recon,
        mu,
        logvar,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ElboOutput {
    pub loss: f64,
    pub recon_loss: f64,
    pub kl: f64,
    pub recon: Matrix,
    pub mu: Matrix,
    pub logvar: Matrix,
}

/// Negative ELBO of one window with the given noise draws.
pub fn vae_elbo(window: &Matrix, params: &VaeParams, noise: &Matrix) -> Result<ElboOutput> {
    if window.cols() != params.input_dim {
        return Err(Error::dim(
            "vae_elbo",
            format!("window has {} channels, model expects {}", window.cols(), params.input_dim),
        ));
    }
    let mut tape = Tape::new();
    let v: Vec<Var> = params
        .named_params()
        .into_iter()
        .map(|(_, t)| tape.constant(t.value().clone()))
        .collect();
    let out = elbo_on_tape(&mut tape, &v, window, noise, params.config.beta)?;
    Ok(ElboOutput {
        loss: tape.scalar(out.loss),
        recon_loss: tape.scalar(out.recon_loss),
        kl: tape.scalar(out.kl),
        recon: tape.value(out.recon).clone(),
        mu: tape.value(out.mu).clone(),
        logvar: tape.value(out.logvar).clone(),
    })
}

/// Non-overlapping windows of `len` rows; the remainder is dropped.
pub fn extract_windows(x: &Matrix, len: usize) -> Vec<Matrix> {
    (0..x.rows() / len).map(|k| x.slice_rows(k * len, (k + 1) * len)).collect()
}

fn standard_normal(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
    Matrix::from_fn(r, c, |_, _| StandardNormal.sample(rng))
}

/// Trains the VAE with Adam on mini-batch means of the negative ELBO.
/// Returns the parameters and the mean loss of every epoch.
pub fn vae_train(cohort: &[PatientRecord], cfg: &VaeConfig) -> Result<(VaeParams, Vec<f64>)> {
    let errs = cfg.validate();
    if !errs.is_empty() {
        return Err(Error::Config(errs));
    }
    let Some(first) = cohort.first() else {
        return Err(Error::InsufficientData("VAE training cohort is empty".into()));
    };
    let d = first.x().cols();
    let mut windows = Vec::new();
    for rec in cohort {
        if rec.len() < cfg.window_length {
            log::warn!(
                "patient {} has {} samples, shorter than the {}-sample window; skipped",
                rec.patient_id,
                rec.len(),
                cfg.window_length
            );
            continue;
        }
        if rec.x().cols() != d {
            return Err(Error::Data(format!("patient {} has {} channels, expected {d}", rec.patient_id, rec.x().cols())));
        }
        windows.extend(extract_windows(rec.x(), cfg.window_length));
    }
    if windows.is_empty() {
        return Err(Error::InsufficientData("no complete VAE windows in the training cohort".into()));
    }
    let mut params = VaeParams::init(d, cfg.clone(), cfg.seed)?;
    let mut adam = Adam::new(AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    });
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..windows.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            zero_grads(&mut params.params_mut());
            let mut tape = Tape::new();
            let v = params.bind(&mut tape);
            for &k in batch {
                let noise = standard_normal(&mut rng, cfg.window_length, cfg.latent_size);
                let out = elbo_on_tape(&mut tape, &v, &windows[k], &noise, cfg.beta)?;
                total += tape.scalar(out.loss);
                let scaled = tape.scale(out.loss, 1.0 / batch.len() as f64);
                tape.backward(scaled)?;
            }
            for ((_, t), var) in params.named_params_mut().into_iter().zip(&v) {
                if let Some(g) = tape.grad(*var) {
                    t.accumulate_grad(g, 1.0)?;
                }
            }
            adam.step(&mut params.params_mut());
        }
        history.push(total / windows.len() as f64);
    }
    zero_grads(&mut params.params_mut());
    Ok((params, history))
}

/// Per-timestep `μ`, encoding consecutive windows independently (the last
/// one may be shorter) and stitching them back in order.
pub fn vae_embed(patient_id: &str, x: &Matrix, params: &VaeParams) -> Result<EmbeddingSequence> {
    if x.cols() != params.input_dim {
        return Err(Error::dim(
            "vae_embed",
            format!("input has {} channels, model expects {}", x.cols(), params.input_dim),
        ));
    }
    let w = params.config.window_length;
    let mut tape = Tape::new();
    let v: Vec<Var> = params
        .named_params()
        .into_iter()
        .map(|(_, t)| tape.constant(t.value().clone()))
        .collect();
    let mut rows = Vec::with_capacity(x.rows());
    let mut start = 0;
    while start < x.rows() {
        let end = (start + w).min(x.rows());
        let (_, mu) = mu_head(&mut tape, &x.slice_rows(start, end), &v)?;
        let mu = tape.value(mu);
        rows.extend((0..mu.rows()).map(|r| mu.row(r).to_vec()));
        start = end;
    }
    let z = if rows.is_empty() {
        Matrix::zeros(0, params.config.latent_size)
    } else {
        Matrix::from_rows(&rows)?
    };
    Ok(EmbeddingSequence {
        patient_id: patient_id.to_string(),
        z,
    })
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VaeHeader {
    input_dim: usize,
    vae: VaeConfig,
}

pub fn vae_checkpoint(params: &VaeParams, path: &Path) -> Result<()> {
    let header = serde_json::to_value(VaeHeader {
        input_dim: params.input_dim,
        vae: params.config.clone(),
    })?;
    Checkpoint::from_params(VAE_CHECKPOINT_KIND, header, params).save(path)
}

pub fn vae_restore(path: &Path) -> Result<VaeParams> {
    let ck = Checkpoint::load(path)?;
    if ck.kind != VAE_CHECKPOINT_KIND {
        return Err(Error::Checkpoint(format!("expected a {VAE_CHECKPOINT_KIND} checkpoint, found {}", ck.kind)));
    }
    let header: VaeHeader = serde_json::from_value(ck.config.clone())
        .map_err(|e| Error::Checkpoint(format!("bad checkpoint config: {e}")))?;
    let mut params = VaeParams::init(header.input_dim, header.vae, 0)
        .map_err(|e| Error::Checkpoint(format!("bad checkpoint config: {e}")))?;
    ck.restore_into(&mut params)?;
    Ok(params)
}
