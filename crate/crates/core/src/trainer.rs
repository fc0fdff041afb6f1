//! Collaborative training: every training patient in turn acts as the anchor
//! `i`; its embedding is compared with each other patient `j` (all re-encoded
//! under the current parameters), pair gradients are accumulated, and one
//! optimizer step is taken per anchor.
//!
//! Each pair is differentiated on its own tape with `Z_i` entering as a
//! detached leaf. The `Z_i` gradients are summed across pairs and pushed
//! through the anchor's tape once, which yields exactly the gradient of the
//! summed pair losses while keeping at most two sequences in memory.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{zero_grads, Adam, AdamConfig, Checkpoint, Parameters, Tape};
use crate::encoder::{encode_on_tape, EncoderConfig, ModelParams};
use crate::error::{Error, Result};
use crate::objective::pair_loss_on_tape;
use crate::preprocess::PatientRecord;

pub const CHECKPOINT_KIND: &str = "lstm-encoder";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub n_epochs: usize,
    pub lr: f64,
    pub seed: u64,
    /// Divide each pair loss by `Ni·Nj`.
    pub normalize_loss: bool,
    /// Truncate backpropagation through time to windows of this many samples.
    pub tbptt_window: Option<usize>,
    /// Compare each anchor with this many randomly drawn partners instead of
    /// all other patients.
    pub subsample_pairs: Option<usize>,
    /// Visit anchors in a seeded random order each epoch.
    pub shuffle_anchors: bool,
    /// Average the accumulated pair gradients before the step (otherwise sum).
    pub average_pair_grads: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_epochs: 30,
            lr: 1e-3,
            seed: 7,
            normalize_loss: true,
            tbptt_window: None,
            subsample_pairs: None,
            shuffle_anchors: false,
            average_pair_grads: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.n_epochs == 0 {
            errs.push("train.n_epochs: must be at least 1".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            errs.push(format!("train.lr: {} must be positive", self.lr));
        }
        if self.tbptt_window == Some(0) {
            errs.push("train.tbptt_window: must be positive".into());
        }
        if self.subsample_pairs == Some(0) {
            errs.push("train.subsample_pairs: must be positive".into());
        }
        errs
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            ..AdamConfig::default()
        }
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub epoch_mean_loss: Vec<f64>,
    pub epoch_seconds: Vec<f64>,
    pub optimizer_steps: u64,
}

impl TrainTrace {
    pub fn final_loss(&self) -> Option<f64> {
        self.epoch_mean_loss.last().copied()
    }

    pub fn epochs(&self) -> impl Iterator<Item = EpochLog> + '_ {
        self.epoch_mean_loss
            .iter()
            .zip(&self.epoch_seconds)
            .enumerate()
            .map(|(k, (&mean_loss, &seconds))| EpochLog {
                epoch: k + 1,
                mean_loss,
                seconds,
            })
    }

    /// Writes the JSON-lines training log.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for line in self.epochs() {
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Loss and parameter gradients for one anchor against a set of partners.
#[derive(Clone, Debug)]
pub struct AnchorGradients {
    pub mean_loss: f64,
    pub pair_losses: Vec<f64>,
}

/// Accumulates into `params`' gradient buffers the gradient of
/// `weight * Σ_j loss(i, j)` over `partners`, using one tape per pair.
pub fn accumulate_anchor_gradients(
    params: &mut ModelParams,
    cohort: &[PatientRecord],
    anchor: usize,
    partners: &[usize],
    weight: f64,
    cfg: &TrainConfig,
) -> Result<AnchorGradients> {
    let rec_i = &cohort[anchor];
    let yi = rec_i.labels_f64();
    let mut anchor_tape = Tape::new();
    let anchor_vars = params.bind(&mut anchor_tape);
    let zi = encode_on_tape(&mut anchor_tape, rec_i.x(), params, &anchor_vars, cfg.tbptt_window)?;
    let zi_value = anchor_tape.value(zi).clone();
    let mut dzi = vec![0.0; zi_value.data().len()];
    let mut pair_losses = Vec::with_capacity(partners.len());

    for &j in partners {
        let rec_j = &cohort[j];
        let mut tape = Tape::new();
        let vars = params.bind(&mut tape);
        let zj = encode_on_tape(&mut tape, rec_j.x(), params, &vars, cfg.tbptt_window)?;
        let zi_leaf = tape.variable(zi_value.clone());
        let loss = pair_loss_on_tape(&mut tape, zi_leaf, zj, &yi, &rec_j.labels_f64(), cfg.normalize_loss)?;
        let value = tape.scalar(loss);
        if !value.is_finite() {
            return Err(Error::Runtime(format!(
                "non-finite loss for pair ({}, {})",
                rec_i.patient_id, rec_j.patient_id
            )));
        }
        pair_losses.push(value);
        tape.backward(loss)?;
        params.accumulate_grads(&tape, &vars, weight)?;
        if let Some(g) = tape.grad(zi_leaf) {
            for (acc, v) in dzi.iter_mut().zip(g) {
                *acc += weight * v;
            }
        }
    }
    anchor_tape.backward_from(zi, &dzi)?;
    params.accumulate_grads(&anchor_tape, &anchor_vars, 1.0)?;

    let mean_loss = pair_losses.iter().sum::<f64>() / pair_losses.len().max(1) as f64;
    Ok(AnchorGradients { mean_loss, pair_losses })
}

fn check_cohort(cohort: &[PatientRecord]) -> Result<usize> {
    if cohort.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "training needs at least 2 patients, got {}",
            cohort.len()
        )));
    }
    let d = cohort[0].x().cols();
    for rec in cohort {
        if rec.x().cols() != d {
            return Err(Error::Data(format!(
                "patient {} has {} channels, expected {d}",
                rec.patient_id,
                rec.x().cols()
            )));
        }
        if rec.is_empty() {
            return Err(Error::EmptyRecording(rec.patient_id.clone()));
        }
        if !rec.has_both_classes() {
            log::info!("patient {} has single-class labels", rec.patient_id);
        }
    }
    Ok(d)
}

/// Trains from freshly initialised parameters.
pub fn train(
    cohort: &[PatientRecord],
    encoder: &EncoderConfig,
    cfg: &TrainConfig,
) -> Result<(ModelParams, TrainTrace)> {
    train_with_observer(cohort, encoder, cfg, |_| {})
}

/// Like [`train`], calling `on_epoch` after every epoch.
pub fn train_with_observer(
    cohort: &[PatientRecord],
    encoder: &EncoderConfig,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<(ModelParams, TrainTrace)> {
    let errs = cfg.validate();
    if !errs.is_empty() {
        return Err(Error::Config(errs));
    }
    let d = check_cohort(cohort)?;
    let mut params = ModelParams::init(d, encoder.clone(), cfg.seed)?;
    let mut adam = Adam::new(cfg.adam());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);

    let p = cohort.len();
    let mut trace = TrainTrace::default();
    let mut order: Vec<usize> = (0..p).collect();
    for epoch in 0..cfg.n_epochs {
        let start = Instant::now();
        if cfg.shuffle_anchors {
            order.shuffle(&mut rng);
        }
        let mut loss_sum = 0.0;
        let mut pairs = 0usize;
        for &i in &order {
            let mut partners: Vec<usize> = (0..p).filter(|&j| j != i).collect();
            if let Some(k) = cfg.subsample_pairs {
                if k < partners.len() {
                    partners.shuffle(&mut rng);
                    partners.truncate(k);
                    partners.sort_unstable();
                }
            }
            let weight = if cfg.average_pair_grads {
                1.0 / partners.len() as f64
            } else {
                1.0
            };
            zero_grads(&mut params.params_mut());
            let g = accumulate_anchor_gradients(&mut params, cohort, i, &partners, weight, cfg)?;
            loss_sum += g.pair_losses.iter().sum::<f64>();
            pairs += g.pair_losses.len();
            adam.step(&mut params.params_mut());
        }
        let log = EpochLog {
            epoch: epoch + 1,
            mean_loss: loss_sum / pairs as f64,
            seconds: start.elapsed().as_secs_f64(),
        };
        log::debug!("epoch {} mean loss {:.6}", log.epoch, log.mean_loss);
        on_epoch(&log);
        trace.epoch_mean_loss.push(log.mean_loss);
        trace.epoch_seconds.push(log.seconds);
    }
    zero_grads(&mut params.params_mut());
    trace.optimizer_steps = adam.steps();
    assert_eq!(trace.optimizer_steps, (cfg.n_epochs * p) as u64);
    Ok((params, trace))
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointHeader {
    input_dim: usize,
    encoder: EncoderConfig,
}

pub fn to_checkpoint(params: &ModelParams) -> Result<Checkpoint> {
    let header = serde_json::to_value(CheckpointHeader {
        input_dim: params.input_dim,
        encoder: params.config.clone(),
    })?;
    Ok(Checkpoint::from_params(CHECKPOINT_KIND, header, params))
}

pub fn from_checkpoint(ck: &Checkpoint) -> Result<ModelParams> {
    if ck.kind != CHECKPOINT_KIND {
        return Err(Error::Checkpoint(format!(
            "expected a {CHECKPOINT_KIND} checkpoint, found {}",
            ck.kind
        )));
    }
    let header: CheckpointHeader = serde_json::from_value(ck.config.clone())
        .map_err(|e| Error::Checkpoint(format!("bad checkpoint config: {e}")))?;
    let mut params = ModelParams::init(header.input_dim, header.encoder, 0)
        .map_err(|e| Error::Checkpoint(format!("bad checkpoint config: {e}")))?;
    ck.restore_into(&mut params)?;
    Ok(params)
}

pub fn checkpoint(params: &ModelParams, path: &Path) -> Result<()> {
    to_checkpoint(params)?.save(path)
}

pub fn restore(path: &Path) -> Result<ModelParams> {
    from_checkpoint(&Checkpoint::load(path)?)
}
