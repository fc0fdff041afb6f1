//! Single JSON experiment configuration with `key=value` overrides.
//!
//! Every field has a default, so `{}` is a valid config. Unknown keys, in the
//! file or in overrides, are all reported together.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::baselines::VaeConfig;
use crate::datagen::GeneratorSpec;
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::eval::tsne::TsneConfig;
use crate::preprocess::PreprocessConfig;
use crate::trainer::TrainConfig;

/// Environment variable that, when set, replaces `master_seed`.
pub const SEED_ENV: &str = "COSTATE_SEED";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceConfig {
    /// Decision threshold for hard labels.
    pub threshold: f64,
    /// Use only the first `k` training patients as references.
    pub max_references: Option<usize>,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            threshold: 0.0,
            max_references: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub n_iterations: usize,
    pub train_fraction: f64,
    /// Compute one AUC/AP per iteration over all test samples pooled,
    /// instead of averaging per-patient values.
    pub pooled: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n_iterations: 20,
            train_fraction: 0.8,
            pooled: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    pub output_dir: String,
    pub generator: GeneratorSpec,
    pub preprocess: PreprocessConfig,
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    pub inference: InferenceConfig,
    pub eval: EvalConfig,
    pub tsne: TsneConfig,
    pub vae: VaeConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            master_seed: 7,
            output_dir: "out".into(),
            generator: GeneratorSpec {
                length_range: [240, 480],
                episode_rate: 2.0,
                episode_length_range: [60, 120],
                ..GeneratorSpec::default()
            },
            preprocess: PreprocessConfig::default(),
            encoder: EncoderConfig::default(),
            train: TrainConfig {
                subsample_pairs: Some(3),
                ..TrainConfig::default()
            },
            inference: InferenceConfig::default(),
            eval: EvalConfig::default(),
            tsne: TsneConfig::default(),
            vae: VaeConfig::default(),
        }
    }
}

/// Dotted paths present in `given` but absent from `reference`.
fn unknown_keys(given: &Value, reference: &Value, prefix: &str, out: &mut Vec<String>) {
    let Value::Object(map) = given else { return };
    for (k, v) in map {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match reference {
            Value::Object(r) => match r.get(k) {
                Some(sub) => unknown_keys(v, sub, &path, out),
                None => out.push(path),
            },
            _ => {}
        }
    }
}

/// Recursively overlays `patch` onto `base`.
fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

fn set_path(root: &mut Value, path: &str, value: Value) {
    let mut node = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (k, part) in parts.iter().enumerate() {
        if !node.is_object() {
            *node = Value::Object(Default::default());
        }
        let map = node.as_object_mut().expect("object");
        if k + 1 == parts.len() {
            map.insert(part.to_string(), value);
            return;
        }
        node = map.entry(part.to_string()).or_insert(Value::Object(Default::default()));
    }
}

impl ExperimentConfig {
    /// Builds a config from optional JSON text plus `key=value` overrides
    /// (values parsed as JSON, falling back to a plain string).
    pub fn from_sources(json: Option<&str>, overrides: &[String]) -> Result<Self> {
        let mut value = match json {
            Some(text) => serde_json::from_str(text)
                .map_err(|e| Error::Config(vec![format!("config is not valid JSON: {e}")]))?,
            None => Value::Object(Default::default()),
        };
        if !value.is_object() {
            return Err(Error::config("config must be a JSON object"));
        }
        let mut errs = Vec::new();
        for o in overrides {
            match o.split_once('=') {
                Some((k, v)) if !k.trim().is_empty() => set_path(&mut value, k.trim(), parse_value(v.trim())),
                _ => errs.push(format!("override {o:?} is not of the form key=value")),
            }
        }
        let reference = serde_json::to_value(Self::default())?;
        unknown_keys(&value, &reference, "", &mut errs);
        for e in errs.iter_mut().filter(|e| !e.starts_with("override ")) {
            *e = format!("{e}: unknown key");
        }
        if !errs.is_empty() {
            return Err(Error::Config(errs));
        }
        // partial sections inherit from the experiment defaults, not from
        // each section's own defaults
        let mut merged = reference;
        merge(&mut merged, value);
        let cfg: Self = serde_json::from_value(merged).map_err(|e| Error::Config(vec![e.to_string()]))?;
        let errs = cfg.validate();
        if !errs.is_empty() {
            return Err(Error::Config(errs));
        }
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => Some(std::fs::read_to_string(p).map_err(|e| {
                Error::Config(vec![format!("cannot read config {}: {e}", p.display())])
            })?),
            None => None,
        };
        Self::from_sources(text.as_deref(), overrides)
    }

    /// Replaces `master_seed` from [`SEED_ENV`] when it is set.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(raw) = std::env::var(SEED_ENV) {
            self.master_seed = raw
                .trim()
                .parse()
                .map_err(|_| Error::Config(vec![format!("{SEED_ENV}={raw:?} is not an unsigned integer")]))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if let Err(Error::Config(e)) = self.generator.validate() {
            errs.extend(e.into_iter().map(|m| format!("generator.{m}")));
        }
        errs.extend(self.preprocess.validate());
        errs.extend(self.encoder.validate());
        errs.extend(self.train.validate());
        errs.extend(self.tsne.validate());
        errs.extend(self.vae.validate());
        if self.vae.latent_size != self.encoder.latent_size {
            errs.push(format!(
                "vae.latent_size: {} must equal encoder.latent_size {}",
                self.vae.latent_size, self.encoder.latent_size
            ));
        }
        if self.eval.n_iterations == 0 {
            errs.push("eval.n_iterations: must be at least 1".into());
        }
        if !(self.eval.train_fraction > 0.0 && self.eval.train_fraction < 1.0) {
            errs.push(format!("eval.train_fraction: {} must lie in (0, 1)", self.eval.train_fraction));
        }
        if self.inference.max_references == Some(0) {
            errs.push("inference.max_references: must be positive".into());
        }
        errs
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
