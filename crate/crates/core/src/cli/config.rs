//! Flat `section.key = value` configuration.
//!
//! One assignment per line; `#` starts a comment. Unknown keys, repeated
//! keys and out-of-range values are errors. Lists are comma separated and
//! `none` clears an optional value or empties a list.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::data::{AuxSource, BackdoorSpec};
use crate::error::{Error, Result};
use crate::evalkit::{AttackConfig, ProbeConfig};
use crate::masking::{MaskSpec, SamplingStrategy};
use crate::unlearn::UnlearnConfig;
use crate::vib::{CodeMode, TrainConfig, VibArch};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetKind {
    Blobs,
    Idx,
    Csv,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    pub classes: usize,
    pub per_class: usize,
    pub dim: usize,
    pub spread: f64,
    pub images: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub csv: Option<PathBuf>,
    pub edr: f64,
    pub test_fraction: f64,
    pub aux_source: AuxSource,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BackdoorConfig {
    pub enabled: bool,
    /// `None` means [`BackdoorSpec::default_for`] the feature count.
    pub indices: Option<Vec<usize>>,
    pub value: f64,
    pub target: usize,
}

impl BackdoorConfig {
    pub fn spec(&self, n_features: usize) -> BackdoorSpec {
        let default = BackdoorSpec::default_for(n_features);
        BackdoorSpec {
            trigger_indices: self.indices.clone().unwrap_or(default.trigger_indices),
            trigger_value: self.value,
            target_label: self.target,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub encoder_hidden: Vec<usize>,
    pub latent_dim: usize,
    pub decoder_hidden: Vec<usize>,
    pub beta: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaskConfig {
    pub sr: f64,
    pub strategy: SamplingStrategy,
    pub mask_value: f64,
    pub mode: CodeMode,
}

impl MaskConfig {
    pub fn spec(&self, n_features: usize) -> Result<MaskSpec> {
        MaskSpec::new(n_features, self.sr, self.strategy)?.with_mask_value(self.mask_value)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepConfig {
    pub betas: Vec<f64>,
    pub srs: Vec<f64>,
    pub strategy: SamplingStrategy,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    /// Root seed; every stage derives its own stream from it.
    pub seed: u64,
    pub dataset: DatasetConfig,
    pub backdoor: BackdoorConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub mask: MaskConfig,
    /// `seed` inside is ignored; the root seed is used.
    pub unlearn: UnlearnConfig,
    pub attack: AttackConfig,
    pub probe: ProbeConfig,
    pub sweep: SweepConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seed: 0,
            dataset: DatasetConfig {
                kind: DatasetKind::Blobs,
                classes: 4,
                per_class: 250,
                dim: 16,
                spread: 0.05,
                images: None,
                labels: None,
                csv: None,
                edr: 0.06,
                test_fraction: 0.2,
                aux_source: AuxSource::HeldOut,
            },
            backdoor: BackdoorConfig {
                enabled: true,
                indices: None,
                value: 1.0,
                target: 0,
            },
            model: ModelConfig {
                encoder_hidden: vec![64],
                latent_dim: 8,
                decoder_hidden: vec![32],
                beta: 0.001,
            },
            train: TrainConfig::default(),
            mask: MaskConfig {
                sr: 0.6,
                strategy: SamplingStrategy::WithReplacement,
                mask_value: 0.0,
                mode: CodeMode::MeanCode,
            },
            unlearn: UnlearnConfig {
                epochs: 60,
                lr: 0.1,
                ..UnlearnConfig::default()
            },
            attack: AttackConfig::default(),
            probe: ProbeConfig::default(),
            sweep: SweepConfig {
                betas: vec![1e-4, 1e-2, 1.0],
                srs: vec![0.2, 0.6, 1.0],
                strategy: SamplingStrategy::WithoutReplacement,
            },
        }
    }
}

fn bad(key: &str, value: &str, what: &str) -> Error {
    Error::Config(format!("{key} = '{value}': expected {what}"))
}

fn float(key: &str, v: &str) -> Result<f64> {
    v.parse::<f64>()
        .ok()
        .filter(|x| x.is_finite())
        .ok_or_else(|| bad(key, v, "a finite number"))
}

fn int<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| bad(key, v, "a non-negative integer"))
}

fn flag(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(bad(key, v, "true or false")),
    }
}

fn list<T>(key: &str, v: &str, item: impl Fn(&str, &str) -> Result<T>) -> Result<Vec<T>> {
    if v == "none" || v.is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|s| item(key, s.trim())).collect()
}

fn optional<T>(v: &str, parse: impl FnOnce() -> Result<T>) -> Result<Option<T>> {
    if v == "none" {
        Ok(None)
    } else {
        parse().map(Some)
    }
}

fn parsed<T: std::str::FromStr<Err = Error>>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|e: Error| Error::Config(format!("{key}: {e}")))
}

fn join<T: ToString>(items: &[T]) -> String {
    if items.is_empty() {
        "none".into()
    } else {
        items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
    }
}

fn show<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "none".into(), T::to_string)
}

fn check(ok: bool, key: &str, rule: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Config(format!("{key} must be {rule}")))
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Config> {
        let mut config = Config::default();
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {}: '{key}' set twice", i + 1)));
            }
            config
                .set(key, value)
                .map_err(|e| Error::Config(format!("line {}: {}", i + 1, e.to_string().trim_start_matches("config: "))))?;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Config> {
        Config::parse(&std::fs::read_to_string(path)?)
    }

    /// Applies one assignment without range checks.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let d = &mut self.dataset;
        let u = &mut self.unlearn;
        match key {
            "seed" => self.seed = int(key, v)?,
            "dataset.kind" => {
                d.kind = match v {
                    "blobs" => DatasetKind::Blobs,
                    "idx" => DatasetKind::Idx,
                    "csv" => DatasetKind::Csv,
                    _ => return Err(bad(key, v, "blobs, idx or csv")),
                }
            }
            "dataset.classes" => d.classes = int(key, v)?,
            "dataset.per_class" => d.per_class = int(key, v)?,
            "dataset.dim" => d.dim = int(key, v)?,
            "dataset.spread" => d.spread = float(key, v)?,
            "dataset.images" => d.images = optional(v, || Ok(PathBuf::from(v)))?,
            "dataset.labels" => d.labels = optional(v, || Ok(PathBuf::from(v)))?,
            "dataset.csv" => d.csv = optional(v, || Ok(PathBuf::from(v)))?,
            "dataset.edr" => d.edr = float(key, v)?,
            "dataset.test_fraction" => d.test_fraction = float(key, v)?,
            "dataset.aux_source" => d.aux_source = parsed(key, v)?,
            "backdoor.enabled" => self.backdoor.enabled = flag(key, v)?,
            "backdoor.indices" => self.backdoor.indices = optional(v, || list(key, v, int))?,
            "backdoor.value" => self.backdoor.value = float(key, v)?,
            "backdoor.target" => self.backdoor.target = int(key, v)?,
            "model.encoder_hidden" => self.model.encoder_hidden = list(key, v, int)?,
            "model.latent_dim" => self.model.latent_dim = int(key, v)?,
            "model.decoder_hidden" => self.model.decoder_hidden = list(key, v, int)?,
            "model.beta" => self.model.beta = float(key, v)?,
            "train.epochs" => self.train.epochs = int(key, v)?,
            "train.batch_size" => self.train.batch_size = int(key, v)?,
            "train.lr" => self.train.lr = float(key, v)?,
            "train.momentum" => self.train.momentum = optional(v, || float(key, v))?,
            "mask.sr" => self.mask.sr = float(key, v)?,
            "mask.strategy" => self.mask.strategy = parsed(key, v)?,
            "mask.mask_value" => self.mask.mask_value = float(key, v)?,
            "mask.mode" => self.mask.mode = parsed(key, v)?,
            "unlearn.epochs" => u.epochs = int(key, v)?,
            "unlearn.batch_size" => u.batch_size = int(key, v)?,
            "unlearn.lr" => u.lr = float(key, v)?,
            "unlearn.momentum" => u.momentum = optional(v, || float(key, v))?,
            "unlearn.lambda" => u.lambda = float(key, v)?,
            "unlearn.alpha_override" => u.alpha_override = optional(v, || float(key, v))?,
            "unlearn.degeneracy_tol" => u.degeneracy_tol = float(key, v)?,
            "unlearn.normalize_gradients" => u.normalize_gradients = flag(key, v)?,
            "mine.hidden" => u.mine.hidden = list(key, v, int)?,
            "mine.lr" => u.mine.lr = float(key, v)?,
            "mine.ema_decay" => u.mine.ema_decay = float(key, v)?,
            "mine.inner_steps" => u.mine.inner_steps = int(key, v)?,
            "mine.warmup_steps" => u.mine.warmup_steps = int(key, v)?,
            "eval.attack_hidden" => self.attack.hidden = list(key, v, int)?,
            "eval.attack_epochs" => self.attack.epochs = int(key, v)?,
            "eval.attack_batch_size" => self.attack.batch_size = int(key, v)?,
            "eval.attack_lr" => self.attack.lr = float(key, v)?,
            "eval.probe_steps" => self.probe.steps = int(key, v)?,
            "eval.probe_batch_size" => self.probe.batch_size = int(key, v)?,
            "sweep.betas" => self.sweep.betas = list(key, v, float)?,
            "sweep.srs" => self.sweep.srs = list(key, v, float)?,
            "sweep.strategy" => self.sweep.strategy = parsed(key, v)?,
            _ => return Err(Error::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    /// Range checks on every field.
    pub fn validate(&self) -> Result<()> {
        let d = &self.dataset;
        check(d.classes >= 2, "dataset.classes", "at least 2")?;
        check(d.per_class >= 1, "dataset.per_class", "positive")?;
        check(d.dim >= 4, "dataset.dim", "at least 4")?;
        check(d.spread >= 0.0, "dataset.spread", "non-negative")?;
        check(d.edr > 0.0 && d.edr < 0.5, "dataset.edr", "in (0, 0.5)")?;
        check((0.0..1.0).contains(&d.test_fraction), "dataset.test_fraction", "in [0, 1)")?;
        match d.kind {
            DatasetKind::Idx => check(
                d.images.is_some() && d.labels.is_some(),
                "dataset.images and dataset.labels",
                "set for an idx dataset",
            )?,
            DatasetKind::Csv => check(d.csv.is_some(), "dataset.csv", "set for a csv dataset")?,
            DatasetKind::Blobs => {}
        }
        check((0.0..=1.0).contains(&self.backdoor.value), "backdoor.value", "in [0, 1]")?;
        check(self.model.latent_dim >= 1, "model.latent_dim", "positive")?;
        check(self.model.beta >= 0.0, "model.beta", "non-negative")?;
        check(
            self.model.encoder_hidden.iter().chain(&self.model.decoder_hidden).all(|&w| w > 0),
            "model layer widths",
            "positive",
        )?;
        check(self.train.batch_size >= 1, "train.batch_size", "positive")?;
        check(self.train.lr > 0.0, "train.lr", "positive")?;
        check(
            self.train.momentum.is_none_or(|m| (0.0..1.0).contains(&m)),
            "train.momentum",
            "in [0, 1) or none",
        )?;
        check(self.mask.sr > 0.0 && self.mask.sr <= 1.0, "mask.sr", "in (0, 1]")?;
        check((0.0..=1.0).contains(&self.mask.mask_value), "mask.mask_value", "in [0, 1]")?;
        self.unlearn.validate().map_err(|e| Error::Config(format!("unlearn: {e}")))?;
        check(
            self.unlearn.momentum.is_none_or(|m| (0.0..1.0).contains(&m)),
            "unlearn.momentum",
            "in [0, 1) or none",
        )?;
        check(self.unlearn.degeneracy_tol >= 0.0, "unlearn.degeneracy_tol", "non-negative")?;
        check(self.unlearn.mine.inner_steps >= 1, "mine.inner_steps", "positive")?;
        check(!self.unlearn.mine.hidden.contains(&0), "mine.hidden", "positive widths")?;
        check(self.attack.batch_size >= 1, "eval.attack_batch_size", "positive")?;
        check(self.attack.lr > 0.0, "eval.attack_lr", "positive")?;
        check(self.probe.batch_size >= 2, "eval.probe_batch_size", "at least 2")?;
        check(self.sweep.betas.iter().all(|&b| b >= 0.0), "sweep.betas", "non-negative")?;
        check(self.sweep.srs.iter().all(|&s| s > 0.0 && s <= 1.0), "sweep.srs", "in (0, 1]")?;
        Ok(())
    }

    pub fn arch(&self, n_features: usize, classes: usize) -> VibArch {
        VibArch {
            n_features,
            encoder_hidden: self.model.encoder_hidden.clone(),
            latent_dim: self.model.latent_dim,
            decoder_hidden: self.model.decoder_hidden.clone(),
            classes,
        }
    }

    /// Renders every key; parsing the result gives back an equal config.
    pub fn to_text(&self) -> String {
        let d = &self.dataset;
        let u = &self.unlearn;
        let kind = match d.kind {
            DatasetKind::Blobs => "blobs",
            DatasetKind::Idx => "idx",
            DatasetKind::Csv => "csv",
        };
        let aux = match d.aux_source {
            AuxSource::HeldOut => "held-out",
            AuxSource::RandomInputs => "random-inputs",
        };
        let path = |p: &Option<PathBuf>| p.as_ref().map_or_else(|| "none".into(), |p| p.display().to_string());
        let entries: Vec<(&str, String)> = vec![
            ("seed", self.seed.to_string()),
            ("dataset.kind", kind.into()),
            ("dataset.classes", d.classes.to_string()),
            ("dataset.per_class", d.per_class.to_string()),
            ("dataset.dim", d.dim.to_string()),
            ("dataset.spread", d.spread.to_string()),
            ("dataset.images", path(&d.images)),
            ("dataset.labels", path(&d.labels)),
            ("dataset.csv", path(&d.csv)),
            ("dataset.edr", d.edr.to_string()),
            ("dataset.test_fraction", d.test_fraction.to_string()),
            ("dataset.aux_source", aux.into()),
            ("backdoor.enabled", self.backdoor.enabled.to_string()),
            ("backdoor.indices", self.backdoor.indices.as_deref().map_or_else(|| "none".into(), join)),
            ("backdoor.value", self.backdoor.value.to_string()),
            ("backdoor.target", self.backdoor.target.to_string()),
            ("model.encoder_hidden", join(&self.model.encoder_hidden)),
            ("model.latent_dim", self.model.latent_dim.to_string()),
            ("model.decoder_hidden", join(&self.model.decoder_hidden)),
            ("model.beta", self.model.beta.to_string()),
            ("train.epochs", self.train.epochs.to_string()),
            ("train.batch_size", self.train.batch_size.to_string()),
            ("train.lr", self.train.lr.to_string()),
            ("train.momentum", show(&self.train.momentum)),
            ("mask.sr", self.mask.sr.to_string()),
            ("mask.strategy", self.mask.strategy.to_string()),
            ("mask.mask_value", self.mask.mask_value.to_string()),
            ("mask.mode", self.mask.mode.to_string()),
            ("unlearn.epochs", u.epochs.to_string()),
            ("unlearn.batch_size", u.batch_size.to_string()),
            ("unlearn.lr", u.lr.to_string()),
            ("unlearn.momentum", show(&u.momentum)),
            ("unlearn.lambda", u.lambda.to_string()),
            ("unlearn.alpha_override", show(&u.alpha_override)),
            ("unlearn.degeneracy_tol", u.degeneracy_tol.to_string()),
            ("unlearn.normalize_gradients", u.normalize_gradients.to_string()),
            ("mine.hidden", join(&u.mine.hidden)),
            ("mine.lr", u.mine.lr.to_string()),
            ("mine.ema_decay", u.mine.ema_decay.to_string()),
            ("mine.inner_steps", u.mine.inner_steps.to_string()),
            ("mine.warmup_steps", u.mine.warmup_steps.to_string()),
            ("eval.attack_hidden", join(&self.attack.hidden)),
            ("eval.attack_epochs", self.attack.epochs.to_string()),
            ("eval.attack_batch_size", self.attack.batch_size.to_string()),
            ("eval.attack_lr", self.attack.lr.to_string()),
            ("eval.probe_steps", self.probe.steps.to_string()),
            ("eval.probe_batch_size", self.probe.batch_size.to_string()),
            ("sweep.betas", join(&self.sweep.betas)),
            ("sweep.srs", join(&self.sweep.srs)),
            ("sweep.strategy", self.sweep.strategy.to_string()),
        ];
        let mut out = String::new();
        for (k, v) in entries {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_is_the_default() {
        assert_eq!(Config::parse("# nothing\n\n").unwrap(), Config::default());
    }

    #[test]
    fn text_round_trip() {
        let mut c = Config::default();
        c.seed = 42;
        c.model.decoder_hidden.clear();
        c.train.momentum = None;
        c.backdoor.indices = Some(vec![3, 4]);
        c.unlearn.alpha_override = Some(0.25);
        c.dataset.csv = Some("data/x.csv".into());
        assert_eq!(Config::parse(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn assignments_apply() {
        let c = Config::parse("train.lr = 0.001 # slower\nmodel.encoder_hidden = 32, 16\nmask.strategy = without_replacement\n")
            .unwrap();
        assert_eq!(c.train.lr, 0.001);
        assert_eq!(c.model.encoder_hidden, vec![32, 16]);
        assert_eq!(c.mask.strategy, SamplingStrategy::WithoutReplacement);
    }

    #[test]
    fn strictness() {
        for bad in [
            "train.lrr = 0.1",
            "train.lr 0.1",
            "train.lr = fast",
            "train.lr = 0.1\ntrain.lr = 0.2",
            "mask.sr = 1.5",
            "dataset.edr = 0.5",
            "unlearn.lambda = 2",
            "train.momentum = 1.0",
            "dataset.kind = idx",
            "backdoor.enabled = yes",
            "train.epochs = -1",
        ] {
            assert!(Config::parse(bad).is_err(), "accepted '{bad}'");
        }
        let err = Config::parse("\n\nfoo.bar = 1").unwrap_err().to_string();
        assert!(err.contains("line 3") && err.contains("foo.bar"), "{err}");
    }
}
