//! Run configuration: a TOML file with `[model]`, `[train]`, `[data]` and
//! `[vae]` sections. Missing keys take task-specific defaults.
//!
//! ```toml
//! task = "classify"
//! seed = 7
//!
//! [model]
//! arch = "{c32k3s1-BN-ALIF-MPk2s2}*2-DP-FC512-ALIF-DP-FC100-ALIF-APk10s10"
//! time_steps = 4
//!
//! [train]
//! epochs = 3
//!
//! [data]
//! dataset = "mnist"
//! subset_n = 10000
//! ```

use serde::{Deserialize, Serialize};

use crate::arch::parse_arch;
use crate::classifier::{Classifier, ClassifierTrainer, LossKind, TrainSettings};
use crate::data::DatasetKind;
use crate::error::{Error, Result};
use crate::neuron::AlifParams;
use crate::numerics::{OptimizerConfig, OptimizerKind, Rng};
use crate::svae::{Svae, SvaeConfig, VaeTrainer};
use crate::taid::TaidMode;

pub const DEFAULT_ARCH: &str = "{c32k3s1-BN-ALIF-MPk2s2}*2-DP-FC512-ALIF-DP-FC100-ALIF-APk10s10";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Classify,
    Vae,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub arch: String,
    pub time_steps: usize,
    pub tau_init: f64,
    pub vth_init: f64,
    /// Surrogate window width.
    pub a: f64,
    pub tau_learnable: bool,
    pub vth_learnable: bool,
    pub dropout: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Stop after this many optimizer steps (VAE runs); unset means whole epochs.
    pub max_steps: Option<usize>,
    pub loss: LossKind,
    /// Write a checkpoint every this many epochs (0 = only at the end).
    pub checkpoint_every: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub dataset: DatasetKind,
    /// Stratified training subset size; unset uses the whole split.
    pub subset_n: Option<usize>,
    /// Stratified test subset size; unset uses the whole split.
    pub test_n: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VaeSection {
    pub latent_dim: usize,
    pub beta: f64,
    pub taid_mode: TaidMode,
    pub channels: [usize; 2],
}

/// Fully resolved configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub task: Task,
    pub seed: u64,
    pub model: ModelSection,
    pub train: TrainSection,
    pub data: DataSection,
    pub vae: VaeSection,
}

impl RunConfig {
    /// Defaults for a task: classification uses T = 8, batch 16 and Adam;
    /// the VAE uses T = 16, batch 200 and AdamW. Both use lr = 0.001 and
    /// weight decay 0.001.
    pub fn defaults(task: Task) -> Self {
        let classify = task == Task::Classify;
        RunConfig {
            task,
            seed: 0,
            model: ModelSection {
                arch: DEFAULT_ARCH.into(),
                time_steps: if classify { 8 } else { 16 },
                tau_init: 0.25,
                vth_init: 0.2,
                a: 1.0,
                tau_learnable: true,
                vth_learnable: true,
                dropout: 0.2,
            },
            train: TrainSection {
                optimizer: if classify { OptimizerKind::Adam } else { OptimizerKind::AdamW },
                lr: 0.001,
                weight_decay: 0.001,
                epochs: if classify { 3 } else { 10 },
                batch_size: if classify { 16 } else { 200 },
                max_steps: None,
                loss: LossKind::Mse,
                checkpoint_every: 1,
            },
            data: DataSection {
                dataset: DatasetKind::Mnist,
                subset_n: None,
                test_n: None,
            },
            vae: VaeSection {
                latent_dim: 16,
                beta: 1.0,
                taid_mode: TaidMode::Matrix,
                channels: [16, 32],
            },
        }
    }

    /// Parse TOML text; errors carry the 1-based line number.
    pub fn parse(text: &str) -> Result<Self> {
        let raw: toml::Table = toml::from_str(text).map_err(|e| Error::Config {
            line: e.span().map(|s| line_of(text, s.start)).unwrap_or(0),
            reason: e.message().to_string(),
        })?;
        let task = match raw.get("task") {
            None => Task::Classify,
            Some(v) => Task::deserialize(v.clone()).map_err(|e| Error::Config {
                line: key_line(text, "task"),
                reason: e.message().to_string(),
            })?,
        };
        // overlay the file onto the task defaults, table by table
        let mut merged = toml::Table::try_from(RunConfig::defaults(task)).expect("defaults serialize");
        for (k, v) in raw {
            match (merged.get_mut(&k), v) {
                (Some(toml::Value::Table(dst)), toml::Value::Table(src)) => dst.extend(src),
                (_, v) => {
                    merged.insert(k, v);
                }
            }
        }
        let cfg = RunConfig::deserialize(merged).map_err(|e| {
            let msg = e.message().to_string();
            let full = e.to_string();
            let line = unknown_field(&msg).or_else(|| error_key(&full)).map(|k| key_line(text, k)).unwrap_or(0);
            Error::Config { line, reason: msg }
        })?;
        cfg.validate(text)?;
        Ok(cfg)
    }

    fn validate(&self, text: &str) -> Result<()> {
        let fail = |key: &str, reason: String| Err(Error::Config { line: key_line(text, key), reason });
        if self.model.time_steps == 0 {
            return fail("time_steps", "time_steps must be at least 1".into());
        }
        if self.train.batch_size == 0 {
            return fail("batch_size", "batch_size must be at least 1".into());
        }
        if !(self.train.lr > 0.0 && self.train.lr.is_finite()) {
            return fail("lr", format!("lr must be positive, got {}", self.train.lr));
        }
        if self.train.weight_decay.is_nan() || self.train.weight_decay < 0.0 {
            return fail("weight_decay", "weight_decay must be non-negative".into());
        }
        if !(0.0..1.0).contains(&self.model.dropout) {
            return fail("dropout", format!("dropout must be in [0, 1), got {}", self.model.dropout));
        }
        if let Err(e) = self.alif().validate() {
            return fail("tau_init", e.to_string());
        }
        if self.task == Task::Vae && (self.vae.latent_dim == 0 || self.vae.beta < 0.0) {
            return fail("latent_dim", "latent_dim must be positive and beta non-negative".into());
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn alif(&self) -> AlifParams {
        AlifParams {
            tau: self.model.tau_init,
            v_th: self.model.vth_init,
            a: self.model.a,
            tau_learnable: self.model.tau_learnable,
            vth_learnable: self.model.vth_learnable,
        }
    }

    pub fn optimizer(&self) -> OptimizerConfig {
        match self.train.optimizer {
            OptimizerKind::Adam => OptimizerConfig::adam(self.train.lr),
            OptimizerKind::AdamW => OptimizerConfig::adamw(self.train.lr, self.train.weight_decay),
        }
    }

    pub fn svae_config(&self) -> SvaeConfig {
        SvaeConfig {
            image: self.data.dataset.image_shape(),
            time_steps: self.model.time_steps,
            latent: self.vae.latent_dim,
            channels: self.vae.channels,
            beta: self.vae.beta,
            alif: self.alif(),
            taid_mode: self.vae.taid_mode,
        }
    }

    /// Fresh classifier and trainer. Weights come from `split(0)` of the
    /// seed stream and the trainer's own stream is `split(1)`.
    pub fn classifier_trainer(&self) -> Result<ClassifierTrainer> {
        let root = Rng::new(self.seed);
        let arch = parse_arch(&self.model.arch)?;
        let shape = self.data.dataset.image_shape();
        let model = Classifier::build(&arch, &shape, self.model.time_steps, self.alif(), self.model.dropout, &mut root.split(0))?;
        let settings = TrainSettings {
            batch_size: self.train.batch_size,
            optimizer: self.optimizer(),
            loss: self.train.loss,
        };
        Ok(ClassifierTrainer::new(model, settings, root.split(1)))
    }

    pub fn vae_trainer(&self) -> Result<VaeTrainer> {
        let root = Rng::new(self.seed);
        let model = Svae::new(self.svae_config(), &mut root.split(0))?;
        Ok(VaeTrainer::new(model, self.optimizer(), root.split(1)))
    }
}

fn line_of(text: &str, byte: usize) -> usize {
    text[..byte.min(text.len())].matches('\n').count() + 1
}

/// Line on which `key` is assigned, or 0 when it is absent.
fn key_line(text: &str, key: &str) -> usize {
    text.lines()
        .position(|l| l.split('=').next().is_some_and(|k| k.trim() == key) && l.contains('='))
        .map(|i| i + 1)
        .unwrap_or(0)
}

/// Last path component of a "in `section.key`" suffix.
fn error_key(msg: &str) -> Option<&str> {
    let path = msg.rsplit_once("in `")?.1.split('`').next()?;
    path.rsplit('.').next()
}

fn unknown_field(msg: &str) -> Option<&str> {
    let rest = msg.strip_prefix("unknown field `")?;
    rest.split('`').next()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_per_task() {
        let c = RunConfig::parse("task = \"classify\"\n").unwrap();
        assert_eq!((c.model.time_steps, c.train.batch_size), (8, 16));
        assert_eq!(c.train.optimizer, OptimizerKind::Adam);
        let v = RunConfig::parse("task = \"vae\"\n").unwrap();
        assert_eq!((v.model.time_steps, v.train.batch_size), (16, 200));
        assert_eq!(v.train.optimizer, OptimizerKind::AdamW);
        assert_eq!((v.train.lr, v.train.weight_decay), (0.001, 0.001));
    }

    #[test]
    fn overrides_and_roundtrip() {
        let text = "task = \"classify\"\nseed = 9\n[model]\ntime_steps = 4\ntau_learnable = false\n[data]\nsubset_n = 1000\n";
        let c = RunConfig::parse(text).unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.model.time_steps, 4);
        assert!(!c.model.tau_learnable);
        assert_eq!(c.model.vth_init, 0.2);
        assert_eq!(c.data.subset_n, Some(1000));
        assert_eq!(RunConfig::parse(&c.to_toml()).unwrap(), c);
    }

    fn line(e: Error) -> usize {
        match e {
            Error::Config { line, .. } => line,
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn errors_report_lines() {
        assert_eq!(line(RunConfig::parse("task = \"classify\"\n[train]\nlr = \"fast\"\n").unwrap_err()), 3);
        assert_eq!(line(RunConfig::parse("seed = 1\n\n[train]\nlr = -1.0\n").unwrap_err()), 4);
        assert_eq!(line(RunConfig::parse("[model]\ntime_steps = 4\nbogus = 1\n").unwrap_err()), 3);
        assert_eq!(line(RunConfig::parse("[model\n").unwrap_err()), 1);
        assert_eq!(line(RunConfig::parse("task = \"regress\"\n").unwrap_err()), 1);
        assert_eq!(line(RunConfig::parse("[train]\n\nbatch_size = 0\n").unwrap_err()), 3);
    }
}
