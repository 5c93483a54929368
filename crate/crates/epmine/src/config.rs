//! Flat `key = value` experiment configuration. One assignment per line,
//! `#` starts a comment, unknown keys are rejected.

use std::path::{Path, PathBuf};

use crate::data::{FileFormat, SamplerConfig, SyntheticSpec};
use crate::encoder::{MlpConfig, TrainConfig};
use crate::error::{Error, Result};
use crate::eval::{RetrievalConfig, RetrievalMode};
use crate::losses::{LossConfig, LossStrategy, ShnFallback};

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    // synthetic data
    pub num_classes: usize,
    pub modes_per_class: usize,
    pub samples_per_class: usize,
    pub input_dim: usize,
    pub mode_separation: f64,
    pub class_separation: f64,
    pub noise_std: f64,
    // sampler
    pub batch_size: usize,
    pub group_size: usize,
    // encoder
    pub hidden_dims: Vec<usize>,
    pub embed_dim: usize,
    pub init_scale: f64,
    // training
    pub epochs: usize,
    pub base_lr: f64,
    pub lr_decay_epochs: Vec<usize>,
    pub lr_decay_factor: f64,
    pub momentum: f64,
    // loss
    pub strategy: LossStrategy,
    pub temperature: f64,
    pub margin: f64,
    pub shn_fallback: ShnFallback,
    // retrieval
    pub k_values: Vec<usize>,
    pub retrieval_mode: RetrievalMode,
    pub exclude_self: bool,
    // experiment plumbing
    pub seed: u64,
    pub out_dir: PathBuf,
    pub dataset: Option<PathBuf>,
    pub gallery: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub data_format: FileFormat,
    pub train_fraction: f64,
    pub sweep_group_sizes: Vec<usize>,
    pub sweep_strategies: Vec<LossStrategy>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            num_classes: 16,
            modes_per_class: 2,
            samples_per_class: 16,
            input_dim: 8,
            mode_separation: 2.0,
            class_separation: 6.0,
            noise_std: 0.3,
            batch_size: 128,
            group_size: 4,
            hidden_dims: vec![64],
            embed_dim: 64,
            init_scale: std::f64::consts::SQRT_2,
            epochs: 40,
            base_lr: 0.0005,
            lr_decay_epochs: vec![20, 30],
            lr_decay_factor: 0.1,
            momentum: 0.0,
            strategy: LossStrategy::Epshn,
            temperature: 0.1,
            margin: 0.1,
            shn_fallback: ShnFallback::Hardest,
            k_values: vec![1, 2, 4, 8],
            retrieval_mode: RetrievalMode::SelfQuery,
            exclude_self: true,
            seed: 0,
            out_dir: PathBuf::from("."),
            dataset: None,
            gallery: None,
            checkpoint: None,
            data_format: FileFormat::Csv,
            train_fraction: 0.5,
            sweep_group_sizes: vec![2, 4, 8],
            sweep_strategies: vec![LossStrategy::Epshn],
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("bad value '{v}' for key '{key}'")))
}

fn parse_list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',')
        .map(|p| parse_num(key, p.trim()))
        .collect()
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" => Ok(true),
        "false" | "0" => Ok(false),
        _ => Err(Error::Config(format!("bad value '{v}' for key '{key}'"))),
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected 'key = value'", lineno + 1))
            })?;
            cfg.apply(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "num_classes" => self.num_classes = parse_num(key, v)?,
            "modes_per_class" => self.modes_per_class = parse_num(key, v)?,
            "samples_per_class" => self.samples_per_class = parse_num(key, v)?,
            "input_dim" => self.input_dim = parse_num(key, v)?,
            "mode_separation" => self.mode_separation = parse_num(key, v)?,
            "class_separation" => self.class_separation = parse_num(key, v)?,
            "noise_std" => self.noise_std = parse_num(key, v)?,
            "batch_size" => self.batch_size = parse_num(key, v)?,
            "group_size" => self.group_size = parse_num(key, v)?,
            "hidden_dims" => self.hidden_dims = parse_list(key, v)?,
            "embed_dim" => self.embed_dim = parse_num(key, v)?,
            "init_scale" => self.init_scale = parse_num(key, v)?,
            "epochs" => self.epochs = parse_num(key, v)?,
            "base_lr" => self.base_lr = parse_num(key, v)?,
            "lr_decay_epochs" => {
                self.lr_decay_epochs = if v.is_empty() {
                    vec![]
                } else {
                    parse_list(key, v)?
                }
            }
            "lr_decay_factor" => self.lr_decay_factor = parse_num(key, v)?,
            "momentum" => self.momentum = parse_num(key, v)?,
            "strategy" => self.strategy = LossStrategy::parse(v)?,
            "temperature" => self.temperature = parse_num(key, v)?,
            "margin" => self.margin = parse_num(key, v)?,
            "shn_fallback" => self.shn_fallback = ShnFallback::parse(v)?,
            "k_values" => self.k_values = parse_list(key, v)?,
            "retrieval_mode" => self.retrieval_mode = RetrievalMode::parse(v)?,
            "exclude_self" => self.exclude_self = parse_bool(key, v)?,
            "seed" => self.seed = parse_num(key, v)?,
            "out_dir" => self.out_dir = PathBuf::from(v),
            "dataset" => self.dataset = Some(PathBuf::from(v)),
            "gallery" => self.gallery = Some(PathBuf::from(v)),
            "checkpoint" => self.checkpoint = Some(PathBuf::from(v)),
            "data_format" => self.data_format = FileFormat::parse(v)?,
            "train_fraction" => self.train_fraction = parse_num(key, v)?,
            "sweep_group_sizes" => self.sweep_group_sizes = parse_list(key, v)?,
            "sweep_strategies" => {
                self.sweep_strategies = v
                    .split(',')
                    .map(|p| LossStrategy::parse(p.trim()))
                    .collect::<Result<_>>()?
            }
            other => return Err(Error::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    /// Revalidate every component invariant after load.
    fn validate(&self) -> Result<()> {
        self.synthetic_spec().validate()?;
        self.sampler_config().validate()?;
        self.loss_config().validate()?;
        self.train_config().validate()?;
        self.retrieval_config().validate()?;
        self.mlp_config(self.input_dim).validate()?;
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config("train_fraction must be in (0, 1)".into()));
        }
        Ok(())
    }

    pub fn synthetic_spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            num_classes: self.num_classes,
            modes_per_class: self.modes_per_class,
            samples_per_class: self.samples_per_class,
            input_dim: self.input_dim,
            mode_separation: self.mode_separation,
            class_separation: self.class_separation,
            noise_std: self.noise_std,
            seed: self.seed,
        }
    }

    pub fn sampler_config(&self) -> SamplerConfig {
        SamplerConfig {
            batch_size: self.batch_size,
            group_size: self.group_size,
            seed: self.seed,
        }
    }

    pub fn mlp_config(&self, input_dim: usize) -> MlpConfig {
        MlpConfig {
            input_dim,
            hidden_dims: self.hidden_dims.clone(),
            embed_dim: self.embed_dim,
            init_scale: self.init_scale,
            seed: self.seed,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            base_lr: self.base_lr,
            lr_decay_epochs: self.lr_decay_epochs.clone(),
            lr_decay_factor: self.lr_decay_factor,
            momentum: self.momentum,
        }
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            strategy: self.strategy,
            temperature: self.temperature,
            margin: self.margin,
            shn_fallback: self.shn_fallback,
        }
    }

    pub fn retrieval_config(&self) -> RetrievalConfig {
        RetrievalConfig {
            k_values: self.k_values.clone(),
            mode: self.retrieval_mode,
            exclude_self: self.exclude_self,
        }
    }
}
