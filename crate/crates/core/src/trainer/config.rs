//! Training configuration and its flat `key = value` text form.
//!
//! Blank lines and `#` comments are ignored; unknown keys are errors. Every
//! key has a default, so an empty file is a valid configuration.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::data::AugmentationPolicy;
use crate::error::{ConfigIssue, Error, Result};
use crate::losses::LossConfig;
use crate::model::{MlpSpec, Normalization};
use crate::sinkhorn::{SinkhornConfig, SolveMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schedule {
    Constant,
    Cosine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncoderMode {
    /// Keys from a second, gradient-free pass of the query parameters.
    InBatch,
    /// Keys from an EMA copy of the parameters, plus a queue of old keys.
    Momentum,
}

/// What Sinkhorn sees: the normalized cluster logits as they are, or
/// divided by the softmax temperature `t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SinkhornInput {
    Normalized,
    Scaled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub alpha: f64,
    pub tau: f64,
    pub t: f64,
    pub epsilon: f64,
    pub sinkhorn_iterations: usize,
    pub sinkhorn_input: SinkhornInput,
    pub lr: f64,
    pub sgd_momentum: f64,
    pub weight_decay: f64,
    pub schedule: Schedule,
    pub epochs: usize,
    pub batch_size: usize,
    pub mode: EncoderMode,
    pub ema_momentum: f64,
    pub queue_capacity: usize,
    pub clusters: usize,
    pub instance_dim: usize,
    pub hidden: Vec<usize>,
    pub aug_sigma: f64,
    pub normalize_cluster: bool,
    pub normalize_instance: bool,
    pub self_label: bool,
    pub self_label_threshold: f64,
    pub self_label_epochs: usize,
    pub self_label_lr: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 5.0,
            tau: 0.15,
            t: 0.10,
            epsilon: 0.05,
            sinkhorn_iterations: 3,
            sinkhorn_input: SinkhornInput::Normalized,
            lr: 0.06,
            sgd_momentum: 0.9,
            weight_decay: 5e-4,
            schedule: Schedule::Cosine,
            epochs: 200,
            batch_size: 256,
            mode: EncoderMode::InBatch,
            ema_momentum: 0.99,
            queue_capacity: 1024,
            clusters: 4,
            instance_dim: 32,
            hidden: vec![128, 128],
            aug_sigma: 0.5,
            normalize_cluster: true,
            normalize_instance: true,
            self_label: false,
            self_label_threshold: 0.99,
            self_label_epochs: 20,
            self_label_lr: 0.01,
            seed: 0,
        }
    }
}

fn parse_bool(s: &str) -> Option<bool> {
    match s {
        "true" | "yes" | "on" | "1" => Some(true),
        "false" | "no" | "off" | "0" => Some(false),
        _ => None,
    }
}

impl TrainConfig {
    /// Every violated rule, each named by field.
    pub fn validate(&self) -> Result<()> {
        let mut issues = Vec::new();
        let mut bad = |field: &'static str, msg: String| issues.push(ConfigIssue::new(field, msg));
        if !(self.t > 0.0) {
            bad("t", format!("t = {} must be positive", self.t));
        }
        if !(self.t <= self.tau) {
            bad("t", format!("t = {} must not exceed tau = {}", self.t, self.tau));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            bad("tau", format!("tau = {} must lie in (0, 1]", self.tau));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            bad("alpha", format!("alpha = {} must be finite and non-negative", self.alpha));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            bad("epsilon", format!("epsilon = {} must be positive", self.epsilon));
        }
        if self.sinkhorn_iterations == 0 {
            bad("sinkhorn_iterations", "need at least one iteration".into());
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            bad("lr", format!("lr = {} must be finite and non-negative", self.lr));
        }
        if !(0.0..1.0).contains(&self.sgd_momentum) {
            bad("sgd_momentum", format!("{} outside [0, 1)", self.sgd_momentum));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            bad("weight_decay", format!("{} must be non-negative", self.weight_decay));
        }
        if self.batch_size < 2 {
            bad("batch_size", format!("batch size {} must be at least 2", self.batch_size));
        }
        if !(0.0..=1.0).contains(&self.ema_momentum) {
            bad("ema_momentum", format!("{} outside [0, 1]", self.ema_momentum));
        }
        if self.clusters < 2 {
            bad("clusters", "need at least two clusters".into());
        }
        if self.instance_dim == 0 {
            bad("instance_dim", "instance width must be positive".into());
        }
        if self.hidden.iter().any(|&h| h == 0) {
            bad("hidden", "hidden widths must be positive".into());
        }
        if !(self.aug_sigma >= 0.0 && self.aug_sigma.is_finite()) {
            bad("aug_sigma", "noise sigma must be non-negative".into());
        }
        if !(self.self_label_threshold > 0.0 && self.self_label_threshold <= 1.0) {
            bad("self_label_threshold", format!("{} outside (0, 1]", self.self_label_threshold));
        }
        if !(self.self_label_lr >= 0.0 && self.self_label_lr.is_finite()) {
            bad("self_label_lr", "must be finite and non-negative".into());
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(issues))
        }
    }

    pub fn spec(&self, input: usize) -> Result<MlpSpec> {
        MlpSpec::new(input, self.hidden.clone(), self.clusters, self.instance_dim)
    }

    pub fn loss(&self) -> LossConfig {
        LossConfig {
            tau: self.tau,
            t: self.t,
            alpha: self.alpha,
        }
    }

    pub fn sinkhorn(&self) -> SinkhornConfig {
        SinkhornConfig {
            epsilon: self.epsilon,
            iterations: self.sinkhorn_iterations,
            ..Default::default()
        }
    }

    pub fn sinkhorn_mode(&self) -> SolveMode {
        SolveMode::Fixed
    }

    pub fn normalization(&self) -> Normalization {
        Normalization {
            cluster: self.normalize_cluster,
            instance: self.normalize_instance,
        }
    }

    pub fn weak_augmentation(&self) -> AugmentationPolicy {
        AugmentationPolicy::weak(self.aug_sigma)
    }

    pub fn strong_augmentation(&self) -> AugmentationPolicy {
        AugmentationPolicy::strong(self.aug_sigma)
    }

    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        fn num<T: FromStr>(v: &str) -> std::result::Result<T, String> {
            v.parse().map_err(|_| format!("cannot parse {v:?}"))
        }
        fn flag(v: &str) -> std::result::Result<bool, String> {
            parse_bool(v).ok_or_else(|| format!("expected true/false, got {v:?}"))
        }
        match key {
            "alpha" => self.alpha = num(value)?,
            "tau" => self.tau = num(value)?,
            "t" => self.t = num(value)?,
            "epsilon" => self.epsilon = num(value)?,
            "sinkhorn_iterations" => self.sinkhorn_iterations = num(value)?,
            "sinkhorn_input" => {
                self.sinkhorn_input = match value {
                    "normalized" => SinkhornInput::Normalized,
                    "scaled" => SinkhornInput::Scaled,
                    _ => return Err(format!("expected normalized|scaled, got {value:?}")),
                }
            }
            "lr" => self.lr = num(value)?,
            "sgd_momentum" => self.sgd_momentum = num(value)?,
            "weight_decay" => self.weight_decay = num(value)?,
            "schedule" => {
                self.schedule = match value {
                    "constant" => Schedule::Constant,
                    "cosine" => Schedule::Cosine,
                    _ => return Err(format!("expected constant|cosine, got {value:?}")),
                }
            }
            "epochs" => self.epochs = num(value)?,
            "batch_size" => self.batch_size = num(value)?,
            "mode" => {
                self.mode = match value {
                    "in-batch" => EncoderMode::InBatch,
                    "momentum" => EncoderMode::Momentum,
                    _ => return Err(format!("expected in-batch|momentum, got {value:?}")),
                }
            }
            "ema_momentum" => self.ema_momentum = num(value)?,
            "queue_capacity" => self.queue_capacity = num(value)?,
            "clusters" => self.clusters = num(value)?,
            "instance_dim" => self.instance_dim = num(value)?,
            "hidden" => {
                self.hidden = if value.is_empty() {
                    Vec::new()
                } else {
                    value.split(',').map(|w| num(w.trim())).collect::<std::result::Result<_, _>>()?
                }
            }
            "aug_sigma" => self.aug_sigma = num(value)?,
            "normalize_cluster" => self.normalize_cluster = flag(value)?,
            "normalize_instance" => self.normalize_instance = flag(value)?,
            "self_label" => self.self_label = flag(value)?,
            "self_label_threshold" => self.self_label_threshold = num(value)?,
            "self_label_epochs" => self.self_label_epochs = num(value)?,
            "self_label_lr" => self.self_label_lr = num(value)?,
            "seed" => self.seed = num(value)?,
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    /// Parses the text form on top of the defaults, then validates.
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |detail: String| Error::Parse {
                path: origin.to_path_buf(),
                line: n + 1,
                detail,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, got {line:?}")))?;
            cfg.set(key.trim(), value.trim()).map_err(err)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, path)
    }

    /// Canonical text form; parsing it gives back an equal config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let hidden: Vec<String> = self.hidden.iter().map(|h| h.to_string()).collect();
        let _ = writeln!(s, "# clc {}", crate::VERSION);
        let _ = writeln!(s, "alpha = {}", self.alpha);
        let _ = writeln!(s, "tau = {}", self.tau);
        let _ = writeln!(s, "t = {}", self.t);
        let _ = writeln!(s, "epsilon = {}", self.epsilon);
        let _ = writeln!(s, "sinkhorn_iterations = {}", self.sinkhorn_iterations);
        let _ = writeln!(
            s,
            "sinkhorn_input = {}",
            match self.sinkhorn_input {
                SinkhornInput::Normalized => "normalized",
                SinkhornInput::Scaled => "scaled",
            }
        );
        let _ = writeln!(s, "lr = {}", self.lr);
        let _ = writeln!(s, "sgd_momentum = {}", self.sgd_momentum);
        let _ = writeln!(s, "weight_decay = {}", self.weight_decay);
        let _ = writeln!(
            s,
            "schedule = {}",
            match self.schedule {
                Schedule::Constant => "constant",
                Schedule::Cosine => "cosine",
            }
        );
        let _ = writeln!(s, "epochs = {}", self.epochs);
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(
            s,
            "mode = {}",
            match self.mode {
                EncoderMode::InBatch => "in-batch",
                EncoderMode::Momentum => "momentum",
            }
        );
        let _ = writeln!(s, "ema_momentum = {}", self.ema_momentum);
        let _ = writeln!(s, "queue_capacity = {}", self.queue_capacity);
        let _ = writeln!(s, "clusters = {}", self.clusters);
        let _ = writeln!(s, "instance_dim = {}", self.instance_dim);
        let _ = writeln!(s, "hidden = {}", hidden.join(","));
        let _ = writeln!(s, "aug_sigma = {}", self.aug_sigma);
        let _ = writeln!(s, "normalize_cluster = {}", self.normalize_cluster);
        let _ = writeln!(s, "normalize_instance = {}", self.normalize_instance);
        let _ = writeln!(s, "self_label = {}", self.self_label);
        let _ = writeln!(s, "self_label_threshold = {}", self.self_label_threshold);
        let _ = writeln!(s, "self_label_epochs = {}", self.self_label_epochs);
        let _ = writeln!(s, "self_label_lr = {}", self.self_label_lr);
        let _ = writeln!(s, "seed = {}", self.seed);
        s
    }
}
