//! JSON experiment configuration.
//!
//! Unknown keys are rejected. Omitted training and method fields fall back
//! to the reference recipe: batch 128, lr 0.1 decayed by 0.2 at 1/4, 1/2 and
//! 3/4 of training, momentum 0.9, weight decay 5e-4, alpha 0.2 (20 for the
//! RegMixup variants), tau 0.5, kappa 3.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{self, BlobSpec, CifarVariant, Dataset, Split};
use crate::error::{Error, Result};
use crate::mixing::{AxisSelection, Method, MixConfig};
use crate::model::{SgdConfig, Standardizer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Cifar10,
    Cifar100,
    Blobs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    /// Directory of the CIFAR binary release.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default = "one")]
    pub fraction: f64,
    #[serde(default = "one")]
    pub imbalance_ratio: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blobs: Option<BlobSpec>,
}

fn one() -> f64 {
    1.0
}

impl DatasetSpec {
    pub fn blobs(spec: BlobSpec) -> Self {
        Self {
            kind: DatasetKind::Blobs,
            path: None,
            fraction: 1.0,
            imbalance_ratio: 1.0,
            blobs: Some(spec),
        }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            v.push(format!(
                "dataset.fraction must lie in (0, 1] (got {})",
                self.fraction
            ));
        }
        if !(self.imbalance_ratio > 0.0 && self.imbalance_ratio <= 1.0) {
            v.push(format!(
                "dataset.imbalance_ratio must lie in (0, 1] (got {})",
                self.imbalance_ratio
            ));
        }
        match self.kind {
            DatasetKind::Blobs => match &self.blobs {
                None => v.push("dataset.blobs is required for kind \"blobs\"".into()),
                Some(b) => {
                    if b.num_classes < 2 {
                        v.push("dataset.blobs.num_classes must be >= 2".into());
                    }
                    if b.per_class == 0 {
                        v.push("dataset.blobs.per_class must be >= 1".into());
                    }
                    if b.dim == 0 {
                        v.push("dataset.blobs.dim must be >= 1".into());
                    }
                    if !(b.spread > 0.0) {
                        v.push(format!(
                            "dataset.blobs.spread must be > 0 (got {})",
                            b.spread
                        ));
                    }
                }
            },
            DatasetKind::Cifar10 | DatasetKind::Cifar100 => {
                if self.path.is_none() {
                    v.push("dataset.path is required for CIFAR datasets".into());
                }
            }
        }
        v
    }

    fn cifar_variant(&self) -> Option<CifarVariant> {
        match self.kind {
            DatasetKind::Cifar10 => Some(CifarVariant::Cifar10),
            DatasetKind::Cifar100 => Some(CifarVariant::Cifar100),
            DatasetKind::Blobs => None,
        }
    }

    /// Raw (unstandardized) split.
    pub fn load_split(&self, split: Split) -> Result<Dataset> {
        match (self.cifar_variant(), &self.blobs) {
            (Some(variant), _) => {
                let dir = self.path.as_deref().ok_or_else(|| {
                    Error::Validation(vec!["dataset.path is required for CIFAR datasets".into()])
                })?;
                data::load_cifar(dir, variant, split)
            }
            (None, Some(b)) => {
                let (train, test) =
                    data::synth_blobs(b.num_classes, b.per_class, b.dim, b.spread, b.seed)?;
                Ok(match split {
                    Split::Train => train,
                    Split::Test => test,
                })
            }
            (None, None) => Err(Error::Validation(vec![
                "dataset.blobs is required for kind \"blobs\"".into(),
            ])),
        }
    }

    /// Training and test splits as used for a run: the training split is
    /// long-tailed, then fraction-subsampled, and the standardization fitted
    /// on it is applied to both splits.
    pub fn prepare(&self, seed: u64) -> Result<(Dataset, Dataset, Standardizer)> {
        let mut train = self.load_split(Split::Train)?;
        if self.imbalance_ratio < 1.0 {
            train = data::longtail_subsample(&train, self.imbalance_ratio, seed)?;
        }
        if self.fraction < 1.0 {
            train = data::stratified_subsample(&train, self.fraction, seed.wrapping_add(1))?;
        }
        let mut test = self.load_split(Split::Test)?;
        let st = data::standardize(&mut train, &mut [&mut test])?;
        Ok((train, test, st))
    }

    /// Parses inline JSON, or reads it from a file when `arg` is a path.
    pub fn from_arg(arg: &str) -> Result<Self> {
        let text = if arg.trim_start().starts_with('{') {
            arg.to_owned()
        } else {
            std::fs::read_to_string(arg).map_err(|e| Error::io(arg, e))?
        };
        let spec: Self = serde_json::from_str(&text)?;
        let v = spec.violations();
        if v.is_empty() {
            Ok(spec)
        } else {
            Err(Error::Validation(v))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    #[serde(default = "default_hidden")]
    pub hidden_dims: Vec<usize>,
}

fn default_hidden() -> Vec<usize> {
    vec![128]
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            hidden_dims: default_hidden(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSpec {
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_wd")]
    pub weight_decay: f64,
    /// Defaults to 1/4, 1/2 and 3/4 of `epochs`.
    #[serde(default)]
    pub lr_steps: Option<Vec<usize>>,
    #[serde(default = "default_decay")]
    pub lr_decay: f64,
    /// Writes measured seconds into `wall_time_s`; off keeps metrics
    /// byte-reproducible (the column is then 0).
    #[serde(default)]
    pub record_wall_time: bool,
}

fn default_epochs() -> usize {
    200
}
fn default_batch() -> usize {
    128
}
fn default_lr() -> f64 {
    0.1
}
fn default_momentum() -> f64 {
    0.9
}
fn default_wd() -> f64 {
    5e-4
}
fn default_decay() -> f64 {
    0.2
}

impl Default for TrainSpec {
    fn default() -> Self {
        Self {
            epochs: default_epochs(),
            batch_size: default_batch(),
            lr: default_lr(),
            momentum: default_momentum(),
            weight_decay: default_wd(),
            lr_steps: None,
            lr_decay: default_decay(),
            record_wall_time: false,
        }
    }
}

impl TrainSpec {
    pub fn sgd(&self) -> SgdConfig {
        SgdConfig {
            lr: self.lr,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            lr_steps: self
                .lr_steps
                .clone()
                .unwrap_or_else(|| SgdConfig::default_steps(self.epochs)),
            lr_decay: self.lr_decay,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSpec {
    #[serde(default = "default_method")]
    pub method: Method,
    /// Defaults per method.
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    #[serde(default)]
    pub axes: AxisSelection,
}

fn default_method() -> Method {
    Method::None
}
fn default_tau() -> f64 {
    0.5
}
fn default_kappa() -> f64 {
    3.0
}

impl Default for MethodSpec {
    fn default() -> Self {
        Self::from(MixConfig::new(Method::None))
    }
}

impl From<MixConfig> for MethodSpec {
    fn from(c: MixConfig) -> Self {
        Self {
            method: c.method,
            alpha: Some(c.alpha),
            tau: c.tau,
            kappa: c.kappa,
            axes: c.axes,
        }
    }
}

impl MethodSpec {
    pub fn mix_config(&self) -> MixConfig {
        MixConfig {
            method: self.method,
            alpha: self.alpha.unwrap_or_else(|| self.method.default_alpha()),
            tau: self.tau,
            kappa: self.kappa,
            axes: self.axes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default)]
    pub seed: u64,
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub model: ModelSpec,
    #[serde(default)]
    pub train: TrainSpec,
    #[serde(default)]
    pub method: MethodSpec,
}

impl TrainConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Every violated constraint, one message per field.
    pub fn violations(&self) -> Vec<String> {
        let mut v = self.dataset.violations();
        let t = &self.train;
        if t.epochs < 1 {
            v.push("train.epochs must be >= 1".into());
        }
        let min_batch = if self.method.method.mixes() { 2 } else { 1 };
        if t.batch_size < min_batch {
            v.push(format!(
                "train.batch_size must be >= {min_batch} for method {} (got {})",
                self.method.method.name(),
                t.batch_size
            ));
        }
        if !(t.lr > 0.0 && t.lr.is_finite()) {
            v.push(format!("train.lr must be > 0 (got {})", t.lr));
        }
        if !(0.0..1.0).contains(&t.momentum) {
            v.push(format!(
                "train.momentum must lie in [0, 1) (got {})",
                t.momentum
            ));
        }
        if !(t.weight_decay >= 0.0 && t.weight_decay.is_finite()) {
            v.push(format!(
                "train.weight_decay must be >= 0 (got {})",
                t.weight_decay
            ));
        }
        if !(t.lr_decay > 0.0 && t.lr_decay <= 1.0) {
            v.push(format!(
                "train.lr_decay must lie in (0, 1] (got {})",
                t.lr_decay
            ));
        }
        if let Some(steps) = &t.lr_steps {
            if steps.windows(2).any(|w| w[0] >= w[1]) {
                v.push(format!(
                    "train.lr_steps must be strictly increasing (got {steps:?})"
                ));
            }
        }
        if self.model.hidden_dims.contains(&0) {
            v.push("model.hidden_dims entries must be >= 1".into());
        }
        v.extend(self.method.mix_config().violations());
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(v))
        }
    }

    /// The config with every defaulted value written out.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        c.train.lr_steps = Some(self.train.sgd().lr_steps);
        c.method.alpha = Some(self.method.mix_config().alpha);
        c
    }
}
