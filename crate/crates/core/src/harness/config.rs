use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::kernels::KernelConfig;
use crate::losses::LossWeights;
use crate::samplers::SamplerConfig;

use super::data::SyntheticSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DataSource {
    Synthetic(SyntheticSpec),
    Csv { train: PathBuf, test: PathBuf },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic(SyntheticSpec::default())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossMode {
    Ce,
    Kd,
    Mimic,
    Cckd,
}

/// Instance-congruence term used inside the CCKD objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum InstanceLoss {
    #[default]
    Kd,
    Mimic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Epochs (0-based) at whose start the learning rate is multiplied by `decay_factor`.
    pub decay_epochs: Vec<usize>,
    pub decay_factor: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 5e-4,
            decay_epochs: vec![12, 18],
            decay_factor: 0.1,
        }
    }
}

impl OptimizerConfig {
    /// `lr · factor^i` where `i` counts decay epochs `<= epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let i = self.decay_epochs.iter().filter(|&&e| e <= epoch).count();
        self.lr * self.decay_factor.powi(i as i32)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.lr.is_finite() || self.lr <= 0.0 {
            return Err(Error::config(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if self.decay_epochs.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config(format!(
                "decay epochs must be strictly increasing, got {:?}",
                self.decay_epochs
            )));
        }
        if !self.decay_factor.is_finite() || self.decay_factor <= 0.0 {
            return Err(Error::config(format!(
                "decay factor must be positive, got {}",
                self.decay_factor
            )));
        }
        Ok(())
    }
}

/// Hidden widths and training schedule of one network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub optimizer: OptimizerConfig,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            hidden: vec![8],
            epochs: 20,
            optimizer: OptimizerConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Number of classes (lowest labels first) shown in heatmaps.
    pub heatmap_classes: usize,
    /// Test examples taken per shown class, in dataset order.
    pub heatmap_per_class: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            heatmap_classes: 4,
            heatmap_per_class: 20,
        }
    }
}

/// Everything needed to reproduce one teacher/student experiment.
///
/// `sampler.seed` is ignored by the harness: sampling, initialization and
/// held-out batching all derive their seeds from `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub data: DataSource,
    pub embedding_dim: usize,
    pub teacher: NetworkConfig,
    pub student: NetworkConfig,
    pub loss_mode: LossMode,
    pub instance_loss: InstanceLoss,
    pub weights: LossWeights,
    pub kernel: KernelConfig,
    pub sampler: SamplerConfig,
    pub analysis: AnalysisConfig,
    /// Optional pre-trained teacher; trained from scratch when absent.
    pub teacher_checkpoint: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data: DataSource::default(),
            embedding_dim: 16,
            teacher: NetworkConfig {
                hidden: vec![128, 128],
                epochs: 20,
                optimizer: OptimizerConfig::default(),
            },
            student: NetworkConfig {
                hidden: vec![8],
                epochs: 20,
                optimizer: OptimizerConfig {
                    lr: 0.05,
                    ..Default::default()
                },
            },
            loss_mode: LossMode::Cckd,
            instance_loss: InstanceLoss::Kd,
            weights: LossWeights::default(),
            kernel: KernelConfig::default(),
            sampler: SamplerConfig::default(),
            analysis: AnalysisConfig::default(),
            teacher_checkpoint: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embedding_dim == 0 {
            return Err(Error::config("embedding width must be positive"));
        }
        self.teacher.optimizer.validate()?;
        self.student.optimizer.validate()?;
        self.weights.validate()?;
        self.kernel.validate()?;
        self.sampler.validate()?;
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Applies `key=value` overrides. Keys are dotted paths into the JSON form
    /// (`weights.beta`, `sampler.per_class`); values are parsed as JSON and
    /// fall back to plain strings.
    pub fn with_overrides<'a, I>(&self, overrides: I) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a str, &'a str)>,
    {
        let mut value = serde_json::to_value(self)?;
        for (key, raw) in overrides {
            let parsed: Value =
                serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            set_path(&mut value, key, parsed)?;
        }
        let cfg: Self = serde_json::from_value(value)
            .map_err(|e| Error::config(format!("override produced an invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn set_path(root: &mut Value, key: &str, v: Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    let mut node = root;
    for (i, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Error::config(format!("cannot descend into {key:?} at {part:?}")))?;
        if i + 1 == parts.len() {
            obj.insert((*part).to_string(), v);
            return Ok(());
        }
        node = obj
            .entry((*part).to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    Err(Error::config(format!("empty override key {key:?}")))
}
