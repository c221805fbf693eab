use std::path::Path;

use bifnet_core::bifurcated::{Preset, TrainConfig};
use bifnet_core::dataset::{ChannelMode, SyntheticSpec};
use bifnet_core::pipeline::{MnistConfig, PipelineConfig};
use bifnet_core::{Error, Result};
use clap::Args;
use serde::{Deserialize, Serialize};

/// Every tunable of every command. Unset optional fields fall back to the
/// per-command default noted on the field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Unset optimizer fields take the medical or MNIST training defaults.
    pub lr: Option<f64>,
    pub epochs: Option<usize>,
    pub weight_decay: Option<f64>,
    pub lr_decay: Option<f64>,
    pub batch: Option<usize>,
    /// MNIST one-vs-rest network epochs.
    pub separate_epochs: Option<usize>,
    /// Head retraining epochs.
    pub head_epochs: Option<usize>,
    pub channel_mode: ChannelMode,
    /// `medical` for the patch pipeline, `mnist` for the digit benchmark.
    pub preset: Option<Preset>,
    /// Negatives kept per positive in balanced training sets.
    pub balance_ratio: Option<f64>,
    pub train_fraction: f64,
    /// Class directories to load, in this order; all of them when unset.
    pub classes: Option<Vec<String>>,
    /// Images per class written by `synth`.
    pub per_class: usize,
    /// Leading MNIST training samples used.
    pub train_samples: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let pipeline = PipelineConfig::default();
        RunConfig {
            seed: 0,
            lr: None,
            epochs: None,
            weight_decay: None,
            lr_decay: None,
            batch: None,
            separate_epochs: None,
            head_epochs: None,
            channel_mode: pipeline.channel_mode,
            preset: None,
            balance_ratio: None,
            train_fraction: pipeline.train_fraction,
            classes: None,
            per_class: 20,
            train_samples: MnistConfig::default().train_samples,
        }
    }
}

/// Flags shared by all commands; each one overrides the config file.
#[derive(Args, Clone, Debug, Default)]
pub struct Overrides {
    /// JSON file with any subset of the configuration fields.
    #[arg(long, global = true)]
    pub config: Option<std::path::PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub lr: Option<f64>,
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    #[arg(long, global = true)]
    pub weight_decay: Option<f64>,
    #[arg(long, global = true)]
    pub lr_decay: Option<f64>,
    #[arg(long, global = true)]
    pub batch: Option<usize>,
    #[arg(long, global = true)]
    pub separate_epochs: Option<usize>,
    #[arg(long, global = true)]
    pub head_epochs: Option<usize>,
    /// Patch channels: wce (gray, HSV saturation, CIELAB a*) or rgb.
    #[arg(long, global = true)]
    pub channel_mode: Option<ChannelMode>,
    #[arg(long, global = true)]
    pub preset: Option<Preset>,
    #[arg(long, global = true)]
    pub balance_ratio: Option<f64>,
    #[arg(long, global = true)]
    pub train_fraction: Option<f64>,
    /// Comma-separated class names.
    #[arg(long, global = true, value_delimiter = ',')]
    pub classes: Option<Vec<String>>,
    #[arg(long, global = true)]
    pub per_class: Option<usize>,
    #[arg(long, global = true)]
    pub train_samples: Option<usize>,
}

impl RunConfig {
    /// Defaults, then the config file, then the flags.
    pub fn resolve(flags: &Overrides) -> Result<Self> {
        let mut cfg = match &flags.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
                    path: path.clone(),
                    source: e,
                })?;
                serde_json::from_str(&text)
                    .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
            }
            None => RunConfig::default(),
        };
        macro_rules! apply {
            ($($f:ident),*) => {$(if let Some(v) = &flags.$f { cfg.$f = v.clone(); })*};
        }
        apply!(seed, channel_mode, train_fraction, per_class, train_samples);
        macro_rules! apply_opt {
            ($($f:ident),*) => {$(if let Some(v) = &flags.$f { cfg.$f = Some(v.clone()); })*};
        }
        apply_opt!(lr, epochs, weight_decay, lr_decay, batch, separate_epochs, head_epochs, balance_ratio, preset, classes);
        Ok(cfg)
    }

    /// Fills the unset medical defaults so the echoed config is complete.
    pub fn settle(&mut self) -> Result<()> {
        let base = PipelineConfig::default();
        self.settle_train(Preset::Medical, &base.train)?;
        let epochs = self.epochs;
        self.head_epochs = self.head_epochs.or(base.head_epochs).or(epochs);
        self.balance_ratio.get_or_insert(base.balance_ratio);
        Ok(())
    }

    /// Fills the unset MNIST defaults so the echoed config is complete.
    pub fn settle_mnist(&mut self) -> Result<()> {
        let base = MnistConfig::default();
        self.settle_train(Preset::Mnist, &base.train)?;
        let epochs = self.epochs;
        self.separate_epochs = self.separate_epochs.or(base.separate_epochs).or(epochs);
        self.head_epochs = self.head_epochs.or(base.head_epochs).or(epochs);
        self.balance_ratio.get_or_insert(base.balance_ratio);
        Ok(())
    }

    fn settle_train(&mut self, preset: Preset, base: &TrainConfig) -> Result<()> {
        self.require_preset(preset)?;
        self.preset = Some(preset);
        self.lr.get_or_insert(base.lr);
        self.weight_decay.get_or_insert(base.weight_decay);
        self.lr_decay.get_or_insert(base.lr_decay);
        self.batch.get_or_insert(base.batch);
        self.epochs.get_or_insert(base.epochs);
        self.train_config().validate()
    }

    pub fn require_preset(&self, expected: Preset) -> Result<()> {
        match self.preset {
            Some(p) if p != expected => Err(Error::Architecture(format!(
                "this command runs the {} architecture, configuration selects {}",
                preset_name(expected),
                preset_name(p)
            ))),
            _ => Ok(()),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let base = TrainConfig::default();
        TrainConfig {
            lr: self.lr.unwrap_or(base.lr),
            epochs: self.epochs.unwrap_or(base.epochs),
            batch: self.batch.unwrap_or(base.batch),
            seed: self.seed,
            weight_decay: self.weight_decay.unwrap_or(base.weight_decay),
            lr_decay: self.lr_decay.unwrap_or(base.lr_decay),
        }
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            train: self.train_config(),
            head_epochs: self.head_epochs,
            channel_mode: self.channel_mode,
            balance_ratio: self.balance_ratio.unwrap_or(PipelineConfig::default().balance_ratio),
            train_fraction: self.train_fraction,
        }
    }

    pub fn mnist(&self) -> MnistConfig {
        MnistConfig {
            train: self.train_config(),
            separate_epochs: self.separate_epochs,
            head_epochs: self.head_epochs,
            train_samples: self.train_samples,
            balance_ratio: self.balance_ratio.unwrap_or(MnistConfig::default().balance_ratio),
        }
    }

    pub fn synthetic(&self) -> Result<SyntheticSpec> {
        match &self.classes {
            Some(names) => {
                let mut spec = SyntheticSpec::with_classes(names.len())?;
                spec.class_names = names.clone();
                spec.validate()?;
                Ok(spec)
            }
            None => Ok(SyntheticSpec::default()),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join("effective_config.json");
        let text = serde_json::to_string_pretty(self)? + "\n";
        std::fs::write(&path, text).map_err(|e| Error::Io { path, source: e })
    }
}

fn preset_name(p: Preset) -> &'static str {
    match p {
        Preset::Medical => "medical",
        Preset::Mnist => "mnist",
    }
}
