//! Run configuration, read from TOML. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use msaunet_core::encoder::EncoderSpec;
use msaunet_core::loss::{CompoundLossConfig, Reduction};
use msaunet_core::network::{MsauNetConfig, DEFAULT_DECODER_CHANNELS};
use msaunet_core::optim::OptimizerKind;
use serde::{Deserialize, Serialize};

use crate::data::{MaskEncoding, Normalization};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelSection,
    pub loss: LossSection,
    pub optimizer: OptimizerSection,
    pub training: TrainingSection,
    pub dataset: DatasetSection,
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    /// `tiny` or `densenet169`.
    pub encoder: String,
    pub num_classes: usize,
    pub input_height: usize,
    pub input_width: usize,
    pub decoder_channels: Vec<usize>,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            encoder: "tiny".into(),
            num_classes: 3,
            input_height: 64,
            input_width: 64,
            decoder_channels: DEFAULT_DECODER_CHANNELS.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ReductionChoice {
    Mean,
    Sum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossSection {
    pub w_iou: f64,
    pub w_dice: f64,
    pub w_wce: f64,
    pub dice_alpha: f64,
    pub eps1: f64,
    pub eps2: f64,
    pub background_class: u16,
    pub wce_reduction: ReductionChoice,
}

impl Default for LossSection {
    fn default() -> Self {
        let d = CompoundLossConfig::default();
        Self {
            w_iou: d.w_iou,
            w_dice: d.w_dice,
            w_wce: d.w_wce,
            dice_alpha: d.dice_alpha,
            eps1: d.eps1,
            eps2: d.eps2,
            background_class: d.background_class,
            wce_reduction: ReductionChoice::Mean,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerChoice {
    Sgd,
    Rmsprop,
    Adam,
}

impl From<OptimizerChoice> for OptimizerKind {
    fn from(c: OptimizerChoice) -> Self {
        match c {
            OptimizerChoice::Sgd => OptimizerKind::Sgd,
            OptimizerChoice::Rmsprop => OptimizerKind::RmsProp,
            OptimizerChoice::Adam => OptimizerKind::Adam,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerSection {
    pub kind: OptimizerChoice,
    pub learning_rate: f64,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        Self {
            kind: OptimizerChoice::Adam,
            learning_rate: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSection {
    pub epochs: usize,
    pub batch_size: usize,
    /// Write an intermediate checkpoint every this many epochs; 0 disables.
    pub checkpoint_every: usize,
    pub seed: u64,
}

impl Default for TrainingSection {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 4,
            checkpoint_every: 10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetSource {
    Synthetic,
    Directory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    pub source: DatasetSource,
    pub synthetic_train: usize,
    pub synthetic_val: usize,
    pub synthetic_seed: u64,
    pub root: PathBuf,
    pub image_dir: String,
    pub mask_dir: String,
    /// Newline-separated stems; every mask in `mask_dir` when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_list: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_list: Option<PathBuf>,
    pub mask_encoding: MaskEncoding,
    pub void_label: u16,
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Default for DatasetSection {
    fn default() -> Self {
        let norm = Normalization::default();
        Self {
            source: DatasetSource::Synthetic,
            synthetic_train: 4,
            synthetic_val: 0,
            synthetic_seed: 7,
            root: PathBuf::from("."),
            image_dir: "JPEGImages".into(),
            mask_dir: "SegmentationClass".into(),
            train_list: None,
            val_list: None,
            mask_encoding: MaskEncoding::IndexedPalette,
            void_label: 255,
            mean: norm.mean,
            std: norm.std,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("runs/default"),
        }
    }
}

/// `(key, default, meaning)` for every configuration key, as shown by `--help`.
pub const CONFIG_KEYS: &[(&str, &str, &str)] = &[
    (
        "model.encoder",
        "\"tiny\"",
        "encoder geometry: tiny | densenet169",
    ),
    ("model.num_classes", "3", "number of classes N (>= 2)"),
    (
        "model.input_height",
        "64",
        "network input height (multiple of 32)",
    ),
    (
        "model.input_width",
        "64",
        "network input width (multiple of 32)",
    ),
    (
        "model.decoder_channels",
        "[256, 128, 64, 32, 16]",
        "decoder block widths, strictly decreasing",
    ),
    ("loss.w_iou", "1.0", "soft-IoU weight"),
    ("loss.w_dice", "0.01", "Dice weight"),
    ("loss.w_wce", "0.8", "weighted cross-entropy weight"),
    ("loss.dice_alpha", "1.0", "Dice smoothing constant"),
    (
        "loss.eps1",
        "1.0",
        "extra cross-entropy weight on boundary pixels",
    ),
    (
        "loss.eps2",
        "1.0",
        "extra cross-entropy weight on background pixels",
    ),
    ("loss.background_class", "0", "background class index"),
    (
        "loss.wce_reduction",
        "\"mean\"",
        "cross-entropy reduction: mean | sum",
    ),
    ("optimizer.kind", "\"adam\"", "sgd | rmsprop | adam"),
    ("optimizer.learning_rate", "0.001", "constant learning rate"),
    ("training.epochs", "50", "number of epochs"),
    ("training.batch_size", "4", "images per optimizer step"),
    (
        "training.checkpoint_every",
        "10",
        "intermediate checkpoint period in epochs (0 = off)",
    ),
    ("training.seed", "0", "seed for weights and shuffling"),
    ("dataset.source", "\"synthetic\"", "synthetic | directory"),
    ("dataset.synthetic_train", "4", "synthetic training images"),
    (
        "dataset.synthetic_val",
        "0",
        "synthetic validation images (0 = validate on training set)",
    ),
    ("dataset.synthetic_seed", "7", "synthetic generator seed"),
    ("dataset.root", "\".\"", "dataset root directory"),
    (
        "dataset.image_dir",
        "\"JPEGImages\"",
        "image directory under root",
    ),
    (
        "dataset.mask_dir",
        "\"SegmentationClass\"",
        "mask directory under root",
    ),
    (
        "dataset.train_list",
        "unset",
        "file of training stems (default: every mask)",
    ),
    (
        "dataset.val_list",
        "unset",
        "file of validation stems (default: none)",
    ),
    (
        "dataset.mask_encoding",
        "\"indexed-palette\"",
        "indexed-palette | ade-rg-channels | raw-class-index",
    ),
    (
        "dataset.void_label",
        "255",
        "label ignored by loss and metrics",
    ),
    (
        "dataset.mean",
        "[0.485, 0.456, 0.406]",
        "per-channel normalization mean",
    ),
    (
        "dataset.std",
        "[0.229, 0.224, 0.225]",
        "per-channel normalization std",
    ),
    (
        "output.dir",
        "\"runs/default\"",
        "directory for checkpoints, logs and reports",
    ),
];

/// Help text listing every key and its default.
pub fn config_help() -> String {
    let width = CONFIG_KEYS
        .iter()
        .map(|(k, _, _)| k.len())
        .max()
        .unwrap_or(0);
    let mut s = String::from("Configuration keys (TOML sections and defaults):\n");
    for (key, default, meaning) in CONFIG_KEYS {
        s.push_str(&format!("  {key:<width$}  = {default:<26} {meaning}\n"));
    }
    s
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    pub fn validate(&self) -> Result<()> {
        self.model_config()?.validate()?;
        self.loss_config().validate()?;
        if !(self.optimizer.learning_rate.is_finite() && self.optimizer.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "optimizer.learning_rate must be > 0, got {}",
                self.optimizer.learning_rate
            )));
        }
        if self.training.epochs == 0 {
            return Err(Error::Config("training.epochs must be >= 1".into()));
        }
        if self.training.batch_size == 0 {
            return Err(Error::Config("training.batch_size must be >= 1".into()));
        }
        if (self.dataset.void_label as usize) < self.model.num_classes {
            return Err(Error::Config(format!(
                "dataset.void_label {} collides with a class index (num_classes {})",
                self.dataset.void_label, self.model.num_classes
            )));
        }
        if self.dataset.std.iter().any(|s| s.is_nan() || *s <= 0.0) {
            return Err(Error::Config("dataset.std entries must be > 0".into()));
        }
        if self.dataset.source == DatasetSource::Synthetic && self.dataset.synthetic_train == 0 {
            return Err(Error::Config("dataset.synthetic_train must be >= 1".into()));
        }
        Ok(())
    }

    pub fn model_config(&self) -> Result<MsauNetConfig> {
        let encoder = EncoderSpec::by_name(&self.model.encoder).ok_or_else(|| {
            Error::Config(format!(
                "unknown model.encoder `{}` (expected tiny or densenet169)",
                self.model.encoder
            ))
        })?;
        Ok(MsauNetConfig {
            encoder,
            decoder_channels: self.model.decoder_channels.clone(),
            num_classes: self.model.num_classes,
            input_size: (self.model.input_height, self.model.input_width),
        })
    }

    pub fn loss_config(&self) -> CompoundLossConfig {
        let l = &self.loss;
        CompoundLossConfig {
            w_iou: l.w_iou,
            w_dice: l.w_dice,
            w_wce: l.w_wce,
            dice_alpha: l.dice_alpha,
            eps1: l.eps1,
            eps2: l.eps2,
            background_class: l.background_class,
            wce_reduction: match l.wce_reduction {
                ReductionChoice::Mean => Reduction::Mean,
                ReductionChoice::Sum => Reduction::Sum,
            },
        }
    }

    pub fn normalization(&self) -> Normalization {
        Normalization {
            mean: self.dataset.mean,
            std: self.dataset.std,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
        assert_eq!(RunConfig::from_toml("").unwrap(), c);
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = RunConfig::from_toml("[training]\nepochz = 3\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("epochz"), "{err}");
        let err = RunConfig::from_toml("[trainingg]\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("trainingg"), "{err}");
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(RunConfig::from_toml("[optimizer]\nkind = \"bogus\"\n").is_err());
        assert!(RunConfig::from_toml("[optimizer]\nlearning_rate = 0.0\n").is_err());
        assert!(RunConfig::from_toml("[training]\nepochs = 0\n").is_err());
        assert!(RunConfig::from_toml("[model]\ninput_height = 40\n").is_err());
        assert!(RunConfig::from_toml("[model]\nencoder = \"resnet\"\n").is_err());
        assert!(RunConfig::from_toml("[model]\nnum_classes = 300\n").is_err());
    }

    /// Every key emitted by the default config is documented, and the
    /// documented default matches the serialized one.
    #[test]
    fn help_table_covers_every_key() {
        let value: toml::Table = toml::from_str(&RunConfig::default().to_toml()).unwrap();
        let mut seen = 0;
        for (section, table) in &value {
            for (key, v) in table.as_table().unwrap() {
                let full = format!("{section}.{key}");
                let (_, default, _) = CONFIG_KEYS
                    .iter()
                    .find(|(k, _, _)| *k == full)
                    .unwrap_or_else(|| panic!("{full} undocumented"));
                let parsed: toml::Table = toml::from_str(&format!("x = {default}")).unwrap();
                assert_eq!(&parsed["x"], v, "{full}");
                seen += 1;
            }
        }
        let optional = CONFIG_KEYS.iter().filter(|(_, d, _)| *d == "unset").count();
        assert_eq!(seen + optional, CONFIG_KEYS.len());
    }
}
